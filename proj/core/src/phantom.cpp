#include "gigp/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp::data {

namespace {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<Vec3, 3>;

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    double w = n(rng), x = n(rng), y = n(rng), z = n(rng);
    const double len = std::sqrt(w * w + x * x + y * y + z * z);
    w /= len;
    x /= len;
    y /= len;
    z /= len;
    return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
             {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
             {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

Vec3 random_direction(std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v{n(rng), n(rng), n(rng)};
    const double len = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    for (double& c : v) c /= len;
    return v;
}

struct Shape {
    Vec3 center{};
    Vec3 axes{};
    Mat3 rotation{};
    std::vector<Vec3> bump_dirs;
    std::vector<double> bump_amps;
    double magnitude = 0.0;

    // Ratio r / rho of the scaled radius to the bumped boundary radius along
    // the same direction; inside iff <= 1.
    double level(const Vec3& p) const {
        Vec3 d{p[0] - center[0], p[1] - center[1], p[2] - center[2]};
        Vec3 local{};
        for (int i = 0; i < 3; ++i) local[i] = rotation[0][i] * d[0] + rotation[1][i] * d[1] + rotation[2][i] * d[2];
        Vec3 q{local[0] / axes[0], local[1] / axes[1], local[2] / axes[2]};
        const double r = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2]);
        if (r == 0.0) return 0.0;
        double bumps = 0.0;
        for (std::size_t j = 0; j < bump_dirs.size(); ++j) {
            const double cosang = (q[0] * bump_dirs[j][0] + q[1] * bump_dirs[j][1] + q[2] * bump_dirs[j][2]) / r;
            bumps += bump_amps[j] * std::exp(4.0 * (cosang - 1.0));
        }
        return r / (1.0 + magnitude * std::tanh(bumps));
    }
};

Shape random_shape(const PhantomSpec& spec, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Shape s;
    for (double& a : s.axes) a = spec.semi_axis_min + (spec.semi_axis_max - spec.semi_axis_min) * unit(rng);
    s.rotation = random_rotation(rng);
    const double reach = *std::max_element(s.axes.begin(), s.axes.end()) * (1.0 + spec.bump_magnitude);
    for (int a = 0; a < 3; ++a) {
        const double lo = 2.0 + reach;
        const double hi = spec.grid[a] - 1 - 2.0 - reach;
        s.center[a] = hi > lo ? lo + (hi - lo) * unit(rng) : 0.5 * (spec.grid[a] - 1);
    }
    for (int j = 0; j < spec.bump_count; ++j) {
        s.bump_dirs.push_back(random_direction(rng));
        s.bump_amps.push_back(1.5 * (2.0 * unit(rng) - 1.0));
    }
    s.magnitude = spec.bump_magnitude;
    return s;
}

void box_smooth(std::vector<double>& f, const std::array<int, 3>& d) {
    std::vector<double> tmp(f.size());
    const std::array<std::size_t, 3> stride{1, static_cast<std::size_t>(d[0]),
                                            static_cast<std::size_t>(d[0]) * d[1]};
    for (int axis = 0; axis < 3; ++axis) {
        std::size_t i = 0;
        for (int z = 0; z < d[2]; ++z) {
            for (int y = 0; y < d[1]; ++y) {
                for (int x = 0; x < d[0]; ++x, ++i) {
                    const std::array<int, 3> c{x, y, z};
                    double acc = f[i];
                    int cnt = 1;
                    if (c[axis] > 0) {
                        acc += f[i - stride[axis]];
                        ++cnt;
                    }
                    if (c[axis] < d[axis] - 1) {
                        acc += f[i + stride[axis]];
                        ++cnt;
                    }
                    tmp[i] = acc / cnt;
                }
            }
        }
        f.swap(tmp);
    }
}

}  // namespace

void PhantomSpec::validate() const {
    if (!(semi_axis_min > 0.0) || semi_axis_max < semi_axis_min) {
        throw std::invalid_argument("phantom semi-axis range must satisfy 0 < min <= max");
    }
    if (bump_magnitude < 0.0 || bump_count < 0 || bump_magnitude >= 0.9) {
        throw std::invalid_argument("phantom bumps need bump_count >= 0 and 0 <= bump_magnitude < 0.9");
    }
    if (noise < 0.0 || distractors < 0 || distractor_radius <= 0.0 || contrast_jitter < 0.0 || contrast_jitter >= 1.0) {
        throw std::invalid_argument("phantom noise, distractor and jitter settings out of range");
    }
    const double reach = semi_axis_max * (1.0 + bump_magnitude);
    for (int a = 0; a < 3; ++a) {
        if (2.0 * reach + 4.0 > grid[a] - 1) {
            throw std::invalid_argument("phantom semi-axes up to " + std::to_string(reach) +
                                        " voxels (bumps included) do not fit grid extent " + std::to_string(grid[a]) +
                                        " with a 2-voxel margin");
        }
    }
}

Phantom generate_phantom(const PhantomSpec& spec, std::mt19937_64& rng, const std::string& id) {
    spec.validate();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Shape shape = random_shape(spec, rng);

    Phantom out;
    out.semi_axes = shape.axes;
    out.center = shape.center;
    Volume& v = out.volume;
    v.dims = spec.grid;
    v.id = id;
    const std::size_t n = v.voxels();
    v.intensities.assign(n, 0.0);
    v.label.emplace(n, 0);

    const double fg = spec.contrast * (1.0 + spec.contrast_jitter * (2.0 * unit(rng) - 1.0));
    std::size_t i = 0;
    for (int z = 0; z < spec.grid[2]; ++z) {
        for (int y = 0; y < spec.grid[1]; ++y) {
            for (int x = 0; x < spec.grid[0]; ++x, ++i) {
                if (shape.level({double(x), double(y), double(z)}) <= 1.0) {
                    (*v.label)[i] = 1;
                    v.intensities[i] = fg;
                }
            }
        }
    }

    for (int k = 0; k < spec.distractors; ++k) {
        Vec3 c{};
        for (int attempt = 0; attempt < 50; ++attempt) {
            for (int a = 0; a < 3; ++a) c[a] = spec.distractor_radius + unit(rng) * (spec.grid[a] - 1 - 2 * spec.distractor_radius);
            if (shape.level(c) > 1.6) break;
        }
        const double r2 = spec.distractor_radius * spec.distractor_radius;
        const double amp = spec.distractor_contrast * (1.0 + spec.contrast_jitter * (2.0 * unit(rng) - 1.0));
        i = 0;
        for (int z = 0; z < spec.grid[2]; ++z) {
            for (int y = 0; y < spec.grid[1]; ++y) {
                for (int x = 0; x < spec.grid[0]; ++x, ++i) {
                    const double d2 = (x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]);
                    if (d2 <= r2 && !(*v.label)[i]) v.intensities[i] = std::max(v.intensities[i], amp);
                }
            }
        }
    }

    std::vector<double> noise(n);
    for (double& e : noise) e = gauss(rng);
    box_smooth(noise, spec.grid);
    // A 3-tap box pass per axis leaves about 0.19 of the white-noise std.
    const double noise_gain = spec.noise / 0.19245;
    const Vec3 ramp = random_direction(rng);
    i = 0;
    for (int z = 0; z < spec.grid[2]; ++z) {
        for (int y = 0; y < spec.grid[1]; ++y) {
            for (int x = 0; x < spec.grid[0]; ++x, ++i) {
                const std::array<double, 3> c{x / std::max(1.0, spec.grid[0] - 1.0) - 0.5,
                                              y / std::max(1.0, spec.grid[1] - 1.0) - 0.5,
                                              z / std::max(1.0, spec.grid[2] - 1.0) - 0.5};
                const double bias = 2.0 * spec.bias_field * (ramp[0] * c[0] + ramp[1] * c[1] + ramp[2] * c[2]);
                v.intensities[i] += bias + noise_gain * noise[i];
            }
        }
    }
    normalize_intensities(v);
    return out;
}

Tensor smooth_phantom_field(const PhantomSpec& spec, std::mt19937_64& rng) {
    spec.validate();
    const Shape shape = random_shape(spec, rng);
    const double mean_axis = (shape.axes[0] + shape.axes[1] + shape.axes[2]) / 3.0;
    const int nx = spec.grid[0];
    const int ny = spec.grid[1];
    const int nz = spec.grid[2];
    std::vector<double> values(static_cast<std::size_t>(nx) * ny * nz);
    std::size_t i = 0;
    for (int z = 0; z < nz; ++z) {
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx; ++x, ++i) {
                const double s = (1.0 - shape.level({double(x), double(y), double(z)})) * mean_axis / 1.5;
                values[i] = 1.0 / (1.0 + std::exp(-s));
            }
        }
    }
    return Tensor::from_values({1, 1, nz, ny, nx}, std::move(values));
}

}  // namespace gigp::data
