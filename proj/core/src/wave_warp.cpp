#include "gigp/wave_warp.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <sstream>

namespace gigp::warp {

void WaveParams::validate() const {
    if (!(amplitude >= 0.0) || !std::isfinite(amplitude)) {
        throw std::invalid_argument("wave amplitude A must be finite and >= 0, got " + std::to_string(amplitude));
    }
    if (!(frequency > 0.0) || !std::isfinite(frequency)) {
        throw std::invalid_argument("wave frequency f must be finite and > 0, got " + std::to_string(frequency));
    }
    if (2.0 * std::numbers::pi * frequency * amplitude >= 1.0) {
        std::ostringstream os;
        os << "wave warp is not injective: 2*pi*f*A = " << 2.0 * std::numbers::pi * frequency * amplitude
           << " >= 1 (A=" << amplitude << ", f=" << frequency << ")";
        throw std::invalid_argument(os.str());
    }
}

std::array<double, 3> DeformationGrid::at(int z, int y, int x) const {
    const std::size_t base = ((static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x) * 3;
    return {coords[base], coords[base + 1], coords[base + 2]};
}

double normalized_coordinate(int index, int extent) {
    return extent > 1 ? -1.0 + 2.0 * index / (extent - 1) : 0.0;
}

namespace {

DeformationGrid separable_grid(const std::array<int, 3>& shape, const std::array<std::vector<double>, 3>& axis) {
    DeformationGrid grid;
    grid.shape = shape;
    grid.coords.resize(static_cast<std::size_t>(shape[0]) * shape[1] * shape[2] * 3);
    std::size_t i = 0;
    for (int z = 0; z < shape[0]; ++z) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int x = 0; x < shape[2]; ++x) {
                grid.coords[i++] = axis[0][z];
                grid.coords[i++] = axis[1][y];
                grid.coords[i++] = axis[2][x];
            }
        }
    }
    return grid;
}

void check_shape(const std::array<int, 3>& shape) {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 2) {
            throw std::invalid_argument("deformation grid extent along axis " + std::to_string(a) +
                                        " must be >= 2, got " + std::to_string(shape[a]));
        }
    }
}

// Continuous index for a normalized coordinate; snaps to integers within
// rounding noise so grids built from exact node positions sample exactly.
double to_index(double c, int extent) {
    const double clamped = std::clamp(c, -1.0, 1.0);
    const double s = (clamped + 1.0) * 0.5 * (extent - 1);
    const double r = std::round(s);
    return std::abs(s - r) < 1e-10 ? r : s;
}

}  // namespace

DeformationGrid identity_grid(const std::array<int, 3>& shape) {
    check_shape(shape);
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        for (int i = 0; i < shape[a]; ++i) axis[a].push_back(normalized_coordinate(i, shape[a]));
    }
    return separable_grid(shape, axis);
}

DeformationGrid build_wave_grid(const std::array<int, 3>& shape, const WaveParams& params) {
    params.validate();
    check_shape(shape);
    const double k = 2.0 * std::numbers::pi * params.frequency;
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        for (int i = 0; i < shape[a]; ++i) {
            const double c = normalized_coordinate(i, shape[a]);
            axis[a].push_back(params.amplitude == 0.0 ? c : c + params.amplitude * std::sin(k * c));
        }
    }
    return separable_grid(shape, axis);
}

Tensor grid_sample_trilinear(const Tensor& volume, const DeformationGrid& grid) {
    if (volume.rank() != 5) throw ShapeError("grid_sample_trilinear: volume must be rank 5, got " + shape_str(volume.shape()));
    const std::array<int, 3> ext{volume.dim(2), volume.dim(3), volume.dim(4)};
    if (ext != grid.shape) {
        throw ShapeError("grid_sample_trilinear: grid shape " + shape_str({grid.shape[0], grid.shape[1], grid.shape[2]}) +
                         " does not match volume spatial shape " + shape_str({ext[0], ext[1], ext[2]}));
    }
    const std::size_t vox = static_cast<std::size_t>(ext[0]) * ext[1] * ext[2];

    // Eight (offset, weight) taps per output voxel, shared by all planes.
    auto taps_index = std::make_shared<std::vector<std::size_t>>(vox * 8);
    auto taps_weight = std::make_shared<std::vector<double>>(vox * 8);
    for (std::size_t v = 0; v < vox; ++v) {
        std::array<int, 3> lo{};
        std::array<int, 3> hi{};
        std::array<double, 3> fr{};
        for (int a = 0; a < 3; ++a) {
            const double s = to_index(grid.coords[v * 3 + a], ext[a]);
            int l = static_cast<int>(std::floor(s));
            l = std::clamp(l, 0, std::max(ext[a] - 2, 0));
            lo[a] = l;
            hi[a] = std::min(l + 1, ext[a] - 1);
            fr[a] = s - l;
        }
        for (int corner = 0; corner < 8; ++corner) {
            const int bz = (corner >> 2) & 1;
            const int by = (corner >> 1) & 1;
            const int bx = corner & 1;
            const int z = bz ? hi[0] : lo[0];
            const int y = by ? hi[1] : lo[1];
            const int x = bx ? hi[2] : lo[2];
            const double w = (bz ? fr[0] : 1 - fr[0]) * (by ? fr[1] : 1 - fr[1]) * (bx ? fr[2] : 1 - fr[2]);
            (*taps_index)[v * 8 + corner] = (static_cast<std::size_t>(z) * ext[1] + y) * ext[2] + x;
            (*taps_weight)[v * 8 + corner] = w;
        }
    }

    const int planes = volume.dim(0) * volume.dim(1);
    const auto xv = volume.values();
    std::vector<double> out(static_cast<std::size_t>(planes) * vox, 0.0);
    for (int p = 0; p < planes; ++p) {
        const double* src = xv.data() + p * vox;
        double* dst = out.data() + p * vox;
        for (std::size_t v = 0; v < vox; ++v) {
            double acc = 0.0;
            for (int c = 0; c < 8; ++c) acc += (*taps_weight)[v * 8 + c] * src[(*taps_index)[v * 8 + c]];
            dst[v] = acc;
        }
    }
    return make_result(volume.shape(), std::move(out), {volume},
                       [volume, taps_index, taps_weight, planes, vox](std::span<const double> g) {
                           auto gx = Tensor(volume).grad_mut();
                           if (gx.empty()) return;
                           for (int p = 0; p < planes; ++p) {
                               double* dst = gx.data() + p * vox;
                               const double* go = g.data() + p * vox;
                               for (std::size_t v = 0; v < vox; ++v) {
                                   for (int c = 0; c < 8; ++c) {
                                       dst[(*taps_index)[v * 8 + c]] += (*taps_weight)[v * 8 + c] * go[v];
                                   }
                               }
                           }
                       });
}

Tensor apply_ggpc(const Tensor& batch, const WaveParams& params) {
    if (batch.rank() != 5) throw ShapeError("apply_ggpc: batch must be rank 5, got " + shape_str(batch.shape()));
    const DeformationGrid grid = build_wave_grid({batch.dim(2), batch.dim(3), batch.dim(4)}, params);
    return grid_sample_trilinear(batch, grid);
}

}  // namespace gigp::warp
