#include "gigp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace gigp::metrics {

namespace {

void require_same(const BinaryMask& a, const BinaryMask& b, const char* what) {
    a.validate();
    b.validate();
    if (a.shape != b.shape) {
        throw std::invalid_argument(std::string(what) + ": mask shapes differ (" + std::to_string(a.shape[0]) + "x" +
                                    std::to_string(a.shape[1]) + "x" + std::to_string(a.shape[2]) + " vs " +
                                    std::to_string(b.shape[0]) + "x" + std::to_string(b.shape[1]) + "x" +
                                    std::to_string(b.shape[2]) + ")");
    }
}

std::pair<std::size_t, std::size_t> intersection_and_sizes(const BinaryMask& a, const BinaryMask& b,
                                                           std::size_t& sum_sizes) {
    std::size_t inter = 0;
    std::size_t uni = 0;
    sum_sizes = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] != 0;
        const bool y = b.data[i] != 0;
        inter += x && y;
        uni += x || y;
        sum_sizes += static_cast<std::size_t>(x) + static_cast<std::size_t>(y);
    }
    return {inter, uni};
}

// Squared distance transform of a 1D sampled function with squared spacing
// h2 (lower envelope of parabolas). f uses +inf for "no site".
void edt_1d(const double* f, double* out, int n, double h2, std::vector<int>& v, std::vector<double>& z) {
    const double inf = std::numeric_limits<double>::infinity();
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == inf) continue;
        double s = -inf;
        while (k >= 0) {
            const int p = v[k];
            s = ((f[q] + h2 * q * q) - (f[p] + h2 * p * p)) / (2.0 * h2 * (q - p));
            if (s <= z[k]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[k] = q;
        z[k] = k == 0 ? -inf : s;
        z[k + 1] = inf;
    }
    if (k < 0) {
        std::fill(out, out + n, inf);
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (z[j + 1] < q) ++j;
        const double d = q - v[j];
        out[q] = h2 * d * d + f[v[j]];
    }
}

}  // namespace

BinaryMask::BinaryMask(std::array<int, 3> shape_, std::array<double, 3> spacing_)
    : shape(shape_), spacing(spacing_), data(static_cast<std::size_t>(shape_[0]) * shape_[1] * shape_[2], 0) {}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

std::uint8_t& BinaryMask::at(int z, int y, int x) {
    return data[(static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x];
}

std::uint8_t BinaryMask::at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * shape[1] + y) * shape[2] + x];
}

void BinaryMask::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (shape[a] < 1) throw std::invalid_argument("mask extent along axis " + std::to_string(a) + " must be >= 1");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw std::invalid_argument("mask spacing along axis " + std::to_string(a) + " must be positive, got " +
                                        std::to_string(spacing[a]));
        }
    }
    if (data.size() != static_cast<std::size_t>(shape[0]) * shape[1] * shape[2]) {
        throw std::invalid_argument("mask data length does not match its shape");
    }
}

double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same(a, b, "dice");
    std::size_t sizes = 0;
    const auto [inter, uni] = intersection_and_sizes(a, b, sizes);
    (void)uni;
    if (sizes == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sizes);
}

double jaccard(const BinaryMask& a, const BinaryMask& b) {
    require_same(a, b, "jaccard");
    std::size_t sizes = 0;
    const auto [inter, uni] = intersection_and_sizes(a, b, sizes);
    if (uni == 0) return 1.0;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<std::array<int, 3>> boundary_voxels(const BinaryMask& mask) {
    mask.validate();
    std::vector<std::array<int, 3>> out;
    const auto& s = mask.shape;
    static constexpr int kOffsets[6][3] = {{-1, 0, 0}, {1, 0, 0}, {0, -1, 0}, {0, 1, 0}, {0, 0, -1}, {0, 0, 1}};
    for (int z = 0; z < s[0]; ++z) {
        for (int y = 0; y < s[1]; ++y) {
            for (int x = 0; x < s[2]; ++x) {
                if (!mask.at(z, y, x)) continue;
                bool edge = false;
                for (const auto& o : kOffsets) {
                    const int nz = z + o[0];
                    const int ny = y + o[1];
                    const int nx = x + o[2];
                    if (nz < 0 || ny < 0 || nx < 0 || nz >= s[0] || ny >= s[1] || nx >= s[2] || !mask.at(nz, ny, nx)) {
                        edge = true;
                        break;
                    }
                }
                if (edge) out.push_back({z, y, x});
            }
        }
    }
    return out;
}

std::vector<double> distance_transform(const BinaryMask& sites) {
    sites.validate();
    const auto& s = sites.shape;
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(sites.size());
    for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = sites.data[i] ? 0.0 : inf;

    const int longest = std::max({s[0], s[1], s[2]});
    std::vector<double> line(longest);
    std::vector<double> result(longest);
    std::vector<int> v(longest);
    std::vector<double> z(longest + 1);
    const std::array<std::size_t, 3> stride{static_cast<std::size_t>(s[1]) * s[2], static_cast<std::size_t>(s[2]), 1};

    for (int axis = 2; axis >= 0; --axis) {
        const int n = s[axis];
        const double h2 = sites.spacing[axis] * sites.spacing[axis];
        const int o1 = axis == 0 ? 1 : 0;
        const int o2 = axis == 2 ? 1 : 2;
        for (int i = 0; i < s[o1]; ++i) {
            for (int j = 0; j < s[o2]; ++j) {
                const std::size_t base = i * stride[o1] + j * stride[o2];
                for (int q = 0; q < n; ++q) line[q] = dist[base + q * stride[axis]];
                edt_1d(line.data(), result.data(), n, h2, v, z);
                for (int q = 0; q < n; ++q) dist[base + q * stride[axis]] = result[q];
            }
        }
    }
    for (double& d : dist) d = std::sqrt(d);
    return dist;
}

std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to) {
    require_same(from, to, "surface distance");
    BinaryMask target_surface(to.shape, to.spacing);
    for (const auto& p : boundary_voxels(to)) target_surface.at(p[0], p[1], p[2]) = 1;
    const std::vector<double> dt = distance_transform(target_surface);
    std::vector<double> out;
    for (const auto& p : boundary_voxels(from)) {
        out.push_back(dt[(static_cast<std::size_t>(p[0]) * from.shape[1] + p[1]) * from.shape[2] + p[2]]);
    }
    return out;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
    if (values.empty()) throw UndefinedMetricError("percentile of an empty set");
    std::sort(values.begin(), values.end());
    const double rank = std::ceil(q / 100.0 * static_cast<double>(values.size()));
    const std::size_t index = static_cast<std::size_t>(std::clamp(rank, 1.0, static_cast<double>(values.size()))) - 1;
    return values[index];
}

namespace {

void require_nonempty(const BinaryMask& a, const BinaryMask& b, const char* what) {
    if (a.empty_foreground() || b.empty_foreground()) {
        throw UndefinedMetricError(std::string(what) + " is undefined for an empty mask");
    }
}

}  // namespace

double hd95(const BinaryMask& a, const BinaryMask& b) {
    require_same(a, b, "hd95");
    require_nonempty(a, b, "hd95");
    return std::max(nearest_rank_percentile(directed_surface_distances(a, b), 95.0),
                    nearest_rank_percentile(directed_surface_distances(b, a), 95.0));
}

double asd(const BinaryMask& a, const BinaryMask& b) {
    require_same(a, b, "asd");
    require_nonempty(a, b, "asd");
    const auto ab = directed_surface_distances(a, b);
    const auto ba = directed_surface_distances(b, a);
    const double total = std::accumulate(ab.begin(), ab.end(), 0.0) + std::accumulate(ba.begin(), ba.end(), 0.0);
    return total / static_cast<double>(ab.size() + ba.size());
}

double hausdorff(const BinaryMask& a, const BinaryMask& b) {
    require_same(a, b, "hausdorff");
    require_nonempty(a, b, "hausdorff");
    const auto ab = directed_surface_distances(a, b);
    const auto ba = directed_surface_distances(b, a);
    return std::max(*std::max_element(ab.begin(), ab.end()), *std::max_element(ba.begin(), ba.end()));
}

MetricSet evaluate(const BinaryMask& prediction, const BinaryMask& truth) {
    MetricSet m;
    m.dice = dice(prediction, truth);
    m.jaccard = jaccard(prediction, truth);
    if (!prediction.empty_foreground() && !truth.empty_foreground()) {
        m.hd95 = hd95(prediction, truth);
        m.asd = asd(prediction, truth);
    }
    return m;
}

}  // namespace gigp::metrics
