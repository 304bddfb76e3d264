#pragma once

// Overlap and surface-distance metrics for binary 3D masks.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

namespace gigp::metrics {

struct BinaryMask {
    std::array<int, 3> shape{};                   // (depth, height, width), width fastest
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // physical size per axis
    std::vector<std::uint8_t> data;               // 0 or 1

    BinaryMask() = default;
    BinaryMask(std::array<int, 3> shape, std::array<double, 3> spacing = {1.0, 1.0, 1.0});

    std::size_t size() const { return data.size(); }
    std::size_t count() const;
    bool empty_foreground() const { return count() == 0; }
    std::uint8_t& at(int z, int y, int x);
    std::uint8_t at(int z, int y, int x) const;
    void validate() const;  // positive spacing, data size matches shape
};

class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

double dice(const BinaryMask& a, const BinaryMask& b);
double jaccard(const BinaryMask& a, const BinaryMask& b);

// Foreground voxels with a background or out-of-bounds 6-neighbor.
std::vector<std::array<int, 3>> boundary_voxels(const BinaryMask& mask);

// Exact Euclidean distance (physical units) from every voxel to the nearest
// voxel flagged in `sites`; +inf everywhere when there is none.
std::vector<double> distance_transform(const BinaryMask& sites);

// Distance from each boundary voxel of `from` to the nearest boundary voxel
// of `to`, in boundary-voxel scan order.
std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to);

// Nearest-rank percentile: sorted[ceil(q/100 * n) - 1].
double nearest_rank_percentile(std::vector<double> values, double q);

// Both throw UndefinedMetricError when either mask is empty.
double hd95(const BinaryMask& a, const BinaryMask& b);
double asd(const BinaryMask& a, const BinaryMask& b);
double hausdorff(const BinaryMask& a, const BinaryMask& b);

struct MetricSet {
    double dice = 0.0;
    double jaccard = 0.0;
    std::optional<double> hd95;  // missing when a mask is empty
    std::optional<double> asd;
};

MetricSet evaluate(const BinaryMask& prediction, const BinaryMask& truth);

}  // namespace gigp::metrics
