#pragma once

// In-memory volumes, the on-disk volume format, splits and augmentation.
//
// File layout: one UTF-8 JSON header line
//   {"magic":"GIGPVOL1","dims":[nx,ny,nz],"spacing":[sx,sy,sz],"has_label":b,"id":"..."}
// then nx*ny*nz little-endian float32 intensities (x fastest), then the same
// number of label bytes when has_label is true.

#include "gigp/metrics.hpp"
#include "gigp/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace gigp::data {

inline constexpr char kVolumeMagic[] = "GIGPVOL1";

struct Volume {
    std::array<int, 3> dims{};  // (nx, ny, nz), x fastest
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<double> intensities;
    std::optional<std::vector<std::uint8_t>> label;
    std::string id;

    std::size_t voxels() const;
    std::size_t offset(int x, int y, int z) const;
    void validate() const;

    // [1, 1, nz, ny, nx]
    Tensor to_tensor() const;
    // Mask of shape (nz, ny, nx) with spacing (sz, sy, sx). Throws without a label.
    metrics::BinaryMask label_mask() const;
};

class VolumeFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Zero mean, unit variance; a constant volume becomes all zeros.
void normalize_intensities(Volume& volume);

void save_volume(const Volume& volume, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);
std::string encode_volume(const Volume& volume);
Volume decode_volume(const std::string& bytes);

struct SplitSizes {
    int train = 40;
    int validation = 8;
    int test = 12;
};

struct DatasetSplit {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
    std::vector<std::size_t> validation;
    std::vector<std::size_t> test;
    std::string warning;  // non-empty when the unlabeled set is empty
};

// Deterministic shuffled split of `total` volume indices.
DatasetSplit split_dataset(std::size_t total, const SplitSizes& sizes, int num_labeled, std::uint64_t seed);

struct AugmentOptions {
    std::array<int, 3> crop{24, 24, 24};  // (nx, ny, nz)
    bool flips = true;
    bool rotations = true;
    double scale_jitter = 0.1;
};

struct AugmentDraw {
    std::array<bool, 3> flip{false, false, false};  // per axis x, y, z
    int rotation_plane = -1;                        // -1 none, else the axis left fixed
    int quarter_turns = 0;
    double scale = 1.0;
    std::array<int, 3> crop_origin{0, 0, 0};
};

AugmentDraw draw_augment(const Volume& volume, const AugmentOptions& options, std::mt19937_64& rng);
AugmentDraw identity_draw(const Volume& volume, const AugmentOptions& options);  // centered crop

// Same geometric transform for intensities and label. Scaling zooms about the
// volume center (trilinear, border clamp); labels are resampled the same way
// and thresholded at 0.5.
Volume apply_augment(const Volume& volume, const AugmentDraw& draw, const AugmentOptions& options);
Volume augment(const Volume& volume, const AugmentOptions& options, std::mt19937_64& rng);

Volume flip(const Volume& volume, int axis);
// Quarter turns in the plane of the two axes other than `fixed_axis`; those
// extents must agree.
Volume rotate90(const Volume& volume, int fixed_axis, int quarter_turns);

// Number of 6-connected foreground components of a mask.
int connected_components(const metrics::BinaryMask& mask);

}  // namespace gigp::data
