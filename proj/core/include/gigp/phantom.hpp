#pragma once

// Synthetic organ-like phantoms: a randomly oriented ellipsoid whose radius is
// modulated by a few smooth bumps, brighter than the background, seen through
// a smooth bias field, smoothed texture noise and small bright distractor blobs
// that carry no label.

#include "gigp/tensor.hpp"
#include "gigp/volume.hpp"

#include <array>
#include <random>

namespace gigp::data {

struct PhantomSpec {
    std::array<int, 3> grid{24, 24, 24};  // (nx, ny, nz)
    double semi_axis_min = 4.0;
    double semi_axis_max = 7.0;
    double bump_magnitude = 0.2;  // bound on the relative radial modulation
    int bump_count = 3;
    double contrast = 1.0;         // foreground minus background intensity
    double contrast_jitter = 0.3;  // relative, uniform
    double noise = 0.5;            // texture noise standard deviation
    double bias_field = 0.3;       // peak amplitude of a linear intensity ramp
    int distractors = 2;
    double distractor_radius = 2.5;
    double distractor_contrast = 1.0;

    // Throws unless the largest bumped semi-axis fits with a 2-voxel margin.
    void validate() const;
};

struct Phantom {
    Volume volume;  // normalized intensities and the exact label
    std::array<double, 3> semi_axes{};
    std::array<double, 3> center{};
};

Phantom generate_phantom(const PhantomSpec& spec, std::mt19937_64& rng, const std::string& id = "phantom");

// Noise-free soft indicator (values in (0,1)) of a random bumped ellipsoid,
// as a [1,1,nz,ny,nx] tensor.
Tensor smooth_phantom_field(const PhantomSpec& spec, std::mt19937_64& rng);

}  // namespace gigp::data
