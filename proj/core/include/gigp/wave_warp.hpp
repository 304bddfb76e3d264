#pragma once

// Sine-wave geometric perturbation: every normalized coordinate c in [-1,1]
// is displaced to c + A sin(2 pi f c) independently per axis, and volumes are
// resampled through the resulting grid with trilinear interpolation.

#include "gigp/tensor.hpp"

#include <array>
#include <vector>

namespace gigp::warp {

struct WaveParams {
    double amplitude = 0.05;  // normalized-coordinate units
    double frequency = 2.0;   // cycles per unit of normalized coordinate

    // Throws unless A >= 0, f > 0 and 2 pi f A < 1 (per-axis map stays injective).
    void validate() const;
};

// Target coordinates in normalized space, layout [D,H,W,3]; component a of
// a voxel is its coordinate along spatial axis a (depth, height, width).
struct DeformationGrid {
    std::array<int, 3> shape{};
    std::vector<double> coords;

    std::array<double, 3> at(int z, int y, int x) const;
};

double normalized_coordinate(int index, int extent);

DeformationGrid identity_grid(const std::array<int, 3>& shape);
DeformationGrid build_wave_grid(const std::array<int, 3>& shape, const WaveParams& params);

// volume: [B,C,D,H,W] whose spatial shape equals the grid's. Align-corners
// convention; coordinates outside [-1,1] clamp to the border. Differentiable
// with respect to the volume only.
Tensor grid_sample_trilinear(const Tensor& volume, const DeformationGrid& grid);

// Resamples every sample of the batch through one wave grid.
Tensor apply_ggpc(const Tensor& batch, const WaveParams& params);

}  // namespace gigp::warp
