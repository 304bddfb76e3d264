#include "gigp/wave_warp.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace gigp;
using namespace gigp::warp;

TEST(WaveGrid, DisplacesByTheSineTerm) {
    const auto g = build_wave_grid({9, 9, 9}, {0.1, 1.0});
    // Index 5 of 9 sits at normalized coordinate 0.25.
    EXPECT_DOUBLE_EQ(normalized_coordinate(5, 9), 0.25);
    const auto c = g.at(5, 5, 5);
    for (double v : c) EXPECT_NEAR(v, 0.35, 1e-15);
}

TEST(WaveGrid, ZeroAmplitudeIsIdentity) {
    const auto g = build_wave_grid({4, 5, 6}, {0.0, 3.0});
    const auto id = identity_grid({4, 5, 6});
    EXPECT_EQ(g.coords, id.coords);
}

TEST(WaveGrid, RejectsFoldingParameters) {
    EXPECT_THROW((WaveParams{0.2, 1.0}).validate(), std::invalid_argument);  // 2 pi f A > 1
    EXPECT_THROW((WaveParams{-0.01, 1.0}).validate(), std::invalid_argument);
    EXPECT_THROW((WaveParams{0.01, 0.0}).validate(), std::invalid_argument);
    EXPECT_NO_THROW((WaveParams{0.05, 2.0}).validate());
}

TEST(GridSample, OutOfRangeCoordinateClampsToBorder) {
    std::vector<double> v(4 * 4 * 4);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
    const Tensor vol = Tensor::from_values({1, 1, 4, 4, 4}, v);
    DeformationGrid g = identity_grid({4, 4, 4});
    // Push every depth coordinate to 1.5: samples read the last depth slice.
    for (std::size_t i = 0; i < g.coords.size(); i += 3) g.coords[i] = 1.5;
    const Tensor out = grid_sample_trilinear(vol, g);
    for (int z = 0; z < 4; ++z)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(out.values()[(z * 4 + y) * 4 + x], v[(3 * 4 + y) * 4 + x]);
}

TEST(GridSample, IdentityGridReproducesVolume) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> v(2 * 3 * 5 * 4 * 6);
    for (double& x : v) x = d(rng);
    const Tensor vol = Tensor::from_values({2, 3, 5, 4, 6}, v);
    const Tensor out = grid_sample_trilinear(vol, identity_grid({5, 4, 6}));
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(out.values()[i], v[i], 1e-15);
}

TEST(Ggpc, GaussianBlobMassPreserved) {
    const int n = 32;
    std::vector<double> v(n * n * n);
    double mass = 0.0;
    for (int z = 0; z < n; ++z)
        for (int y = 0; y < n; ++y)
            for (int x = 0; x < n; ++x) {
                const double r2 = std::pow(z - 15.5, 2) + std::pow(y - 15.5, 2) + std::pow(x - 15.5, 2);
                v[(z * n + y) * n + x] = std::exp(-r2 / (2 * 16.0));
                mass += v[(z * n + y) * n + x];
            }
    const Tensor out = apply_ggpc(Tensor::from_values({1, 1, n, n, n}, v), {0.05, 2.0});
    double warped = 0.0;
    for (double x : out.values()) warped += x;
    EXPECT_LT(std::abs(warped - mass) / mass, 0.01);
}

TEST(Ggpc, DisplacementNeverExceedsAmplitude) {
    const WaveParams p{0.07, 2.1};
    const auto g = build_wave_grid({7, 11, 13}, p);
    const auto id = identity_grid({7, 11, 13});
    for (std::size_t i = 0; i < g.coords.size(); ++i) EXPECT_LE(std::abs(g.coords[i] - id.coords[i]), p.amplitude + 4e-16);
}
