#include "gigp/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace gigp::metrics;

TEST(Overlap, HalfOverlapPair) {
    BinaryMask a({1, 1, 3});
    BinaryMask b({1, 1, 3});
    a.at(0, 0, 0) = a.at(0, 0, 1) = 1;
    b.at(0, 0, 1) = b.at(0, 0, 2) = 1;
    EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
    EXPECT_DOUBLE_EQ(jaccard(a, b), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(jaccard(a, b), dice(a, b) / (2.0 - dice(a, b)));
}

TEST(Overlap, EmptyMasks) {
    BinaryMask a({2, 2, 2});
    BinaryMask b({2, 2, 2});
    EXPECT_EQ(dice(a, b), 1.0);
    b.at(1, 1, 1) = 1;
    EXPECT_EQ(dice(a, b), 0.0);
    EXPECT_THROW(hd95(a, b), UndefinedMetricError);
    EXPECT_THROW(asd(a, b), UndefinedMetricError);
}

TEST(Overlap, ShapeMismatchRejected) {
    EXPECT_THROW(dice(BinaryMask({2, 2, 2}), BinaryMask({2, 2, 3})), std::invalid_argument);
}

TEST(SurfaceDistance, SingleVoxelsThreeApart) {
    BinaryMask a({1, 1, 5});
    BinaryMask b({1, 1, 5});
    a.at(0, 0, 0) = 1;
    b.at(0, 0, 3) = 1;
    EXPECT_DOUBLE_EQ(hd95(a, b), 3.0);
    EXPECT_DOUBLE_EQ(hausdorff(a, b), 3.0);
    EXPECT_DOUBLE_EQ(asd(a, b), 3.0);
}

TEST(SurfaceDistance, PercentileExcludesOneOutlierOfTwenty) {
    std::vector<double> v(19, 1.0);
    v.push_back(10.0);
    EXPECT_EQ(nearest_rank_percentile(v, 95.0), 1.0);
    EXPECT_EQ(nearest_rank_percentile(v, 100.0), 10.0);
}

TEST(SurfaceDistance, ParallelPlatesTwoApart) {
    BinaryMask a({5, 4, 4});
    BinaryMask b({5, 4, 4});
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            a.at(1, y, x) = 1;
            b.at(3, y, x) = 1;
        }
    EXPECT_DOUBLE_EQ(hd95(a, b), 2.0);
    EXPECT_DOUBLE_EQ(asd(a, b), 2.0);
}

TEST(SurfaceDistance, AnisotropicSpacing) {
    BinaryMask a({3, 1, 1}, {2.5, 1.0, 1.0});
    BinaryMask b({3, 1, 1}, {2.5, 1.0, 1.0});
    a.at(0, 0, 0) = 1;
    b.at(2, 0, 0) = 1;
    EXPECT_DOUBLE_EQ(hd95(a, b), 5.0);
}

TEST(SurfaceDistance, IdenticalMasksAreZero) {
    BinaryMask a({6, 6, 6});
    for (int z = 1; z < 5; ++z)
        for (int y = 2; y < 5; ++y) a.at(z, y, 3) = 1;
    const auto m = evaluate(a, a);
    EXPECT_EQ(m.dice, 1.0);
    EXPECT_EQ(m.jaccard, 1.0);
    EXPECT_EQ(*m.hd95, 0.0);
    EXPECT_EQ(*m.asd, 0.0);
}

TEST(Boundary, SolidCubeInteriorExcluded) {
    BinaryMask a({5, 5, 5});
    for (int z = 1; z < 4; ++z)
        for (int y = 1; y < 4; ++y)
            for (int x = 1; x < 4; ++x) a.at(z, y, x) = 1;
    EXPECT_EQ(boundary_voxels(a).size(), 26u);
}

TEST(DistanceTransform, MatchesBruteForce) {
    std::mt19937_64 rng(1);
    std::bernoulli_distribution site(0.05);
    BinaryMask s({7, 9, 6}, {1.0, 0.7, 1.6});
    for (auto& v : s.data) v = site(rng);
    s.at(3, 3, 3) = 1;
    const auto dt = distance_transform(s);
    std::size_t i = 0;
    for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 9; ++y)
            for (int x = 0; x < 6; ++x, ++i) {
                double best = std::numeric_limits<double>::infinity();
                for (int zz = 0; zz < 7; ++zz)
                    for (int yy = 0; yy < 9; ++yy)
                        for (int xx = 0; xx < 6; ++xx) {
                            if (!s.at(zz, yy, xx)) continue;
                            best = std::min(best, std::hypot((z - zz) * 1.0, (y - yy) * 0.7, (x - xx) * 1.6));
                        }
                EXPECT_NEAR(dt[i], best, 1e-12);
            }
}

TEST(DistanceTransform, NoSitesIsInfinite) {
    const auto dt = distance_transform(BinaryMask({2, 3, 2}));
    for (double d : dt) EXPECT_TRUE(std::isinf(d));
}
