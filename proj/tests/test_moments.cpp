#include "gigp/moments.hpp"
#include "gigp/selfcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gigp;
using namespace gigp::moments;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from_values(shape, v);
}

MomentVector fixed(std::array<double, 6> v) {
    MomentVector m;
    m.values = Tensor::from_values({6}, std::vector<double>(v.begin(), v.end()));
    m.mass = 1.0;
    return m;
}

struct FaultScope {
    FaultScope() { faults::set_msgc_sign_fault(true); }
    ~FaultScope() { faults::set_msgc_sign_fault(false); }
};

}  // namespace

TEST(DirectionalMoments, OnesCubeAlongH) {
    const Tensor f = Tensor::full({1, 1, 3, 3, 3}, 1.0);
    const auto maps = directional_moments(f, Axis::h);
    const Tensor& m200 = maps.maps[moment_slot({2, 0, 0})];
    ASSERT_EQ(m200.shape(), (Shape{1, 1, 1, 3, 3}));
    for (double v : m200.values()) EXPECT_EQ(v, 2.0);
    const Tensor& m020 = maps.maps[moment_slot({0, 2, 0})];
    for (int y = 0; y < 3; ++y)
        for (int z = 0; z < 3; ++z) EXPECT_EQ(m020.values()[y * 3 + z], 3.0 * (y - 1) * (y - 1));
}

TEST(DirectionalMoments, StackMatchesDirectSums) {
    const Tensor f = random_tensor({2, 2, 4, 3, 5}, 1);
    const int H = 4, W = 3, L = 5;
    for (int a = 0; a < 3; ++a) {
        const Tensor s = directional_moment_stack(f, static_cast<Axis>(a));
        for (int t = 0; t < 6; ++t) {
            const auto& m = kSecondOrder[t];
            for (int b = 0; b < 2; ++b)
                for (int c = 0; c < 2; ++c) {
                    // Output index over the two kept axes in order.
                    std::vector<double> expect;
                    const std::array<int, 3> ext{H, W, L};
                    std::array<int, 3> idx{};
                    int k0 = a == 0 ? 1 : 0, k1 = a == 2 ? 1 : 2;
                    for (idx[k0] = 0; idx[k0] < ext[k0]; ++idx[k0])
                        for (idx[k1] = 0; idx[k1] < ext[k1]; ++idx[k1]) {
                            double acc = 0.0;
                            for (idx[a] = 0; idx[a] < ext[a]; ++idx[a]) {
                                const double v = f.values()[(((b * 2 + c) * H + idx[0]) * W + idx[1]) * L + idx[2]];
                                acc += v * std::pow(idx[0] - 1.5, m.p) * std::pow(idx[1] - 1.0, m.q) *
                                       std::pow(idx[2] - 2.0, m.r);
                            }
                            expect.push_back(acc);
                        }
                    const std::size_t per = expect.size();
                    for (std::size_t i = 0; i < per; ++i) {
                        EXPECT_NEAR(s.values()[((b * 12 + t * 2 + c) * per) + i], expect[i], 1e-12);
                    }
                }
        }
    }
}

TEST(NormalizedMoments, ConstantFieldIsExactlyIdentity) {
    for (int n : {3, 8, 16, 24}) {
        const auto m = normalized_moments(Tensor::full({1, 1, n, n + 1, n + 2}, 2.5));
        const std::array<double, 6> want{1, 1, 1, 0, 0, 0};
        for (int t = 0; t < 6; ++t) EXPECT_EQ(m.values.values()[t], want[t]) << "n=" << n << " slot " << t;
    }
}

TEST(NormalizedMoments, CornerImpulseOnThreeCube) {
    Tensor f = Tensor::zeros({1, 1, 3, 3, 3});
    f.values_mut()[0] = 1.0;
    const auto m = normalized_moments(f);
    for (int t = 0; t < 6; ++t) EXPECT_NEAR(m.values.values()[t], 1.5, 1e-15);
    EXPECT_EQ(m.mass, 1.0);
}

TEST(NormalizedMoments, ZeroFieldIsDegenerate) {
    EXPECT_THROW(normalized_moments(Tensor::zeros({1, 1, 4, 4, 4})), DegenerateFieldError);
}

TEST(NormalizedMoments, ScaleInvarianceOnSmoothPhantoms) {
    EXPECT_LT(selfcheck::scale_invariance_gap(20, 32, 3), 2e-2);
}

TEST(Mvma, ZeroKernelsGiveEighthGate) {
    const int c = 2;
    const Tensor p = random_tensor({1, c, 3, 4, 2}, 2);
    MomentAttentionParams params;
    for (int a = 0; a < 3; ++a) {
        params.kernel[a] = Tensor::zeros({c, 6 * c, 1, 1, 1});
        params.bias[a] = Tensor::zeros({c});
    }
    params.lambda = Tensor::full({1}, 1.0);
    const Tensor z = mvma_attention(p, params);
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(z.values()[i], 1.125 * p.values()[i], 1e-15);
    params.lambda = Tensor::zeros({1});
    const Tensor id = mvma_attention(p, params);
    for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_EQ(id.values()[i], p.values()[i]);
}

TEST(ChannelCollapse, IdenticalChannelsAveraged) {
    const Tensor one = random_tensor({1, 1, 3, 3, 3}, 3);
    const Tensor two = concat({one, one}, 1);
    const Tensor out = channel_collapse(two, Tensor::from_values({2}, {0.5, 0.5}), Tensor::zeros({1}));
    for (std::size_t i = 0; i < one.numel(); ++i) EXPECT_DOUBLE_EQ(out.values()[i], one.values()[i]);
}

TEST(Msgc, SingleTermAbsoluteDifference) {
    const LayerMoments s{fixed({1.5, 1, 1, 0, 0, 0}), fixed({1, 1, 1, 0, 0, 0})};
    const LayerMoments t{fixed({1, 1, 1, 0, 0, 0}), fixed({1, 1, 1, 0, 0, 0})};
    const std::vector<LayerMoments> student{s};
    const std::vector<double> alpha{1.0}, beta{0.0};
    EXPECT_DOUBLE_EQ(msgc_loss(student, t, t, alpha, beta).item(), 0.5);
}

TEST(Msgc, SignMutationIsCaughtBySelfcheck) {
    const LayerMoments s{fixed({1.5, 1, 1, 0, 0, 0}), fixed({1, 1, 1, 0, 0, 0})};
    const LayerMoments t{fixed({1, 1, 1, 0, 0, 0}), fixed({1, 1, 1, 0, 0, 0})};
    const std::vector<LayerMoments> student{s};
    const std::vector<double> alpha{0.0}, beta{1.0};
    {
        FaultScope fault;
        EXPECT_LT(msgc_loss(student, t, t, alpha, beta).item(), 0.0);
        selfcheck::Options opts;
        opts.gradients = false;
        bool caught = false;
        for (const auto& r : selfcheck::run(opts)) {
            if ((r.name == "moments.msgc_nonnegative_zero_iff_equal" || r.name == "moments.msgc_matches_direct_sum") &&
                !r.passed) {
                caught = true;
            }
        }
        EXPECT_TRUE(caught);
    }
    EXPECT_DOUBLE_EQ(msgc_loss(student, t, t, alpha, beta).item(), 0.5);
}

TEST(Msgc, RejectsMismatchedWeights) {
    const LayerMoments t{fixed({1, 1, 1, 0, 0, 0}), fixed({1, 1, 1, 0, 0, 0})};
    const std::vector<LayerMoments> student{t, t};
    const std::vector<double> alpha{1.0}, beta{1.0, 1.0};
    EXPECT_THROW(msgc_loss(student, t, t, alpha, beta), std::invalid_argument);
}
