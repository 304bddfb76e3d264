#include "gigp/ssm.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace gigp;
using namespace gigp::ssm;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = d(rng);
    return Tensor::from_values(shape, v);
}

// Scalar-token parameters with a fixed step size: w_delta = 0 and
// softplus(b_delta) = delta.
SsmParams fixed_params(double delta, double a, double b, double c, double d) {
    SsmParams p;
    p.w_delta = Tensor::zeros({1});
    p.b_delta = Tensor::from_values({1}, {std::log(std::expm1(delta))});
    p.w_b = Tensor::zeros({1, 1});
    p.b_b = Tensor::from_values({1}, {b});
    p.w_c = Tensor::zeros({1, 1});
    p.b_c = Tensor::from_values({1}, {c});
    p.a_log = Tensor::from_values({1}, {std::log(-a)});
    p.d_skip = Tensor::from_values({1}, {d});
    return p;
}

}  // namespace

TEST(Discretize, ClosedForms) {
    const std::vector<double> a{-1.0};
    const std::vector<double> b{2.0};
    EXPECT_NEAR(discretize(1.0, a, b).a_bar[0], std::exp(-1.0), 1e-15);
    EXPECT_NEAR(discretize(1.0, a, b).a_bar[0], 0.367879, 1e-6);
    EXPECT_DOUBLE_EQ(discretize(0.5, a, b).b_bar[0], 1.0);
    EXPECT_THROW(discretize(0.0, a, b), std::invalid_argument);
}

TEST(SelectiveScan, OneStepByHand) {
    const SsmParams p = fixed_params(1.0, std::log(0.5), 1.0, 2.0, 0.0);
    const Tensor y = selective_scan(Tensor::from_values({1, 1, 1}, {3.0}), p);
    EXPECT_NEAR(y.item(), 6.0, 1e-12);
}

TEST(SelectiveScan, TwoStepRecurrence) {
    const SsmParams p = fixed_params(1.0, std::log(0.5), 1.0, 1.0, 0.0);
    const Tensor y = selective_scan(Tensor::from_values({1, 2, 1}, {1.0, 1.0}), p);
    EXPECT_NEAR(y.values()[0], 1.0, 1e-12);
    EXPECT_NEAR(y.values()[1], 1.5, 1e-12);
}

TEST(SelectiveScan, SequencesAreIndependent) {
    std::mt19937_64 rng(1);
    const SsmParams p = init_ssm_params(4, 2, rng);
    const Tensor a = random_tensor({1, 7, 2}, rng);
    const Tensor b = random_tensor({1, 7, 2}, rng);
    const Tensor both = selective_scan(concat({a, b}, 0), p);
    const Tensor only = selective_scan(a, p);
    for (std::size_t i = 0; i < only.numel(); ++i) EXPECT_EQ(only.values()[i], both.values()[i]);
}

TEST(SelectiveScan, CausalPrefix) {
    std::mt19937_64 rng(2);
    const SsmParams p = init_ssm_params(3, 1, rng);
    const Tensor x = random_tensor({1, 10, 1}, rng);
    const Tensor full = selective_scan(x, p);
    const Tensor head = selective_scan(slice(x, 1, 0, 4), p);
    for (int t = 0; t < 4; ++t) EXPECT_EQ(head.values()[t], full.values()[t]);
}

TEST(SelectiveScan, NonFiniteInputRaises) {
    std::mt19937_64 rng(3);
    const SsmParams p = init_ssm_params(2, 1, rng);
    const Tensor x = Tensor::from_values({1, 2, 1}, {1.0, std::nan("")});
    EXPECT_THROW(selective_scan(x, p), std::domain_error);
}

TEST(Sequences, SampleScanPutsLabeledFirst) {
    // Feature value encodes the sample index.
    const int b = 4, c = 2, s = 3;
    std::vector<double> v;
    for (int i = 0; i < b; ++i)
        for (int k = 0; k < c * s; ++k) v.push_back(i);
    const Tensor f = Tensor::from_values({b, c, s}, v);
    const auto seq = make_sequences(f, Direction::sample, {false, true, true, false});
    ASSERT_EQ(seq.tokens.dim(1), b);
    const std::vector<double> want{1, 2, 0, 3};
    for (int q = 0; q < seq.tokens.dim(0); ++q)
        for (int t = 0; t < b; ++t) EXPECT_EQ(seq.tokens.values()[q * b + t], want[t]);
}

TEST(Sequences, ReverseScanRunsBackwards) {
    const Tensor f = Tensor::from_values({1, 1, 4}, {0, 1, 2, 3});
    const auto seq = make_sequences(f, Direction::reverse);
    const std::vector<double> want{3, 2, 1, 0};
    for (int t = 0; t < 4; ++t) EXPECT_EQ(seq.tokens.values()[t], want[t]);
    const Tensor back = restore_sequences(seq.tokens, seq);
    for (int t = 0; t < 4; ++t) EXPECT_EQ(back.values()[t], t);
}

TEST(Iim, EqualBranchesCombineLinearly) {
    // A huge decay makes every branch the same pointwise map M.
    const SsmParams p = fixed_params(1.0, -1000.0, 0.7, 1.3, 0.2);
    const IimParams params{p, p, p, p};
    std::mt19937_64 rng(4);
    const Tensor f = random_tensor({3, 2, 5}, rng);
    const Tensor out = iim_forward(f, params, 0.3, 0.6, {true, false, false});
    for (std::size_t i = 0; i < f.numel(); ++i) {
        const double m = 0.7 * 1.3 * f.values()[i] + 0.2 * f.values()[i];
        EXPECT_NEAR(out.values()[i], (2 + 0.3 + 0.6) * m, 1e-12);
    }
}

TEST(Gsc, ZeroGateIsHalfResidual) {
    std::mt19937_64 rng(5);
    const Tensor f = random_tensor({1, 2, 4, 4, 4}, rng);
    GscParams p;
    p.main_kernel = random_tensor({2, 2, 3, 3, 3}, rng);
    p.main_bias = random_tensor({2}, rng);
    p.gate_kernel = Tensor::zeros({2, 2, 1, 1, 1});
    p.gate_bias = Tensor::zeros({2});
    const Tensor main = conv3d(f, p.main_kernel, p.main_bias, {{1, 1, 1}, {1, 1, 1}});
    const Tensor out = gsc(f, p);
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out.values()[i], f.values()[i] + 0.5 * main.values()[i], 1e-14);
    p.gate_bias = Tensor::full({2}, 10.0);
    const Tensor open = gsc(f, p);
    const double gate = 1.0 / (1.0 + std::exp(-10.0));
    for (std::size_t i = 0; i < f.numel(); ++i) {
        EXPECT_NEAR(open.values()[i], f.values()[i] + gate * main.values()[i], 1e-13);
    }
}

TEST(Giim, ZeroSecondMlpLayerLeavesInteractionPath) {
    std::mt19937_64 rng(6);
    GiimParams p = init_giim_params(3, 2, rng);
    p.mlp2_kernel = Tensor::zeros(p.mlp2_kernel.shape());
    p.mlp2_bias = Tensor::zeros(p.mlp2_bias.shape());
    for (double g : p.norm1_gamma.values()) ASSERT_EQ(g, 1.0);
    for (double b : p.norm1_beta.values()) ASSERT_EQ(b, 0.0);
    const Tensor f = random_tensor({2, 3, 3, 2, 4}, rng);
    GiimOptions opts;
    opts.labeled = {true, false};
    const Tensor out = giim_block(f, p, opts);
    const Tensor g = gsc(f, p.gsc);
    const Tensor mixed = iim_forward(reshape(normalize(g, {1}), {2, 3, 24}), p.iim, opts.lambda1, opts.lambda2, opts.labeled);
    for (std::size_t i = 0; i < f.numel(); ++i) EXPECT_NEAR(out.values()[i], g.values()[i] + mixed.values()[i], 1e-12);
    EXPECT_EQ(out.shape(), f.shape());
}

TEST(Params, RoundTripThroughParameterSet) {
    std::mt19937_64 rng(7);
    const GiimParams p = init_giim_params(2, 3, rng);
    ParameterSet set;
    add_giim_params(set, "blk", p);
    const GiimParams q = giim_params_from(set, "blk");
    EXPECT_EQ(q.iim[3].a_log.values()[2], p.iim[3].a_log.values()[2]);
    EXPECT_EQ(q.mlp1_kernel.shape(), p.mlp1_kernel.shape());
    // A is initialized to -(1..N).
    const auto a = p.iim[0].a();
    for (int n = 0; n < 3; ++n) EXPECT_NEAR(a[n], -(n + 1.0), 1e-14);
}
