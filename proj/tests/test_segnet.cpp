#include "gigp/segnet.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace gigp;
using namespace gigp::net;

namespace {

bool ends_with(const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}

Tensor random_batch(int b, int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    std::vector<double> v(static_cast<std::size_t>(b) * n * n * n);
    for (double& x : v) x = d(rng);
    return Tensor::from_values({b, 1, n, n, n}, v);
}

}  // namespace

TEST(Segnet, ZeroInputOnZeroBiasNetworkIsUniform) {
    NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    ParameterSet p = build_network(cfg, 1);
    for (auto& e : p.entries()) {
        if (ends_with(e.name, ".bias") || ends_with(e.name, ".beta")) {
            for (double& v : e.tensor.values_mut()) v = 0.0;
        }
    }
    const auto out = forward(cfg, p, Tensor::zeros({2, 1, 16, 16, 16}), Mode::teacher, 1);
    for (double v : out.probs.values()) EXPECT_EQ(v, 0.5);
}

TEST(Segnet, ParameterNamesFollowTheLevelLayout) {
    NetConfig cfg;
    const ParameterSet p = build_network(cfg, 2);
    for (const char* name :
         {"enc0.conv.weight", "enc1.down.weight", "enc2.mvma.l.weight", "enc1.mvma.lambda", "bottleneck.giim.iim.t.a_log",
          "dec2.conv.weight", "dec0.up.weight", "head.weight", "collapse.dec1.weight"}) {
        EXPECT_TRUE(p.contains(name)) << name;
    }
    EXPECT_FALSE(p.contains("enc0.down.weight"));
    EXPECT_EQ(p.get("enc1.mvma.lambda").item(), 0.0);
    EXPECT_EQ(p.get("collapse.enc2.weight").values()[0], 1.0 / cfg.channels(2));
}

TEST(Segnet, ChannelsGrowPerLevel) {
    NetConfig cfg;
    EXPECT_EQ(cfg.channels(0), 8);
    EXPECT_EQ(cfg.channels(2), 32);
    EXPECT_EQ(cfg.level_shape(2), (std::array<int, 3>{6, 6, 6}));
}

TEST(Segnet, RejectsIndivisibleInput) {
    NetConfig cfg;
    cfg.input_shape = {24, 22, 24};
    EXPECT_THROW(cfg.validate(), std::invalid_argument);
    EXPECT_THROW(build_network(cfg, 0), std::invalid_argument);
}

TEST(Segnet, DisabledBlocksAreFrozen) {
    NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    cfg.mvma_enabled = false;
    cfg.giim_enabled = false;
    ParameterSet p = build_network(cfg, 3);
    EXPECT_FALSE(p.get("enc0.mvma.h.weight").requires_grad());
    EXPECT_FALSE(p.get("bottleneck.giim.mlp1.weight").requires_grad());
    EXPECT_TRUE(p.get("enc0.conv.weight").requires_grad());
    const auto out = forward(cfg, p, random_batch(1, 16, 4), Mode::student);
    sum(out.probs).backward();
    for (double g : p.get("bottleneck.giim.mlp1.weight").grad()) EXPECT_EQ(g, 0.0);
}

TEST(Segnet, StudentModeReachesEveryActiveParameter) {
    NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    ParameterSet p = build_network(cfg, 5);
    for (auto& e : p.entries()) {
        if (ends_with(e.name, ".mvma.lambda")) e.tensor.values_mut()[0] = 0.5;
    }
    const Tensor x = random_batch(2, 16, 6);
    const auto out = forward(cfg, p, x, Mode::student, 1);
    // Probe-weighted loss so that softmax does not cancel the gradient.
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::vector<double> w(out.probs.numel());
    for (double& v : w) v = d(rng);
    sum(mul(out.probs, Tensor::from_values(out.probs.shape(), w))).backward();
    for (const auto& e : p.entries()) {
        if (e.name.rfind("collapse.", 0) == 0) continue;  // only used by moment consistency
        double mag = 0.0;
        for (double g : e.tensor.grad()) mag += std::abs(g);
        EXPECT_GT(mag, 0.0) << e.name;
    }
}

TEST(Segnet, TeacherModeRecordsNoGraph) {
    NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    const ParameterSet p = build_network(cfg, 8);
    const auto out = forward(cfg, p, random_batch(1, 16, 9), Mode::teacher);
    EXPECT_TRUE(out.probs.is_leaf());
    EXPECT_FALSE(out.probs.requires_grad());
}

TEST(Segnet, BuildIsDeterministicInSeed) {
    NetConfig cfg;
    const ParameterSet a = build_network(cfg, 11);
    const ParameterSet b = build_network(cfg, 11);
    const ParameterSet c = build_network(cfg, 12);
    ASSERT_EQ(a.size(), b.size());
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto av = a.entries()[i].tensor.values();
        const auto bv = b.entries()[i].tensor.values();
        const auto cv = c.entries()[i].tensor.values();
        EXPECT_TRUE(std::equal(av.begin(), av.end(), bv.begin())) << a.entries()[i].name;
        differs = differs || !std::equal(av.begin(), av.end(), cv.begin());
    }
    EXPECT_TRUE(differs);
}

TEST(Segnet, CollapseProjectsOneSample) {
    NetConfig cfg;
    cfg.input_shape = {16, 16, 16};
    const ParameterSet p = build_network(cfg, 13);
    const auto out = forward(cfg, p, random_batch(2, 16, 14), Mode::teacher);
    const Tensor c = collapse_level(p, out.encoder[1], true, 1, 1);
    EXPECT_EQ(c.shape(), (Shape{1, 1, 8, 8, 8}));
    // Initial weights 1/c with zero bias: the channel mean.
    const int ch = cfg.channels(1);
    const auto e = out.encoder[1].values();
    const std::size_t vox = 512;
    double mean0 = 0.0;
    for (int k = 0; k < ch; ++k) mean0 += e[(static_cast<std::size_t>(1) * ch + k) * vox] / ch;
    EXPECT_NEAR(c.values()[0], mean0, 1e-14);
}
