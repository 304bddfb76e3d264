#include "gigp/phantom.hpp"
#include "gigp/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gigp;
using namespace gigp::train;

namespace {

struct Tiny {
    net::NetConfig net;
    TrainConfig train;
    TrainData data;
};

Tiny tiny(int labeled, int unlabeled, std::uint64_t seed) {
    Tiny t;
    t.net.depth = 2;
    t.net.base_channels = 4;
    t.net.input_shape = {16, 16, 16};
    t.train.epochs = 1;
    t.train.iters_per_epoch = 6;
    t.train.labeled_batch = 1;
    t.train.unlabeled_batch = 1;
    t.train.seed = seed;
    data::PhantomSpec spec;
    spec.grid = {16, 16, 16};
    spec.semi_axis_min = 3.0;
    spec.semi_axis_max = 4.5;
    std::mt19937_64 rng(seed + 100);
    for (int i = 0; i < labeled; ++i) t.data.labeled.push_back(data::generate_phantom(spec, rng).volume);
    for (int i = 0; i < unlabeled; ++i) {
        auto v = data::generate_phantom(spec, rng).volume;
        v.label.reset();
        t.data.unlabeled.push_back(v);
    }
    t.data.validation.push_back(data::generate_phantom(spec, rng).volume);
    return t;
}

}  // namespace

TEST(Losses, UniformPredictionCrossEntropyIsLn2) {
    const Tensor probs = Tensor::full({1, 2, 2, 2, 2}, 0.5);
    Tensor labels = Tensor::zeros({1, 1, 2, 2, 2});
    labels.values_mut()[3] = 1.0;
    EXPECT_NEAR(cross_entropy_loss(probs, labels).item(), std::log(2.0), 1e-15);
    EXPECT_NEAR(supervised_loss(probs, labels, 1.0).item(),
                soft_dice_loss(probs, labels).item() + std::log(2.0), 1e-15);
}

TEST(Losses, SoftDiceOfPerfectPredictionIsZero) {
    Tensor labels = Tensor::zeros({1, 1, 2, 2, 2});
    for (int i = 0; i < 4; ++i) labels.values_mut()[i] = 1.0;
    std::vector<double> p(16);
    for (int i = 0; i < 8; ++i) {
        p[8 + i] = labels.values()[i];
        p[i] = 1.0 - labels.values()[i];
    }
    EXPECT_NEAR(soft_dice_loss(Tensor::from_values({1, 2, 2, 2, 2}, p), labels).item(), 0.0, 1e-12);
}

TEST(Losses, ConsistencyOfUniformOffset) {
    const Tensor s = Tensor::full({1, 2, 3, 3, 3}, 0.6);
    const Tensor t = Tensor::full({1, 2, 3, 3, 3}, 0.5);
    EXPECT_NEAR(consistency_loss(s, t, t).item(), 0.02, 1e-15);
    EXPECT_NEAR(consistency_loss(s, t, Tensor()).item(), 0.01, 1e-15);
}

TEST(Losses, TotalIsWeightedSum) {
    const Tensor one = Tensor::scalar(1.0);
    EXPECT_NEAR(total_loss(one, one, one, 0.1, 0.05).item(), 1.15, 1e-15);
    EXPECT_THROW(total_loss(one, Tensor::scalar(std::nan("")), one, 0.1, 0.05), NonFiniteLossError);
}

TEST(Schedule, RampValues) {
    EXPECT_NEAR(ramp_weight(0, 100), std::exp(-5.0), 1e-15);
    EXPECT_NEAR(ramp_weight(0, 100), 0.006738, 1e-6);
    EXPECT_NEAR(ramp_weight(50, 100), 0.2865, 1e-4);
    EXPECT_EQ(ramp_weight(100, 100), 1.0);
    EXPECT_EQ(ramp_weight(250, 100), 1.0);
    EXPECT_THROW(ramp_weight(1, 0), std::invalid_argument);
}

TEST(Ema, DecayArithmetic) {
    ParameterSet teacher, student;
    teacher.add("w", Tensor::full({2}, 1.0));
    student.add("w", Tensor::zeros({2}));
    ema_update(teacher, student, 0.99);
    for (double v : teacher.get("w").values()) EXPECT_DOUBLE_EQ(v, 0.99);
    ParameterSet other;
    other.add("v", Tensor::zeros({2}));
    EXPECT_THROW(ema_update(teacher, other, 0.99), std::invalid_argument);
}

TEST(Noise, PerturbationIsClipped) {
    std::mt19937_64 rng(1);
    const Tensor x = Tensor::zeros({1, 1, 8, 8, 8});
    const Tensor y = noise_perturb(x, 1.0, 0.2, rng);
    for (double v : y.values()) EXPECT_LE(std::abs(v), 0.2);
}

TEST(Ablation, FlagsMapOntoNetworkAndWeights) {
    net::NetConfig n;
    TrainConfig t;
    t.ablation = {false, false, false};
    apply_ablation(n, t);
    EXPECT_FALSE(n.mvma_enabled);
    EXPECT_FALSE(n.giim_enabled);
    EXPECT_EQ(t.gamma2, 0.0);
    for (double b : t.level_beta(3)) EXPECT_EQ(b, 0.0);
    TrainConfig full;
    for (double a : full.level_alpha(3)) EXPECT_DOUBLE_EQ(a, 1.0 / 6.0);
}

TEST(Csv, HeaderCommentAndRoundTrip) {
    std::vector<LogRow> rows(2);
    rows[0] = {0, 0, 1.25, 1.0, 0.5, 0.1, {}, {}, {}, {}};
    rows[1] = {1, 0, 0.1 + 0.2, 1.0 / 3.0, 0.0, 2.5e-17, 0.75, 0.6, std::nullopt, 3.5};
    const std::string csv = format_csv(rows, {true, false, true});
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "# ablation gmam=1 ggpc=0 giim=1");
    const std::size_t second = csv.find('\n') + 1;
    EXPECT_EQ(csv.substr(second, csv.find('\n', second) - second), kCsvHeader);
    const auto back = parse_csv(csv);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[1].l_total, rows[1].l_total);
    EXPECT_EQ(back[1].l_s, rows[1].l_s);
    EXPECT_EQ(back[1].l_gmc, rows[1].l_gmc);
    EXPECT_EQ(back[1].val_dice, rows[1].val_dice);
    EXPECT_FALSE(back[1].val_hd95.has_value());
    EXPECT_FALSE(back[0].val_dice.has_value());
    EXPECT_EQ(format_csv(back, {true, false, true}), csv);
}

TEST(Training, StepLossDecomposes) {
    Tiny t = tiny(2, 2, 3);
    const auto out = train_loop(t.data, t.net, t.train);
    ASSERT_EQ(out.log.size(), 6u);
    const long long ramp = t.train.effective_ramp_length();
    for (const auto& r : out.log) {
        const double w = ramp_weight(static_cast<long long>(r.iter), ramp);
        EXPECT_LE(std::abs(r.l_total - (r.l_s + t.train.gamma1 * w * r.l_c + t.train.gamma2 * w * r.l_gmc)), 1e-12);
        EXPECT_GE(r.l_c, 0.0);
        EXPECT_GE(r.l_gmc, 0.0);
    }
    EXPECT_TRUE(out.log.back().val_dice.has_value());
}

TEST(Training, OverfitTwoVolumesReducesSupervisedLoss) {
    Tiny t = tiny(2, 0, 4);
    t.train.labeled_only = true;
    t.train.augment = false;
    t.train.iters_per_epoch = 50;
    t.train.lr = 0.05;
    const auto out = train_loop(t.data, t.net, t.train);
    EXPECT_LT(out.log.back().l_s, out.log.front().l_s);
}

TEST(Training, ZeroConsistencyWeightsMatchLabeledOnlyBitwise) {
    Tiny a = tiny(2, 2, 5);
    a.train.gamma1 = 0.0;
    a.train.gamma2 = 0.0;
    Tiny b = tiny(2, 2, 5);
    b.train.labeled_only = true;
    const auto ra = train_loop(a.data, a.net, a.train);
    const auto rb = train_loop(b.data, b.net, b.train);
    ASSERT_EQ(ra.log.size(), rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) {
        EXPECT_EQ(ra.log[i].l_total, rb.log[i].l_total);
        EXPECT_EQ(ra.log[i].l_s, rb.log[i].l_s);
    }
    ASSERT_EQ(ra.state.student.size(), rb.state.student.size());
    for (std::size_t i = 0; i < ra.state.student.size(); ++i) {
        const auto x = ra.state.student.entries()[i].tensor.values();
        const auto y = rb.state.student.entries()[i].tensor.values();
        EXPECT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << ra.state.student.entries()[i].name;
    }
}

TEST(Training, RejectsInvalidConfigListingFields) {
    TrainConfig t;
    t.lr = -1.0;
    t.ema_decay = 1.5;
    try {
        t.validate(3);
        FAIL() << "expected invalid_argument";
    } catch (const std::invalid_argument& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("lr"), std::string::npos) << msg;
        EXPECT_NE(msg.find("ema_decay"), std::string::npos) << msg;
    }
}

TEST(Evaluation, EmptyPredictionReportsMissingDistances) {
    metrics::BinaryMask empty({4, 4, 4});
    metrics::BinaryMask truth({4, 4, 4});
    truth.at(1, 1, 1) = 1;
    const auto m = metrics::evaluate(empty, truth);
    EXPECT_EQ(m.dice, 0.0);
    EXPECT_FALSE(m.hd95.has_value());
    const auto s = summarize({{"a", m}, {"b", metrics::evaluate(truth, truth)}});
    EXPECT_DOUBLE_EQ(s.mean_dice, 0.5);
    ASSERT_TRUE(s.mean_hd95.has_value());
    EXPECT_EQ(*s.mean_hd95, 0.0);
}
