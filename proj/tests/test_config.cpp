#include "gigp/config.hpp"

#include <gtest/gtest.h>

#include <algorithm>

using namespace gigp;

TEST(Config, DefaultTextRoundTrips) {
    const RunConfig c;
    EXPECT_EQ(parse_config(to_config_text(c)), c);
    EXPECT_NO_THROW(validate_config(c));
}

TEST(Config, ModifiedValuesRoundTrip) {
    RunConfig c;
    set_config_value(c, "train.lr", "0.0123456789012345");
    set_config_value(c, "train.seed", "18446744073709551615");
    set_config_value(c, "ablation.enable_ggpc", "false");
    set_config_value(c, "net.input_shape", "16,24,32");
    const std::string text = to_config_text(c);
    const RunConfig back = parse_config(text);
    EXPECT_EQ(back, c);
    EXPECT_EQ(back.train.seed, 18446744073709551615ull);
    EXPECT_EQ(to_config_text(back), text);
}

TEST(Config, EveryKeyIsReadableAndWritable) {
    RunConfig c;
    for (const auto& key : config_keys()) {
        const std::string v = get_config_value(c, key);
        EXPECT_NO_THROW(set_config_value(c, key, v)) << key;
    }
    EXPECT_EQ(c, RunConfig{});
}

TEST(Config, CommentsAndBlankLinesIgnored) {
    const RunConfig c = parse_config("# comment\n\n  train.epochs = 3\n");
    EXPECT_EQ(c.train.epochs, 3);
}

TEST(Config, UnknownKeysAreAllReported) {
    try {
        parse_config("train.lrr=1\nnet.depthh=2\ntrain.epochs=2\n");
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const auto& keys = e.keys();
        EXPECT_NE(std::find(keys.begin(), keys.end(), "train.lrr"), keys.end());
        EXPECT_NE(std::find(keys.begin(), keys.end(), "net.depthh"), keys.end());
    }
}

TEST(Config, BadValuesRejected) {
    RunConfig c;
    EXPECT_THROW(set_config_value(c, "train.seed", "-1"), ConfigError);
    EXPECT_THROW(set_config_value(c, "train.epochs", "ten"), ConfigError);
    EXPECT_THROW(set_config_value(c, "train.lr", "0.1x"), ConfigError);
}

TEST(Config, ValidationListsEveryOffendingKey) {
    RunConfig c;
    c.train.lr = 0.0;
    c.train.ema_decay = 1.5;
    c.net.input_shape = {24, 23, 24};
    try {
        validate_config(c);
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        for (const char* key : {"train.lr", "train.ema_decay", "net.input_shape"}) {
            EXPECT_NE(msg.find(key), std::string::npos) << msg;
        }
    }
}

TEST(Config, AblationSwitchesReachEffectiveConfigs) {
    RunConfig c;
    c.train.ablation.gmam = false;
    c.train.ablation.giim = false;
    EXPECT_FALSE(effective_net(c).mvma_enabled);
    EXPECT_FALSE(effective_net(c).giim_enabled);
    EXPECT_EQ(effective_train(c).gamma2, 0.0);
    EXPECT_TRUE(RunConfig{}.net.mvma_enabled);
}
