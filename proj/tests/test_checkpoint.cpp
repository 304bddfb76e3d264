#include "gigp/checkpoint.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

using namespace gigp;

namespace {

Checkpoint sample() {
    Checkpoint c;
    c.config_text = "train.lr=0.01\n";
    c.iteration = 123456789012ull;
    c.blobs.emplace_back("student/w", Tensor::from_values({2, 3}, {1.0, -2.5, 0.1, 1e-300, -0.0, 3.0}));
    c.blobs.emplace_back("teacher/b", Tensor::from_values({1}, {0.30000000000000004}));
    c.blobs.emplace_back("scalar", Tensor::scalar(7.0));
    return c;
}

void expect_error(const std::string& bytes, const std::string& fragment) {
    try {
        parse_checkpoint(bytes);
        FAIL() << "expected CheckpointError mentioning " << fragment;
    } catch (const CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
}

}  // namespace

TEST(Checkpoint, RoundTripIsBytewiseStable) {
    const std::string bytes = serialize_checkpoint(sample());
    const Checkpoint back = parse_checkpoint(bytes);
    EXPECT_EQ(back.config_text, sample().config_text);
    EXPECT_EQ(back.iteration, sample().iteration);
    ASSERT_EQ(back.blobs.size(), 3u);
    EXPECT_EQ(back.blobs[0].first, "student/w");
    EXPECT_EQ(back.blobs[0].second.shape(), (Shape{2, 3}));
    EXPECT_TRUE(std::signbit(back.blobs[0].second.values()[4]));
    EXPECT_EQ(back.blobs[1].second.values()[0], 0.30000000000000004);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
}

TEST(Checkpoint, LayoutStartsWithMagicAndVersion) {
    const std::string bytes = serialize_checkpoint(sample());
    EXPECT_EQ(bytes.substr(0, 8), "GIGPCKPT");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 8, 4);
    EXPECT_EQ(version, kCheckpointVersion);
}

TEST(Checkpoint, CorruptionsAreReported) {
    const std::string good = serialize_checkpoint(sample());
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    expect_error(bad_magic, "GIGPCKPT");
    std::string bad_version = good;
    bad_version[8] = 9;
    expect_error(bad_version, "version");
    expect_error(good.substr(0, good.size() - 3), "truncated");
    expect_error(good + "zz", "trailing");
}

TEST(Checkpoint, FileRoundTripAndParameterRestore) {
    ParameterSet set;
    set.add("w", Tensor::from_values({3}, {1.0, 2.0, 3.0}));
    Checkpoint c;
    append_blobs(c, "student/", set);
    const auto path = std::filesystem::temp_directory_path() / "gigp_test.ckpt";
    save_checkpoint(path, c);
    const Checkpoint back = load_checkpoint(path);
    std::filesystem::remove(path);

    ParameterSet other;
    other.add("w", Tensor::zeros({3}));
    restore_blobs(back, "student/", other);
    EXPECT_EQ(other.get("w").values()[2], 3.0);

    ParameterSet wrong;
    wrong.add("w", Tensor::zeros({4}));
    EXPECT_THROW(restore_blobs(back, "student/", wrong), CheckpointError);
    EXPECT_THROW(restore_blobs(back, "teacher/", other), CheckpointError);
}
