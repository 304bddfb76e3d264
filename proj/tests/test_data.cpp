#include "gigp/phantom.hpp"
#include "gigp/volume.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <random>

using namespace gigp;
using namespace gigp::data;

namespace {

Volume random_volume(std::array<int, 3> dims, bool labeled, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    Volume v;
    v.dims = dims;
    v.spacing = {0.8, 1.0, 1.25};
    v.id = "rand";
    v.intensities.resize(v.voxels());
    for (double& x : v.intensities) x = static_cast<float>(d(rng));
    if (labeled) {
        v.label.emplace(v.voxels());
        for (auto& b : *v.label) b = d(rng) > 0.5;
    }
    return v;
}

std::string header_of(const std::string& bytes) { return bytes.substr(0, bytes.find('\n')); }

}  // namespace

TEST(VolumeFormat, RoundTripIsBitwise) {
    const Volume v = random_volume({5, 6, 7}, true, 1);
    const std::string bytes = encode_volume(v);
    const Volume back = decode_volume(bytes);
    EXPECT_EQ(back.dims, v.dims);
    EXPECT_EQ(back.spacing, v.spacing);
    EXPECT_EQ(back.id, v.id);
    EXPECT_EQ(back.intensities, v.intensities);
    EXPECT_EQ(*back.label, *v.label);
    EXPECT_EQ(encode_volume(back), bytes);
}

TEST(VolumeFormat, FileRoundTrip) {
    const auto path = std::filesystem::temp_directory_path() / "gigp_test_volume.gvol";
    const Volume v = random_volume({4, 4, 3}, false, 2);
    save_volume(v, path);
    const Volume back = load_volume(path);
    EXPECT_EQ(back.intensities, v.intensities);
    EXPECT_FALSE(back.label.has_value());
    std::filesystem::remove(path);
}

TEST(VolumeFormat, CorruptedMagicNamesTheExpectedMagic) {
    std::string bytes = encode_volume(random_volume({3, 3, 3}, false, 3));
    const auto pos = bytes.find("GIGPVOL1");
    ASSERT_NE(pos, std::string::npos);
    bytes[pos + 4] = 'X';
    try {
        decode_volume(bytes);
        FAIL() << "expected VolumeFormatError";
    } catch (const VolumeFormatError& e) {
        EXPECT_NE(std::string(e.what()).find("\"GIGPVOL1\""), std::string::npos) << e.what();
    }
}

TEST(VolumeFormat, PayloadLengthMismatch) {
    const std::string header = header_of(encode_volume(random_volume({8, 8, 8}, false, 4)));
    const std::string bytes = header + "\n" + std::string(500 * sizeof(float), '\0');
    try {
        decode_volume(bytes);
        FAIL() << "expected VolumeFormatError";
    } catch (const VolumeFormatError& e) {
        EXPECT_NE(std::string(e.what()).find("length mismatch"), std::string::npos) << e.what();
    }
}

TEST(VolumeFormat, HeaderIsJsonWithXFastestPayload) {
    Volume v;
    v.dims = {2, 1, 1};
    v.intensities = {1.5, -2.0};
    v.id = "tiny";
    const std::string bytes = encode_volume(v);
    EXPECT_EQ(bytes.size(), header_of(bytes).size() + 1 + 2 * sizeof(float));
    float first = 0.0f;
    std::memcpy(&first, bytes.data() + header_of(bytes).size() + 1, sizeof(float));
    EXPECT_EQ(first, 1.5f);
}

TEST(Normalization, ZeroMeanUnitVariance) {
    Volume v = random_volume({6, 6, 6}, false, 5);
    for (double& x : v.intensities) x = 3.0 * x + 7.0;
    normalize_intensities(v);
    double m = 0.0, s = 0.0;
    for (double x : v.intensities) m += x;
    m /= v.voxels();
    for (double x : v.intensities) s += (x - m) * (x - m);
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(s / v.voxels(), 1.0, 1e-12);
}

TEST(Split, DefaultCountsAndLabeledRatio) {
    const auto s = split_dataset(60, {}, 4, 9);
    EXPECT_EQ(s.labeled.size(), 4u);
    EXPECT_EQ(s.unlabeled.size(), 36u);
    EXPECT_EQ(s.validation.size(), 8u);
    EXPECT_EQ(s.test.size(), 12u);
    std::vector<bool> seen(60, false);
    for (const auto* part : {&s.labeled, &s.unlabeled, &s.validation, &s.test}) {
        for (auto i : *part) {
            EXPECT_FALSE(seen[i]);
            seen[i] = true;
        }
    }
    EXPECT_TRUE(split_dataset(40, {40, 0, 0}, 40, 1).warning.size() > 0);
    EXPECT_THROW(split_dataset(10, {}, 4, 1), std::invalid_argument);
}

TEST(Phantom, UnbumpedEllipsoidMatchesAnalyticVolume) {
    PhantomSpec spec;
    spec.grid = {32, 32, 32};
    spec.semi_axis_min = 5.0;
    spec.semi_axis_max = 9.0;
    spec.bump_magnitude = 0.0;
    std::mt19937_64 rng(6);
    for (int i = 0; i < 5; ++i) {
        const Phantom p = generate_phantom(spec, rng);
        const double analytic = 4.0 / 3.0 * std::numbers::pi * p.semi_axes[0] * p.semi_axes[1] * p.semi_axes[2];
        const double counted = static_cast<double>(p.volume.label_mask().count());
        EXPECT_LT(std::abs(counted - analytic) / analytic, 0.05) << "phantom " << i;
    }
}

TEST(Phantom, LabelIsOneComponentAndIntensitiesNormalized) {
    PhantomSpec spec;
    std::mt19937_64 rng(7);
    const Phantom p = generate_phantom(spec, rng, "p0");
    EXPECT_EQ(p.volume.id, "p0");
    EXPECT_EQ(connected_components(p.volume.label_mask()), 1);
    double m = 0.0;
    for (double x : p.volume.intensities) m += x;
    EXPECT_NEAR(m / p.volume.voxels(), 0.0, 1e-9);
}

TEST(Phantom, RejectsSpecThatDoesNotFit) {
    PhantomSpec spec;
    spec.semi_axis_max = 11.0;
    EXPECT_THROW(spec.validate(), std::invalid_argument);
}

TEST(Augment, LabelAndIntensityTransformsAgree) {
    PhantomSpec spec;
    spec.grid = {20, 20, 20};
    spec.semi_axis_min = 3.0;
    spec.semi_axis_max = 5.5;
    std::mt19937_64 rng(8);
    const Volume v = generate_phantom(spec, rng).volume;
    // A copy whose intensities are the label itself.
    Volume copy = v;
    for (std::size_t i = 0; i < v.voxels(); ++i) copy.intensities[i] = (*v.label)[i];
    copy.label.reset();
    AugmentOptions opts;
    opts.crop = {16, 16, 16};
    for (int k = 0; k < 10; ++k) {
        const AugmentDraw draw = draw_augment(v, opts, rng);
        const Volume a = apply_augment(v, draw, opts);
        const Volume b = apply_augment(copy, draw, opts);
        metrics::BinaryMask from_copy({16, 16, 16});
        for (std::size_t i = 0; i < b.voxels(); ++i) from_copy.data[i] = b.intensities[i] >= 0.5;
        EXPECT_EQ(metrics::dice(a.label_mask(), from_copy), 1.0) << "draw " << k;
    }
}

TEST(Augment, FlipTwiceAndFullRotationAreIdentity) {
    const Volume v = random_volume({4, 5, 6}, true, 10);
    for (int a = 0; a < 3; ++a) EXPECT_EQ(flip(flip(v, a), a).intensities, v.intensities);
    const Volume cube = random_volume({5, 5, 5}, true, 11);
    for (int plane = 0; plane < 3; ++plane) {
        Volume r = cube;
        for (int i = 0; i < 4; ++i) r = rotate90(r, plane, 1);
        EXPECT_EQ(r.intensities, cube.intensities);
        EXPECT_EQ(*r.label, *cube.label);
    }
}

TEST(Components, CountsSixConnectedPieces) {
    metrics::BinaryMask m({3, 3, 3});
    m.at(0, 0, 0) = 1;
    m.at(1, 1, 1) = 1;  // diagonal neighbor only: separate
    m.at(2, 2, 2) = m.at(2, 2, 1) = 1;
    EXPECT_EQ(connected_components(m), 3);
}
