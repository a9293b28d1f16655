#include "mavias/synth/export.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <map>

using namespace mavias;
using namespace mavias::synth;

namespace {

std::vector<BiasedSample> moons(double align_rate, std::uint64_t seed = 0, std::size_t n = 4000) {
    TwoMoons3DConfig c;
    c.align_rate = align_rate;
    c.seed = seed;
    c.n = n;
    return generate_two_moons_3d(c);
}

} // namespace

TEST(TwoMoons, AlignedCountFollowsRate) {
    auto s = moons(0.95);
    EXPECT_EQ(s.size(), 4000u);
    EXPECT_EQ(std::count_if(s.begin(), s.end(), [](const auto& x) { return x.aligned; }), 3800);
}

TEST(TwoMoons, FullAlignmentMakesX3Separating) {
    auto s = moons(1.0, 3);
    std::size_t correct = 0;
    for (const auto& x : s) correct += (x.features[2] > 0.0 ? 1u : 0u) == x.label;
    EXPECT_EQ(correct, s.size());
}

TEST(TwoMoons, SameSeedSameData) {
    auto a = moons(0.95, 42), b = moons(0.95, 42), c = moons(0.95, 43);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].features, b[i].features);
        EXPECT_EQ(a[i].aligned, b[i].aligned);
    }
    EXPECT_NE(a[0].features, c[0].features);
}

TEST(TwoMoons, HalfAlignmentLeavesX3AtChance) {
    auto s = moons(0.5, 7);
    std::size_t correct = 0;
    for (const auto& x : s) correct += (x.features[2] > 0.0 ? 1u : 0u) == x.label;
    EXPECT_NEAR(static_cast<double>(correct) / s.size(), 0.5, 0.03);
}

TEST(TwoMoons, FieldsAreConsistent) {
    for (const auto& x : moons(0.9, 1, 500)) {
        ASSERT_EQ(x.features.size(), 3u);
        ASSERT_EQ(x.bias_embedding.size(), 1u);
        EXPECT_EQ(x.bias_embedding[0], x.features[2]);
        EXPECT_EQ(x.aligned, x.bias_mode == x.label);
        EXPECT_EQ(x.group, 2 * x.label + x.bias_mode);
        EXPECT_EQ(std::abs(x.features[2]), 1.0);
    }
}

TEST(TwoMoons, InvalidConfigRejected) {
    TwoMoons3DConfig c;
    c.n = 1;
    EXPECT_THROW(generate_two_moons_3d(c), ContractViolation);
    c.n = 10;
    c.align_rate = 0.0;
    EXPECT_THROW(generate_two_moons_3d(c), ContractViolation);
}

TEST(BiasedBlobs, BalancedLabels) {
    BiasedBlobsConfig c;
    c.num_classes = 3;
    c.samples_per_class = 200;
    auto s = generate_biased_blobs(c);
    EXPECT_EQ(s.size(), 600u);
    std::map<std::size_t, int> counts;
    for (const auto& x : s) ++counts[x.label];
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(counts[k], 200);
}

TEST(BiasedBlobs, FullAlignmentModePredictsLabel) {
    BiasedBlobsConfig c;
    c.align_rate = 1.0;
    c.embed_noise = 0.0;
    c.num_classes = 4;
    auto s = generate_biased_blobs(c);
    // Each embedding is a basis vector; its index is the mode, which is the label.
    for (const auto& x : s) {
        const auto mode = static_cast<std::size_t>(
            std::max_element(x.bias_embedding.begin(), x.bias_embedding.end()) - x.bias_embedding.begin());
        EXPECT_EQ(mode, x.label);
    }
}

TEST(BiasedBlobs, EmbeddingsAreUnitNorm) {
    BiasedBlobsConfig c;
    for (const auto& x : generate_biased_blobs(c)) {
        double n2 = 0.0;
        for (double v : x.bias_embedding) n2 += v * v;
        EXPECT_NEAR(n2, 1.0, 1e-12);
    }
}

TEST(BiasedBlobs, ConflictingSamplesAvoidPreferredMode) {
    BiasedBlobsConfig c;
    c.align_rate = 0.7;
    for (const auto& x : generate_biased_blobs(c)) EXPECT_EQ(x.aligned, x.bias_mode == x.label % 3);
}

TEST(Export, RecordsCarryTagsAndRoundTrip) {
    auto s = moons(0.95, 0, 50);
    auto scheme = two_moons_tag_scheme();
    scheme.distractor_rate = 0.5;
    auto recs = to_records(s, scheme, two_moons_class_names(), 1);
    ASSERT_EQ(recs.size(), 50u);
    for (std::size_t i = 0; i < recs.size(); ++i) {
        EXPECT_EQ(recs[i].tags[0], scheme.class_tags[s[i].label]);
        EXPECT_EQ(recs[i].tags[1], scheme.bias_tags[s[i].bias_mode]);
        auto back = record_from_json(nlohmann::json::parse(to_json(recs[i]).dump()));
        EXPECT_EQ(back.id, recs[i].id);
        EXPECT_EQ(back.features, recs[i].features);
        EXPECT_EQ(back.tags, recs[i].tags);
        EXPECT_EQ(back.aligned, recs[i].aligned);
        EXPECT_EQ(back.class_name, recs[i].class_name);
    }
}

TEST(Export, MalformedRecordIsConfigError) {
    EXPECT_THROW(record_from_json(nlohmann::json{{"id", "a"}}), ConfigError);
}
