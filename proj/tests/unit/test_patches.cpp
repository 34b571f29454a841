#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "bedtopo/error.hpp"
#include "bedtopo/patches.hpp"
#include "test_support.hpp"

using namespace bedtopo;

TEST(Extract, ClosedFormCounts) {
    EXPECT_EQ(extract_patches(600, 600, 16, 8).size(), 5476u);
    EXPECT_EQ(extract_patches(32, 32, 16, 8).size(), 9u);
    EXPECT_EQ(extract_patches(16, 16, 16, 8).size(), 1u);
    for (std::size_t dim = 16; dim < 90; ++dim)
        for (std::size_t stride : {1u, 3u, 8u, 16u}) {
            const auto offs = patch_offsets(dim, 16, stride);
            const std::size_t strided = (dim - 16) / stride + 1;
            const bool flush = (dim - 16) % stride != 0;
            EXPECT_EQ(offs.size(), strided + (flush ? 1 : 0)) << dim << " " << stride;
            EXPECT_EQ(offs.back() + 16, dim);
        }
}

TEST(Extract, FlushEdgePatch) {
    const auto offs = patch_offsets(37, 16, 8);
    EXPECT_EQ(offs, (std::vector<std::size_t>{0, 8, 16, 21}));
}

TEST(Extract, PatchesInsideGridAndRowMajor) {
    const auto p = extract_patches(50, 41, 16, 8);
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_LE(p[i].row0 + 16, 50u);
        EXPECT_LE(p[i].col0 + 16, 41u);
        if (i) EXPECT_TRUE(std::pair(p[i - 1].row0, p[i - 1].col0) < std::pair(p[i].row0, p[i].col0));
    }
}

TEST(Extract, TooLargeIsError) {
    EXPECT_THROW(extract_patches(15, 40, 16, 8), DimensionError);
    EXPECT_THROW(extract_patches(40, 15, 16, 8), DimensionError);
    EXPECT_THROW(extract_patches(40, 40, 16, 0), std::invalid_argument);
}

TEST(SplitRandom, Counts) {
    const auto ten = extract_patches(16, 25, 16, 1);
    ASSERT_EQ(ten.size(), 10u);
    const auto s = split_random(ten, 0.8, 7);
    EXPECT_EQ(s.train.size(), 8u);
    EXPECT_EQ(s.validation.size(), 2u);
    const auto big = split_random(extract_patches(600, 600, 16, 8), 0.8, 1);
    EXPECT_EQ(big.train.size(), 4381u);
    EXPECT_EQ(big.validation.size(), 1095u);
}

TEST(SplitRandom, DeterministicPartition) {
    const auto p = extract_patches(64, 64, 16, 8);
    const auto a = split_random(p, 0.8, 7), b = split_random(p, 0.8, 7), c = split_random(p, 0.8, 8);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.validation, b.validation);
    EXPECT_NE(a.train, c.train);
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto* set : {&a.train, &a.validation})
        for (const auto& q : *set) EXPECT_TRUE(seen.insert({q.row0, q.col0}).second);
    EXPECT_EQ(seen.size(), p.size());
    for (const auto& q : a.train) EXPECT_EQ(q.membership, Membership::train);
    for (const auto& q : a.validation) EXPECT_EQ(q.membership, Membership::validation);
}

TEST(SplitRandom, Errors) {
    EXPECT_THROW(split_random({}, 0.8, 1), std::invalid_argument);
    const auto p = extract_patches(32, 32, 16, 8);
    EXPECT_THROW(split_random(p, 0.0, 1), std::invalid_argument);
    EXPECT_THROW(split_random(p, 1.0, 1), std::invalid_argument);
}

TEST(Bands, ThirtyBandsOn600Rows) {
    const auto m = make_band_map(600, 30);
    EXPECT_EQ(m.band_height, 20u);
    std::size_t train = 0, test = 0;
    for (std::size_t b = 1; b <= 30; ++b) (m.is_train_band(b) ? train : test)++;
    EXPECT_EQ(train, 15u);
    EXPECT_EQ(test, 15u);
    for (std::size_t r = 0; r < 600; ++r) EXPECT_EQ(m.band_of_row[r], r / 20 + 1);
}

TEST(Bands, RemainderRowsJoinLastBand) {
    const auto m = make_band_map(65, 4);
    EXPECT_EQ(m.band_height, 16u);
    EXPECT_EQ(m.band_of_row[63], 4u);
    EXPECT_EQ(m.band_of_row[64], 4u);
}

TEST(Bands, StrideSixteenPatchesFitExactlyOneBand) {
    const auto patches = extract_patches(64, 64, 16, 16);
    const auto s = split_spatial_bands(64, 4, patches);
    EXPECT_EQ(s.discarded, 0u);
    EXPECT_EQ(s.train.size() + s.test.size(), patches.size());
    EXPECT_EQ(s.train.size(), 8u);
    for (const auto& p : s.train) EXPECT_TRUE(p.row0 == 0 || p.row0 == 32);
}

TEST(Bands, OneRowBandsLeaveBothSetsEmpty) {
    const auto s = split_spatial_bands(64, 64, extract_patches(64, 64, 16, 8));
    EXPECT_TRUE(s.train.empty());
    EXPECT_TRUE(s.test.empty());
    EXPECT_TRUE(s.empty_protocol);
}

TEST(Bands, Errors) {
    EXPECT_THROW(make_band_map(10, 11), std::invalid_argument);
    EXPECT_THROW(make_band_map(10, 1), std::invalid_argument);
}

TEST(Bands, DisjointCoverageAndNoLeakage) {
    for (const std::size_t bands : {2u, 3u, 5u, 7u, 30u}) {
        const std::size_t rows = 600, cols = 40;
        const auto s = split_spatial_bands(rows, bands, extract_patches(rows, cols, 16, 8));
        const auto test = test_band_mask(s.map, cols);
        for (std::size_t r = 0; r < rows; ++r) {
            const auto b = s.map.band_of_row[r];
            EXPECT_GE(b, 1u);
            EXPECT_LE(b, bands);
            EXPECT_EQ(test[r * cols] != 0, !s.map.row_is_train(r));
        }
        for (const auto& p : s.train)
            for (std::size_t r = p.row0; r < p.row0 + p.size; ++r)
                for (std::size_t c = p.col0; c < p.col0 + p.size; ++c) ASSERT_EQ(test[r * cols + c], 0);
        for (const auto& p : s.test)
            for (std::size_t r = p.row0; r < p.row0 + p.size; ++r) ASSERT_EQ(test[r * cols], 1);
    }
}

TEST(Manifest, RoundTrip) {
    testing_support::TempDir dir("manifest");
    auto p = extract_patches(40, 40, 16, 8);
    for (std::size_t i = 0; i < p.size(); ++i) p[i].membership = static_cast<Membership>(i % 4);
    write_split_manifest(dir / "split.csv", p);
    EXPECT_EQ(read_split_manifest(dir / "split.csv", 16), p);
}
