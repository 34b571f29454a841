#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "bedtopo/error.hpp"
#include "bedtopo/inference.hpp"
#include "tiny_problem.hpp"

using namespace bedtopo;
using namespace bedtopo::testing_support;

namespace {

// Model whose output is the constant offset + scale * c.
nn::BedTopoCNN constant_model(double c) {
    nn::BedTopoCNN m(tiny_model());
    std::fill(m.head().weight.value.begin(), m.head().weight.value.end(), 0.0);
    m.head().bias.value[0] = c;
    return m;
}

}  // namespace

TEST(Stitch, CoverageCountsMatchGeometry) {
    const auto patches = extract_patches(32, 32, 16, 8);
    StitchAccumulator acc(32, 32);
    for (const auto& p : patches) acc.add(p, std::vector<double>(256, 1.0));
    for (std::size_t r = 0; r < 32; ++r)
        for (std::size_t c = 0; c < 32; ++c) {
            std::size_t want = 0;
            for (std::size_t r0 : {0u, 8u, 16u})
                for (std::size_t c0 : {0u, 8u, 16u}) want += r >= r0 && r < r0 + 16 && c >= c0 && c < c0 + 16;
            EXPECT_EQ(acc.count()[r * 32 + c], want) << r << "," << c;
        }
    EXPECT_EQ(acc.count()[0], 1u);
    EXPECT_EQ(acc.count()[31], 1u);
    EXPECT_EQ(acc.count()[16 * 32 + 16], 4u);
    EXPECT_EQ(acc.count()[8 * 32 + 8], 4u);
}

TEST(Stitch, UncoveredCellsAreAnError) {
    StitchAccumulator acc(20, 20);
    acc.add({0, 0, 16}, std::vector<double>(256, 2.0));
    EXPECT_THROW(acc.finish({}), StateError);
    const auto g = acc.finish({}, {}, false);
    EXPECT_TRUE(g.valid(0, 0));
    EXPECT_FALSE(g.valid(19, 19));
    EXPECT_THROW(acc.add({10, 10, 16}, std::vector<double>(256)), DimensionError);
}

TEST(Stitch, OrderInvariantAveraging) {
    std::mt19937_64 rng(1);
    auto patches = extract_patches(40, 40, 16, 4);
    std::vector<std::vector<double>> values(patches.size(), std::vector<double>(256));
    for (auto& v : values)
        for (auto& x : v) x = nn::uniform01(rng);
    StitchAccumulator a(40, 40);
    for (std::size_t i = 0; i < patches.size(); ++i) a.add(patches[i], values[i]);
    std::vector<std::size_t> order(patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    StitchAccumulator b(40, 40);
    for (auto i : order) b.add(patches[i], values[i]);
    const auto ga = a.finish({}), gb = b.finish({});
    for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_NEAR(ga.values()[i], gb.values()[i], 1e-14);
}

TEST(Predict, DisjointTilingIsExact) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    m.set_output_affine(100.0, 50.0);
    const auto grid = predict_full_grid(m, p.features, 8, 8, 3);
    const auto tiles = extract_patches(32, 32, 8, 8);
    EXPECT_EQ(tiles.size(), 16u);
    for (const auto& t : tiles) {
        const auto b = assemble_batch(p.features, p.targets, std::span(&t, 1));
        const auto out = m.forward(b.input, nn::Mode::eval);
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(grid.at(t.row0 + r, t.col0 + c), out.at(0, 0, r, c));
    }
}

TEST(Predict, ConstantModelGivesConstantGrid) {
    const auto p = tiny_problem(37, 29);
    auto m = constant_model(0.75);
    m.set_output_affine(10.0, 4.0);
    const auto grid = predict_full_grid(m, p.features, 16, 8);
    for (double v : grid.values()) EXPECT_DOUBLE_EQ(v, 13.0);
    EXPECT_EQ(grid.valid_count(), grid.size());
}

TEST(Predict, BatchSizeDoesNotChangeResult) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    const auto a = predict_full_grid(m, p.features, 8, 4, 1);
    const auto b = predict_full_grid(m, p.features, 8, 4, 7);
    EXPECT_EQ(a, b);
    for (double v : a.values()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Predict, InvalidFeatureCellsFlagged) {
    auto p = tiny_problem();
    p.features.valid[5] = 0;
    nn::BedTopoCNN m(tiny_model());
    const auto g = predict_full_grid(m, p.features, 8, 8);
    EXPECT_FALSE(g.validity()[5]);
    EXPECT_TRUE(g.validity()[6]);
}

TEST(Difference, PredictionMinusReference) {
    auto a = ElevationGrid::filled(3, 3, {}, 5.0);
    auto b = ElevationGrid::filled(3, 3, {}, 2.0);
    b.set_valid(1, 1, false);
    const auto d = difference_grid(a, b);
    EXPECT_EQ(d.at(0, 0), 3.0);
    EXPECT_FALSE(d.valid(1, 1));
    EXPECT_THROW(difference_grid(a, ElevationGrid::filled(3, 4, {})), DimensionError);
}
