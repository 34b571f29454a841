#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "bedtopo/baselines.hpp"
#include "bedtopo/error.hpp"
#include "test_support.hpp"

using namespace bedtopo;
using namespace bedtopo::testing_support;

namespace {

std::vector<ObservationPoint> random_points(std::size_t n, std::mt19937_64& rng, double extent = 20.0) {
    std::vector<ObservationPoint> p;
    for (std::size_t i = 0; i < n; ++i) p.push_back({uniform(rng, 0, extent), uniform(rng, 0, extent), uniform(rng, -200, 800)});
    return p;
}

// Brute-force k nearest, ordered like the index.
std::vector<std::size_t> brute_knn(const std::vector<ObservationPoint>& pts, double x, double y, std::size_t k,
                                   double maxd) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < pts.size(); ++i)
        if (std::hypot(pts[i].x - x, pts[i].y - y) <= maxd) idx.push_back(i);
    auto key = [&](std::size_t i) {
        const double dx = pts[i].x - x, dy = pts[i].y - y;
        return std::make_tuple(dx * dx + dy * dy, pts[i].y, pts[i].x, pts[i].bed, i);
    };
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return key(a) < key(b); });
    if (idx.size() > k) idx.resize(k);
    return idx;
}

}  // namespace

TEST(Knn, MatchesBruteForce) {
    std::mt19937_64 rng(1);
    auto pts = random_points(500, rng, 100);
    for (int i = 0; i < 30; ++i) pts.push_back({std::floor(uniform(rng, 0, 10)), std::floor(uniform(rng, 0, 10)), 1.0});  // ties
    const KnnIndex index(pts);
    for (int t = 0; t < 100; ++t) {
        const double x = uniform(rng, -20, 120), y = uniform(rng, -20, 120);
        const std::size_t k = 1 + rng() % 40;
        const double maxd = t % 4 == 0 ? 15.0 : 1e10;
        EXPECT_EQ(index.query(x, y, k, maxd), brute_knn(pts, x, y, k, maxd)) << t;
    }
}

TEST(Idw, ExactHit) {
    const std::vector<ObservationPoint> pts{{1, 1, 100}, {3, 2, 7}, {5, 5, -4}};
    const KnnIndex index(pts);
    const Point2 at[] = {{1, 1}};
    EXPECT_EQ(idw_at(index, at, {})[0], 100.0);
}

TEST(Idw, HandWeighting) {
    const std::vector<ObservationPoint> pts{{1, 0, 0}, {0, 2, 10}};
    const KnnIndex index(pts);
    const Point2 at[] = {{0, 0}};
    EXPECT_DOUBLE_EQ(idw_at(index, at, {})[0], 2.0);
}

TEST(Idw, ConstantFieldAndConvexity) {
    std::mt19937_64 rng(2);
    auto pts = random_points(200, rng);
    for (auto& p : pts) p.bed = 42.0;
    const KnnIndex flat(pts);
    std::vector<Point2> at;
    for (int i = 0; i < 50; ++i) at.push_back({uniform(rng, -5, 25), uniform(rng, -5, 25)});
    for (double v : idw_at(flat, at, {})) EXPECT_NEAR(v, 42.0, 1e-12);

    const auto var = random_points(200, rng);
    const KnnIndex index(var);
    IdwConfig cfg;
    cfg.k = 12;
    const auto vals = idw_at(index, at, cfg);
    for (std::size_t t = 0; t < at.size(); ++t) {
        const auto nb = index.query(at[t].x, at[t].y, 12, 1e10);
        double lo = INFINITY, hi = -INFINITY;
        for (auto i : nb) {
            lo = std::min(lo, var[i].bed);
            hi = std::max(hi, var[i].bed);
        }
        EXPECT_GE(vals[t], lo - 1e-9);
        EXPECT_LE(vals[t], hi + 1e-9);
    }
}

TEST(Idw, PermutationInvariant) {
    std::mt19937_64 rng(3);
    auto pts = random_points(300, rng);
    std::vector<Point2> at;
    for (int i = 0; i < 40; ++i) at.push_back({uniform(rng, 0, 20), uniform(rng, 0, 20)});
    IdwConfig cfg;
    cfg.k = 10;
    const auto a = idw_at(KnnIndex(pts), at, cfg);
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto b = idw_at(KnnIndex(pts), at, cfg);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * std::abs(a[i]) + 1e-12);
}

TEST(Idw, ThresholdLeavesCellsInvalid) {
    const std::vector<ObservationPoint> pts{{0.5, 0.5, 3.0}};
    const KnnIndex index(pts);
    IdwConfig cfg;
    cfg.threshold = 1.0;
    const Point2 at[] = {{0.5, 1.2}, {5, 5}};
    const auto v = idw_at(index, at, cfg);
    EXPECT_EQ(v[0], 3.0);
    EXPECT_TRUE(std::isnan(v[1]));

    const auto layout = ElevationGrid::filled(6, 6, GeoTransform{0, 0, 1, 1});
    const auto obs = rasterize_points(pts, layout);
    const auto g = idw_predict(obs, layout, cfg).grid;
    EXPECT_TRUE(g.valid(0, 0));
    EXPECT_FALSE(g.valid(5, 5));
}

TEST(Idw, ConfigValidation) {
    IdwConfig c;
    c.k = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.power = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Rbf, SingleCenter) {
    const std::vector<ObservationPoint> c{{3, 4, 5}};
    RbfConfig cfg;
    cfg.ridge = 0;
    const auto m = RbfModel::fit(c, cfg);
    EXPECT_NEAR(m(3, 4), 5.0, 1e-12);
}

TEST(Rbf, MultiquadricConvention) {
    EXPECT_EQ(multiquadric(0, 2), 1.0);
    EXPECT_DOUBLE_EQ(multiquadric(2, 2), std::sqrt(2.0));
    EXPECT_DOUBLE_EQ(multiquadric(6, 2), std::sqrt(10.0));
}

TEST(Rbf, RidgeZeroInterpolates) {
    std::vector<ObservationPoint> c;
    std::mt19937_64 rng(4);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) c.push_back({4.0 * i + 0.5, 4.0 * j + 0.5, uniform(rng, -100, 900)});
    RbfConfig cfg;
    cfg.ridge = 0;
    const auto m = RbfModel::fit(c, cfg);
    for (const auto& p : c) EXPECT_NEAR(m(p.x, p.y), p.bed, 1e-8);
}

TEST(Rbf, RidgeResidualsSmall) {
    std::mt19937_64 rng(5);
    const auto pts = random_points(50, rng, 128 * 150.0);  // map coordinates, metres
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& p : pts) {
        lo = std::min(lo, p.bed);
        hi = std::max(hi, p.bed);
    }
    const auto m = RbfModel::fit(pts, RbfConfig{});
    for (const auto& p : pts) EXPECT_LE(std::abs(m(p.x, p.y) - p.bed), 1e-3 * (hi - lo));
}

TEST(Rbf, SymmetricPairBisector) {
    const std::vector<ObservationPoint> c{{-3, 0, 7}, {3, 0, 7}};
    const auto m = RbfModel::fit(c, RbfConfig{});
    // equal values: the two weights coincide, so the bisector value is symmetric in x
    EXPECT_NEAR(m.weights()[0], m.weights()[1], 1e-12);
    EXPECT_NEAR(m(-1, 2), m(1, 2), 1e-12);
    RbfConfig exact;
    exact.ridge = 0;
    const auto e = RbfModel::fit(c, exact);
    EXPECT_NEAR(e(0, 0), 7.0 * 2 * multiquadric(3, 2) / (multiquadric(0, 2) + multiquadric(6, 2)), 1e-12);
}

TEST(Rbf, CenterSelection) {
    const std::vector<ObservationPoint> dup{{1, 1, 2}, {1, 1, 4}, {2, 2, 9}};
    const auto merged = select_centers(dup, RbfConfig{});
    ASSERT_EQ(merged.size(), 2u);
    EXPECT_EQ(merged[0].bed, 3.0);
    std::mt19937_64 rng(6);
    const auto many = random_points(100, rng);
    RbfConfig cfg;
    cfg.max_centers = 30;
    cfg.seed = 8;
    const auto a = select_centers(many, cfg), b = select_centers(many, cfg);
    EXPECT_EQ(a.size(), 30u);
    for (std::size_t i = 0; i < 30; ++i) EXPECT_EQ(a[i].x, b[i].x);
}

TEST(Rbf, ConfigValidation) {
    RbfConfig c;
    c.epsilon = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.ridge = -1;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Baselines, GridPredictionsOnCellCenters) {
    const auto layout = ElevationGrid::filled(8, 8, GeoTransform{0, 0, 150, 150});
    std::vector<ObservationPoint> pts;
    for (std::size_t c = 0; c < 8; ++c) pts.push_back({layout.cell_center_x(c), layout.cell_center_y(3), 10.0 * c});
    const auto obs = rasterize_points(pts, layout);
    const auto idw = idw_predict(obs, layout, {});
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(idw.grid.at(3, c), 10.0 * c);
    EXPECT_EQ(idw.grid.valid_count(), 64u);
    RbfConfig rc;
    rc.epsilon = 300;
    rc.ridge = 0;
    const auto rbf = rbf_predict(obs, layout, rc);
    EXPECT_EQ(rbf.centers_used, 8u);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(rbf.grid.at(3, c), 10.0 * c, 1e-8);
    const CellIndex only[] = {{0, 0}};
    const auto one = idw_predict(obs, layout, {}, only);
    EXPECT_EQ(one.grid.valid_count(), 1u);
}
