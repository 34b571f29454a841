#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "bedtopo/error.hpp"
#include "bedtopo/train.hpp"
#include "loss_oracle.hpp"
#include "test_support.hpp"
#include "tiny_problem.hpp"

using namespace bedtopo;
using namespace bedtopo::testing_support;

namespace {

TrainConfig quick(std::size_t iterations) {
    TrainConfig c;
    c.batch_size = 4;
    c.max_iterations = iterations;
    c.patience = iterations;
    c.base_lr = 1e-4;
    c.max_lr = 3e-3;
    c.half_period = 20;
    c.validation_interval = 5;
    c.seed = 3;
    return c;
}

}  // namespace

TEST(TrainConfig, Validation) {
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.patience = c.max_iterations + 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.base_lr = 2e-3;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.batch_size = 0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Batch, AssemblyCopiesPatchWindows) {
    const auto p = tiny_problem();
    const std::vector<PatchIndex> two{p.patches[3], p.patches[10]};
    const auto b = assemble_batch(p.features, p.targets, two);
    EXPECT_EQ(b.input.shape(), (nn::Shape4{2, 5, 8, 8}));
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t r = 0; r < 8; ++r)
                for (std::size_t q = 0; q < 8; ++q) {
                    ASSERT_EQ(b.input.at(k, c, r, q), p.features.at(c, two[k].row0 + r, two[k].col0 + q));
                    const auto g = (two[k].row0 + r) * 32 + two[k].col0 + q;
                    ASSERT_EQ(b.radar_mask[k * 64 + r * 8 + q], p.targets.radar_mask[g]);
                }
}

TEST(Train, FirstIterationMatchesRecomputation) {
    const auto p = tiny_problem();
    auto cfg = quick(1);
    nn::BedTopoCNN model(tiny_model());
    const auto res = train(model, p.features, p.targets, p.patches, {}, cfg);
    ASSERT_EQ(res.trace.size(), 1u);

    // Same batch drawn independently: seeded shuffle of the patch indices, first batch_size entries.
    std::vector<std::size_t> order(p.patches.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<PatchIndex> batch;
    for (std::size_t k = 0; k < cfg.batch_size; ++k) batch.push_back(p.patches[order[k]]);

    nn::BedTopoCNN fresh(tiny_model());
    fit_output_affine(fresh, p.targets, p.patches);
    const auto b = assemble_batch(p.features, p.targets, batch);
    const auto out = fresh.forward(b.input, nn::Mode::train);
    std::vector<double> pred = out.vec();
    const std::vector<double> radar = b.radar, ref = b.reference;
    const std::vector<std::uint8_t> rm = b.radar_mask, mm = b.reference_mask;
    const double lr = oracle::masked_mse(pred, radar, rm), lm = oracle::masked_mse(pred, ref, mm);
    const auto& got = res.trace[0].loss;
    EXPECT_NEAR(got.l_r, lr, 1e-9 * lr);
    EXPECT_NEAR(got.l_m, lm, 1e-9 * lm);
    EXPECT_NEAR(got.gamma_r, lm / (lr + lm + cfg.loss_epsilon), 1e-12);
    EXPECT_NEAR(got.total, 2 * lr * lm / (lr + lm), 1e-9 * got.total);
    EXPECT_EQ(res.trace[0].lr, cfg.base_lr);
}

TEST(Train, DeterministicTraces) {
    const auto p = tiny_problem();
    const auto split = split_random(p.patches, 0.8, 1);
    auto cfg = quick(30);
    nn::BedTopoCNN a(tiny_model(5, 0.1)), b(tiny_model(5, 0.1));
    const auto ra = train(a, p.features, p.targets, split.train, split.validation, cfg);
    const auto rb = train(b, p.features, p.targets, split.train, split.validation, cfg);
    ASSERT_EQ(ra.trace.size(), rb.trace.size());
    for (std::size_t i = 0; i < ra.trace.size(); ++i) {
        EXPECT_EQ(ra.trace[i].loss.total, rb.trace[i].loss.total);
        EXPECT_EQ(std::isnan(ra.trace[i].val_loss), std::isnan(rb.trace[i].val_loss));
        if (!std::isnan(ra.trace[i].val_loss)) EXPECT_EQ(ra.trace[i].val_loss, rb.trace[i].val_loss);
    }
    for (std::size_t k = 0; k < a.parameters().size(); ++k)
        EXPECT_EQ(a.parameters()[k]->value, b.parameters()[k]->value);
}

TEST(Train, LossDecreases) {
    const auto p = tiny_problem();
    const auto split = split_random(p.patches, 0.8, 1);
    nn::BedTopoCNN m(tiny_model());
    auto cfg = quick(150);
    cfg.half_period = 75;
    const auto res = train(m, p.features, p.targets, split.train, split.validation, cfg);
    double first = NAN;
    for (const auto& r : res.trace)
        if (!std::isnan(r.val_loss)) {
            if (std::isnan(first)) first = r.val_loss;
        }
    EXPECT_LT(res.best_val_loss, 0.5 * first);
}

TEST(Train, BestCheckpointHasLowestValidationLoss) {
    const auto p = tiny_problem();
    const auto split = split_random(p.patches, 0.8, 2);
    nn::BedTopoCNN m(tiny_model());
    auto cfg = quick(60);
    const auto res = train(m, p.features, p.targets, split.train, split.validation, cfg);
    for (const auto& r : res.trace)
        if (!std::isnan(r.val_loss)) EXPECT_LE(res.best_val_loss, r.val_loss);
    auto best = res.best_model;
    const auto again = evaluate_loss(best, p.features, p.targets, split.validation, cfg.loss_epsilon, true, cfg.batch_size);
    EXPECT_EQ(again.total, res.best_val_loss);
    EXPECT_FALSE(res.validated_on_training_loss);
}

TEST(Train, PatienceZeroStopsAtFirstNonImprovingCheck) {
    const auto p = tiny_problem();
    const auto split = split_random(p.patches, 0.8, 3);
    nn::BedTopoCNN m(tiny_model());
    auto cfg = quick(400);
    cfg.patience = 0;
    cfg.validation_interval = 2;
    cfg.max_lr = 5e-2;  // noisy enough that some check fails to improve
    const auto res = train(m, p.features, p.targets, split.train, split.validation, cfg);
    ASSERT_TRUE(res.early_stopped);
    std::vector<double> checks;
    for (const auto& r : res.trace)
        if (!std::isnan(r.val_loss)) checks.push_back(r.val_loss);
    ASSERT_GE(checks.size(), 2u);
    double best = INFINITY;
    for (std::size_t i = 0; i + 1 < checks.size(); ++i) {
        EXPECT_LT(checks[i], best);
        best = checks[i];
    }
    EXPECT_GE(checks.back(), best);
    EXPECT_EQ(res.iterations_run, res.trace.back().iteration);
}

TEST(Train, WithoutValidationUsesTrainingLoss) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    const auto res = train(m, p.features, p.targets, p.patches, {}, quick(10));
    EXPECT_TRUE(res.validated_on_training_loss);
    EXPECT_EQ(res.trace.size(), 10u);
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += res.trace[i].loss.total;
    EXPECT_NEAR(res.trace[4].val_loss, s / 5, 1e-12 * s);
}

TEST(Train, RadarOnlyModeUsesRadarPatches) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    auto cfg = quick(12);
    cfg.use_reference_loss = false;
    const auto res = train(m, p.features, p.targets, p.patches, {}, cfg);
    for (const auto& r : res.trace) {
        EXPECT_GT(r.loss.radar_pixel_count, 0u);
        EXPECT_EQ(r.loss.gamma_r, 1.0);
        EXPECT_EQ(r.loss.total, r.loss.l_r);
    }
}

TEST(Train, Errors) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    EXPECT_THROW(train(m, p.features, p.targets, {}, {}, quick(5)), std::invalid_argument);
    nn::ModelConfig wrong = tiny_model();
    wrong.input_channels = 6;
    nn::BedTopoCNN w(wrong);
    EXPECT_THROW(train(w, p.features, p.targets, p.patches, {}, quick(5)), DimensionError);
}

TEST(Train, DivergenceReportsIteration) {
    auto p = tiny_problem();
    for (auto& v : p.targets.radar) v *= 1e306;
    for (auto& v : p.targets.reference) v *= 1e306;
    nn::BedTopoCNN m(tiny_model());
    try {
        train(m, p.features, p.targets, p.patches, {}, quick(5));
        FAIL() << "expected divergence";
    } catch (const NumericalError& e) {
        EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos) << e.what();
    }
}

TEST(Train, TraceCsv) {
    const auto p = tiny_problem();
    nn::BedTopoCNN m(tiny_model());
    const auto res = train(m, p.features, p.targets, p.patches, {}, quick(6));
    TempDir dir("trace");
    write_trace_csv(dir / "t.csv", res.trace);
    std::ifstream in(dir / "t.csv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "iteration,lr,l_r,l_m,gamma_r,gamma_m,total,val_loss");
    std::size_t rows = 0, with_val = 0;
    while (std::getline(in, line)) {
        ++rows;
        with_val += line.back() != ',';
    }
    EXPECT_EQ(rows, 6u);
    EXPECT_EQ(with_val, 2u);  // iterations 5 and 6
}
