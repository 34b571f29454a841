#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "bedtopo/features.hpp"
#include "bedtopo/model.hpp"
#include "bedtopo/patches.hpp"
#include "bedtopo/train.hpp"

namespace bedtopo::testing_support {

// Small smooth regression problem: 5 feature channels, radar on every 6th row, reference elsewhere.
struct TinyProblem {
    FeatureTensor features;
    TrainingTargets targets;
    std::vector<PatchIndex> patches;
};

inline TinyProblem tiny_problem(std::size_t rows = 32, std::size_t cols = 32, std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    TinyProblem p;
    auto& f = p.features;
    f.channels = 5;
    f.rows = rows;
    f.cols = cols;
    f.geo = {0, 0, 150, 150};
    f.values.resize(5 * rows * cols);
    f.valid.assign(rows * cols, 1);
    f.stats.assign(5, {});
    for (std::size_t c = 0; c < 5; ++c) f.names.push_back("f" + std::to_string(c));
    const double a = u(rng), b = u(rng);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const double x = static_cast<double>(c) / static_cast<double>(cols), y = static_cast<double>(r) / static_cast<double>(rows);
            const std::size_t i = r * cols + c;
            f.values[0 * rows * cols + i] = std::sin(3 * x + a);
            f.values[1 * rows * cols + i] = std::cos(2 * y + b);
            f.values[2 * rows * cols + i] = x - y;
            f.values[3 * rows * cols + i] = 0.3 * u(rng);
            f.values[4 * rows * cols + i] = x * y;
        }
    auto& t = p.targets;
    t.rows = rows;
    t.cols = cols;
    t.radar.assign(rows * cols, 0.0);
    t.reference.assign(rows * cols, 0.0);
    t.radar_mask.assign(rows * cols, 0);
    t.reference_mask.assign(rows * cols, 0);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double bed = 500 + 200 * f.values[i] - 150 * f.values[rows * cols + i] + 80 * f.values[2 * rows * cols + i];
            if (r % 6 == 2) {
                t.radar_mask[i] = 1;
                t.radar[i] = bed;
            } else {
                t.reference_mask[i] = 1;
                t.reference[i] = bed + 30 * std::sin(0.5 * static_cast<double>(r));
            }
        }
    p.patches = extract_patches(rows, cols, 8, 4);
    return p;
}

inline nn::ModelConfig tiny_model(std::uint64_t seed = 5, double dropout = 0.0) {
    nn::ModelConfig m;
    m.input_channels = 5;
    m.filters = {4, 4, 8, 8, 8};
    m.dropout = dropout;
    m.seed = seed;
    return m;
}

}  // namespace bedtopo::testing_support
