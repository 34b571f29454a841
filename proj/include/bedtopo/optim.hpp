#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "bedtopo/layers.hpp"
#include "bedtopo/model.hpp"

namespace bedtopo::nn {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Moments are allocated lazily on the first step.
class Adam {
public:
    explicit Adam(AdamConfig config = {});

    // Throws NumericalError naming the first parameter with a non-finite gradient; nothing is
    // updated in that case.
    void step(std::span<Param* const> params, double lr);

    std::size_t steps() const { return t_; }
    const AdamConfig& config() const { return cfg_; }
    const std::vector<std::vector<double>>& first_moments() const { return m_; }
    const std::vector<std::vector<double>>& second_moments() const { return v_; }

    // "adam.step", "adam.m.<param>", "adam.v.<param>"
    std::vector<NamedArray> to_arrays(std::span<const Param* const> params) const;
    void from_arrays(std::span<const NamedArray> arrays, std::span<const Param* const> params);

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Triangular cycle: base at iteration 0, max at half_period, base again at 2 * half_period.
double cyclic_lr(std::size_t iteration, double base_lr, double max_lr, std::size_t half_period);

}  // namespace bedtopo::nn
