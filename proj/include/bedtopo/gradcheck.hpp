#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "bedtopo/model.hpp"

namespace bedtopo::nn {

// |a - b| / max(1e-8, |a| + |b|)
double relative_error(double a, double b);

struct GradCheckOptions {
    double step = 1e-5;        // central-difference half-width
    double tolerance = 1e-3;   // max relative error per parameter
    double readout_scale = 1e-3;  // loss = readout_scale * sum(w_i * out_i) / numel, w_i ~ U(-1, 1)
    std::uint64_t seed = 7;
    // Retry with step/10 (at most twice) when a ReLU crosses its kink inside the stencil.
    int kink_retries = 2;
    std::size_t chunk = 2;  // elements evaluated together
};

struct ParamCheck {
    std::string name;
    std::size_t count = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    std::size_t failures = 0;
    double seconds = 0.0;
};

struct GradCheckReport {
    std::vector<ParamCheck> params;
    std::size_t checked = 0;
    std::size_t failures = 0;
    std::size_t kink_retries = 0;
    double max_rel_error = 0.0;
    double seconds = 0.0;

    bool passed() const { return failures == 0 && checked > 0; }
};

// Scalar loss L = readout . model(input) evaluated in train mode with the dropout masks and
// parameters currently held by `model`, recomputed from scratch through the pure layer functions.
double full_forward_readout(const BedTopoCNN& model, const Tensor4& input, const std::vector<double>& readout);

// Evaluates the same loss after perturbing a single parameter element, recomputing only the
// activations the element can influence. Requires a train-mode forward pass on `model` beforehand.
// Several perturbations are stacked along the batch axis (batch statistics stay per perturbation).
class StagedEvaluator {
public:
    struct Perturbation {
        std::size_t element = 0;
        double value = 0.0;
    };

    StagedEvaluator(BedTopoCNN& model, std::vector<double> readout);

    // Loss with the model's current value of parameter `param_index` (index into model.parameters()).
    // Sets `kink` when a ReLU input changed sign relative to the cached forward pass.
    double loss(std::size_t param_index, std::size_t element, bool& kink) const;

    // One loss per perturbation; all perturbations must share channel_of(param_index, element).
    // The parameter itself is left unchanged.
    std::vector<double> losses(std::size_t param_index, std::span<const Perturbation> batch,
                               std::vector<char>& kinks) const;

    // Output channel an element belongs to (0 for head parameters).
    std::size_t channel_of(std::size_t param_index, std::size_t element) const;

private:
    enum class Group { pre_activation, post_block, skip, head };
    struct Role {
        std::size_t block = 0;
        Group group = Group::head;
        int which = 0;  // 0 conv weight, 1 conv bias, 2 bn gamma, 3 bn beta
    };

    std::vector<double> run_from_block(std::size_t block, Tensor4 x, std::vector<char>& kinks) const;
    std::vector<double> propagate_channel(std::size_t block, std::size_t channel, const Tensor4& delta,
                                          std::vector<char>& kinks) const;
    std::vector<double> head_losses(const Tensor4& h) const;

    BedTopoCNN& model_;
    std::vector<double> readout_;
    std::vector<Role> roles_;
    std::size_t batch_ = 1;  // samples per perturbation
};

// Full-model check: every parameter's analytic gradient against central finite differences.
GradCheckReport check_model_gradients(BedTopoCNN& model, const Tensor4& input, const GradCheckOptions& options);

}  // namespace bedtopo::nn
