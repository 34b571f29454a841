#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bedtopo/tensor.hpp"

namespace bedtopo::nn {

enum class Mode { train, eval };

// A named trainable array and its accumulated gradient.
struct Param {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double> value;
    std::vector<double> grad;

    Param() = default;
    Param(std::string name, std::vector<std::size_t> dims);
    std::size_t size() const { return value.size(); }
    void zero_grad();
};

// Uniform [0, 1) with 53 random bits; platform independent for a given engine state.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Same-size cross-correlation: 3x3 kernels pad by 1, 1x1 kernels do not pad.
// kernel layout: (out, in, k, k); bias: (out).
Tensor4 conv2d_forward(const Tensor4& input, std::span<const double> kernel, std::span<const double> bias,
                       std::size_t out_channels, std::size_t ksize);

struct ConvGrads {
    Tensor4 grad_input;
    std::vector<double> grad_kernel;
    std::vector<double> grad_bias;
};

ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& input, std::span<const double> kernel,
                          std::size_t ksize);

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t ksize);

    void init(std::mt19937_64& rng);
    Tensor4 forward(const Tensor4& input);
    // Accumulates into weight.grad / bias.grad and returns the input gradient.
    Tensor4 backward(const Tensor4& grad_out);
    void clear_cache() { cached_ = false; input_ = {}; }

    std::size_t in_channels() const { return in_; }
    std::size_t out_channels() const { return out_; }
    std::size_t ksize() const { return k_; }

    Param weight;
    Param bias;

private:
    std::size_t in_ = 0, out_ = 0, k_ = 3;
    Tensor4 input_;
    bool cached_ = false;
};

// Per-channel batch normalization. Train mode uses batch statistics (biased variance) and
// updates running statistics with `momentum` (unbiased variance); eval mode uses running statistics.
class BatchNorm2d {
public:
    BatchNorm2d() = default;
    BatchNorm2d(const std::string& name, std::size_t channels, double momentum = 0.1, double eps = 1e-5);

    Tensor4 forward(const Tensor4& input, Mode mode);
    Tensor4 backward(const Tensor4& grad_out);
    void clear_cache() { cached_ = false; xhat_ = {}; }

    // Train-mode normalization without touching running statistics.
    static Tensor4 normalize_batch(const Tensor4& input, std::span<const double> gamma, std::span<const double> beta,
                                   double eps);
    // Same for the single channel `ch`; writes only that channel of `out`.
    static void normalize_channel(const Tensor4& input, std::size_t ch, double gamma, double beta, double eps,
                                  Tensor4& out);

    std::size_t channels() const { return gamma.size(); }
    double momentum() const { return momentum_; }
    double eps() const { return eps_; }

    Param gamma;
    Param beta;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    // Statistics of the most recent train-mode batch.
    std::vector<double> batch_mean;
    std::vector<double> batch_var;

private:
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    Mode mode_ = Mode::train;
    Shape4 shape_;
    std::vector<double> xhat_;
    std::vector<double> inv_std_;
    bool cached_ = false;
};

// Inverted dropout; the mask holds 0 or 1/(1-rate) per element.
class Dropout {
public:
    explicit Dropout(double rate = 0.0) : rate_(rate) {}

    Tensor4 forward(const Tensor4& input, Mode mode, std::mt19937_64& rng);
    Tensor4 backward(const Tensor4& grad_out) const;

    double rate() const { return rate_; }
    const std::vector<double>& mask() const { return mask_; }

private:
    double rate_ = 0.0;
    std::vector<double> mask_;  // empty means identity
};

Tensor4 relu(const Tensor4& x);
// grad * [activation > 0], with `activation` the ReLU output (or input).
Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& activation);

}  // namespace bedtopo::nn
