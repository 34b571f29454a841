#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bedtopo/layers.hpp"
#include "bedtopo/tensor.hpp"

namespace bedtopo::nn {

// Intermediate activations of one residual block from the latest forward pass.
struct BlockTrace {
    Tensor4 x;     // block input
    Tensor4 z1;    // conv1
    Tensor4 r1;    // relu(bn1(z1))
    Tensor4 d1;    // dropout(r1)
    Tensor4 z2;    // conv2
    Tensor4 a2;    // bn2(z2)
    Tensor4 skip;  // projection or identity of x
    Tensor4 y;     // relu(a2 + skip)
};

// conv3x3 -> BN -> ReLU -> dropout -> conv3x3 -> BN -> (+ skip) -> ReLU.
// The skip path is a 1x1 convolution when the channel count changes.
class ResidualBlock {
public:
    ResidualBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, double dropout,
                  double bn_momentum, double bn_eps);

    void init(std::mt19937_64& rng);
    Tensor4 forward(const Tensor4& x, Mode mode, std::mt19937_64& rng);
    Tensor4 backward(const Tensor4& grad_out);

    std::size_t in_channels() const { return conv1.in_channels(); }
    std::size_t out_channels() const { return conv1.out_channels(); }
    bool has_projection() const { return proj.has_value(); }
    std::vector<Param*> parameters();

    Conv2d conv1;
    BatchNorm2d bn1;
    Dropout drop;
    Conv2d conv2;
    BatchNorm2d bn2;
    std::optional<Conv2d> proj;
    BlockTrace trace;
};

struct ModelConfig {
    static constexpr std::size_t kBlocks = 5;

    std::size_t input_channels = 20;
    std::vector<std::size_t> filters{32, 64, 128, 256, 256};
    double dropout = 0.1;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    std::uint64_t seed = 0;
};

// Five residual blocks followed by a 1x1 convolution to one channel. The head output o is
// mapped to target units as output_offset + output_scale * o (fixed, not trained).
class BedTopoCNN {
public:
    explicit BedTopoCNN(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    Tensor4 forward(const Tensor4& input, Mode mode);
    // Gradients for every parameter, accumulated into Param::grad. Requires a preceding forward.
    Tensor4 backward(const Tensor4& grad_out);

    // Checkpoint order: blocks in sequence (conv1, bn1, conv2, bn2, proj), then the head.
    std::vector<Param*> parameters();
    std::vector<const Param*> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    void set_output_affine(double offset, double scale);
    double output_offset() const { return out_offset_; }
    double output_scale() const { return out_scale_; }

    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

    std::vector<ResidualBlock>& blocks() { return blocks_; }
    const std::vector<ResidualBlock>& blocks() const { return blocks_; }
    Conv2d& head() { return head_; }
    const Conv2d& head() const { return head_; }
    // Head input and raw head output from the latest forward pass.
    const Tensor4& head_input() const { return head_in_; }

private:
    ModelConfig config_;
    std::vector<ResidualBlock> blocks_;
    Conv2d head_;
    double out_offset_ = 0.0;
    double out_scale_ = 1.0;
    std::mt19937_64 dropout_rng_;
    Tensor4 head_in_;
    bool has_forward_ = false;
};

// Checkpoint container entries.
struct NamedArray {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double> values;
};

// BTCK: "BTCK", u32 version, u32 entry count, then per entry
// {u32 name length, name bytes, u32 ndims, u32 dims[ndims], f64 values[prod(dims)]}.
std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> entries);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

// Configuration, parameters and batch-norm running statistics.
std::vector<NamedArray> model_to_arrays(const BedTopoCNN& model);
BedTopoCNN model_from_arrays(std::span<const NamedArray> entries);

struct Checkpoint {
    BedTopoCNN model;
    std::vector<NamedArray> extras;  // entries not owned by the model (e.g. optimizer moments)
};

void save_checkpoint(const std::filesystem::path& path, const BedTopoCNN& model,
                     std::span<const NamedArray> extras = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bedtopo::nn
