#include "bedtopo/model.hpp"

#include <algorithm>
#include <map>

#include "bedtopo/binary_io.hpp"
#include "bedtopo/error.hpp"

namespace bedtopo::nn {

namespace {

Tensor4 add(const Tensor4& a, const Tensor4& b) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

void add_into(Tensor4& acc, const Tensor4& b) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += b.data()[i];
}

}  // namespace

ResidualBlock::ResidualBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                             double dropout, double bn_momentum, double bn_eps)
    : conv1(name + ".conv1", in_channels, out_channels, 3),
      bn1(name + ".bn1", out_channels, bn_momentum, bn_eps),
      drop(dropout),
      conv2(name + ".conv2", out_channels, out_channels, 3),
      bn2(name + ".bn2", out_channels, bn_momentum, bn_eps) {
    if (in_channels != out_channels) proj.emplace(name + ".proj", in_channels, out_channels, 1);
}

void ResidualBlock::init(std::mt19937_64& rng) {
    conv1.init(rng);
    conv2.init(rng);
    if (proj) proj->init(rng);
}

Tensor4 ResidualBlock::forward(const Tensor4& x, Mode mode, std::mt19937_64& rng) {
    trace.x = x;
    trace.z1 = conv1.forward(x);
    trace.r1 = relu(bn1.forward(trace.z1, mode));
    trace.d1 = drop.forward(trace.r1, mode, rng);
    trace.z2 = conv2.forward(trace.d1);
    trace.a2 = bn2.forward(trace.z2, mode);
    trace.skip = proj ? proj->forward(x) : x;
    trace.y = relu(add(trace.a2, trace.skip));
    return trace.y;
}

Tensor4 ResidualBlock::backward(const Tensor4& grad_out) {
    const Tensor4 g = relu_backward(grad_out, trace.y);
    Tensor4 gd1 = conv2.backward(bn2.backward(g));
    Tensor4 gx = conv1.backward(bn1.backward(relu_backward(drop.backward(gd1), trace.r1)));
    if (proj)
        add_into(gx, proj->backward(g));
    else
        add_into(gx, g);
    return gx;
}

std::vector<Param*> ResidualBlock::parameters() {
    std::vector<Param*> p{&conv1.weight, &conv1.bias, &bn1.gamma, &bn1.beta,
                          &conv2.weight, &conv2.bias, &bn2.gamma, &bn2.beta};
    if (proj) {
        p.push_back(&proj->weight);
        p.push_back(&proj->bias);
    }
    return p;
}

BedTopoCNN::BedTopoCNN(ModelConfig config) : config_(std::move(config)), dropout_rng_(config_.seed ^ 0x9e3779b97f4a7c15ULL) {
    if (config_.filters.size() != ModelConfig::kBlocks)
        throw std::invalid_argument("BedTopoCNN has exactly 5 residual blocks; got " +
                                    std::to_string(config_.filters.size()) + " filter counts");
    if (config_.input_channels == 0) throw std::invalid_argument("input channel count must be positive");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
    std::size_t in = config_.input_channels;
    for (std::size_t b = 0; b < ModelConfig::kBlocks; ++b) {
        const auto out = config_.filters[b];
        if (out == 0) throw std::invalid_argument("filter counts must be positive");
        blocks_.emplace_back("block" + std::to_string(b + 1), in, out, config_.dropout, config_.bn_momentum,
                             config_.bn_eps);
        in = out;
    }
    head_ = Conv2d("head", in, 1, 1);

    std::mt19937_64 rng(config_.seed);
    for (auto& b : blocks_) b.init(rng);
    head_.init(rng);
}

Tensor4 BedTopoCNN::forward(const Tensor4& input, Mode mode) {
    if (input.c() != config_.input_channels)
        throw DimensionError("model expects " + std::to_string(config_.input_channels) + " input channels, got " +
                             std::to_string(input.c()));
    Tensor4 x = input;
    for (auto& b : blocks_) x = b.forward(x, mode, dropout_rng_);
    head_in_ = x;
    Tensor4 out = head_.forward(x);
    for (auto& v : out.vec()) v = out_offset_ + out_scale_ * v;
    has_forward_ = true;
    return out;
}

Tensor4 BedTopoCNN::backward(const Tensor4& grad_out) {
    if (!has_forward_) throw StateError("model backward called without a cached forward pass");
    Tensor4 g = grad_out;
    for (auto& v : g.vec()) v *= out_scale_;
    g = head_.backward(g);
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) g = it->backward(g);
    has_forward_ = false;
    return g;
}

std::vector<Param*> BedTopoCNN::parameters() {
    std::vector<Param*> out;
    for (auto& b : blocks_) {
        auto p = b.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
}

std::vector<const Param*> BedTopoCNN::parameters() const {
    auto mut = const_cast<BedTopoCNN*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

std::size_t BedTopoCNN::parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->size();
    return n;
}

void BedTopoCNN::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

void BedTopoCNN::set_output_affine(double offset, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("output scale must be positive");
    out_offset_ = offset;
    out_scale_ = scale;
}

namespace {
constexpr std::string_view kCheckpointMagic = "BTCK";
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> entries) {
    io::ByteWriter w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) {
        std::size_t count = 1;
        for (auto d : e.dims) count *= d;
        if (count != e.values.size()) throw DimensionError("checkpoint entry '" + e.name + "' has inconsistent dims");
        w.u32(static_cast<std::uint32_t>(e.name.size()));
        w.bytes(e.name);
        w.u32(static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) w.u32(static_cast<std::uint32_t>(d));
        for (double v : e.values) w.f64(v);
    }
    return w.data();
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    io::ByteReader r(bytes);
    r.expect_magic(kCheckpointMagic, "BTCK checkpoint");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError("BTCK checkpoint: unsupported version " + std::to_string(version));
    const std::size_t n = r.u32();
    std::vector<NamedArray> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        NamedArray e;
        e.name = r.bytes(r.u32());
        const std::size_t nd = r.u32();
        std::size_t count = 1;
        for (std::size_t d = 0; d < nd; ++d) {
            e.dims.push_back(r.u32());
            count *= e.dims.back();
        }
        if (count * 8 > r.remaining()) throw TruncationError("BTCK checkpoint: entry '" + e.name + "' is truncated");
        e.values.resize(count);
        for (auto& v : e.values) v = r.f64();
        out.push_back(std::move(e));
    }
    r.expect_end("BTCK checkpoint");
    return out;
}

std::vector<NamedArray> model_to_arrays(const BedTopoCNN& model) {
    const auto& cfg = model.config();
    std::vector<NamedArray> out;
    out.push_back({"config.input_channels", {1}, {static_cast<double>(cfg.input_channels)}});
    std::vector<double> filters(cfg.filters.begin(), cfg.filters.end());
    out.push_back({"config.filters", {filters.size()}, filters});
    out.push_back({"config.dropout", {1}, {cfg.dropout}});
    out.push_back({"config.batchnorm", {2}, {cfg.bn_momentum, cfg.bn_eps}});
    out.push_back({"config.seed", {2}, {static_cast<double>(cfg.seed >> 32), static_cast<double>(cfg.seed & 0xffffffffULL)}});
    out.push_back({"config.output_affine", {2}, {model.output_offset(), model.output_scale()}});
    for (const auto* p : model.parameters()) out.push_back({p->name, p->dims, p->value});
    for (const auto& b : model.blocks()) {
        for (const auto* bn : {&b.bn1, &b.bn2}) {
            const std::string base = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);
            out.push_back({base + ".running_mean", {bn->channels()}, bn->running_mean});
            out.push_back({base + ".running_var", {bn->channels()}, bn->running_var});
        }
    }
    return out;
}

BedTopoCNN model_from_arrays(std::span<const NamedArray> entries) {
    std::map<std::string, const NamedArray*> by_name;
    for (const auto& e : entries) by_name[e.name] = &e;
    auto get = [&](const std::string& name) -> const NamedArray& {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("checkpoint is missing entry '" + name + "'");
        return *it->second;
    };

    ModelConfig cfg;
    cfg.input_channels = static_cast<std::size_t>(get("config.input_channels").values.at(0));
    cfg.filters.clear();
    for (double f : get("config.filters").values) cfg.filters.push_back(static_cast<std::size_t>(f));
    cfg.dropout = get("config.dropout").values.at(0);
    cfg.bn_momentum = get("config.batchnorm").values.at(0);
    cfg.bn_eps = get("config.batchnorm").values.at(1);
    const auto& seed = get("config.seed").values;
    cfg.seed = (static_cast<std::uint64_t>(seed.at(0)) << 32) | static_cast<std::uint64_t>(seed.at(1));
    BedTopoCNN model(cfg);
    const auto& affine = get("config.output_affine").values;
    model.set_output_affine(affine.at(0), affine.at(1));

    for (auto* p : model.parameters()) {
        const auto& e = get(p->name);
        if (e.dims != p->dims) throw FormatError("checkpoint entry '" + p->name + "' has the wrong shape");
        p->value = e.values;
    }
    for (auto& b : model.blocks()) {
        for (auto* bn : {&b.bn1, &b.bn2}) {
            const std::string base = bn->gamma.name.substr(0, bn->gamma.name.size() - 6);
            const auto& m = get(base + ".running_mean");
            const auto& v = get(base + ".running_var");
            if (m.values.size() != bn->channels() || v.values.size() != bn->channels())
                throw FormatError("checkpoint running statistics for '" + base + "' have the wrong size");
            bn->running_mean = m.values;
            bn->running_var = v.values;
        }
    }
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const BedTopoCNN& model, std::span<const NamedArray> extras) {
    auto entries = model_to_arrays(model);
    entries.insert(entries.end(), extras.begin(), extras.end());
    io::write_file(path, encode_checkpoint(entries));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const auto entries = decode_checkpoint(io::read_file(path));
    Checkpoint ck{model_from_arrays(entries), {}};
    std::vector<std::string> owned;
    for (const auto& a : model_to_arrays(ck.model)) owned.push_back(a.name);
    std::sort(owned.begin(), owned.end());
    for (const auto& e : entries)
        if (!std::binary_search(owned.begin(), owned.end(), e.name)) ck.extras.push_back(e);
    return ck;
}

}  // namespace bedtopo::nn
