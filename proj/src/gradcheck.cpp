#include "bedtopo/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

#include "bedtopo/error.hpp"

namespace bedtopo::nn {

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

namespace {

// Perturbed copies are stacked along n; every group of `batch` samples is one evaluation.

Tensor4 extract_channel(const Tensor4& t, std::size_t c) {
    Tensor4 out({t.n(), 1, t.h(), t.w()});
    const std::size_t hw = t.h() * t.w();
    for (std::size_t b = 0; b < t.n(); ++b) std::copy_n(t.plane(b, c), hw, out.plane(b, 0));
    return out;
}

Tensor4 tile(const Tensor4& t, std::size_t copies) {
    Tensor4 out({t.n() * copies, t.c(), t.h(), t.w()});
    for (std::size_t k = 0; k < copies; ++k) std::copy_n(t.data(), t.size(), out.data() + k * t.size());
    return out;
}

Tensor4 stack(const std::vector<Tensor4>& parts) {
    const Tensor4& f = parts.front();
    Tensor4 out({f.n() * parts.size(), f.c(), f.h(), f.w()});
    for (std::size_t k = 0; k < parts.size(); ++k) std::copy_n(parts[k].data(), f.size(), out.data() + k * f.size());
    return out;
}

// t (stacked) += base (one group) broadcast over groups
void add_tiled(Tensor4& t, const Tensor4& base) {
    const std::size_t g = base.size();
    for (std::size_t off = 0; off < t.size(); off += g) {
        double* d = t.data() + off;
        for (std::size_t i = 0; i < g; ++i) d[i] += base.data()[i];
    }
}

void add_to_channel(Tensor4& t, std::size_t c, const Tensor4& delta) {
    const std::size_t hw = t.h() * t.w();
    for (std::size_t b = 0; b < t.n(); ++b) {
        double* dst = t.plane(b, c);
        const double* src = delta.plane(b, 0);
        for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
}

Tensor4 sum(const Tensor4& a, const Tensor4& b) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    return out;
}

Tensor4 difference(const Tensor4& a, const Tensor4& b) {
    Tensor4 out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
    return out;
}

// Kernel taps producing output channel `c`: contiguous (in, k, k) block.
std::vector<double> out_channel_kernel(const Param& w, std::size_t c) {
    const std::size_t per = w.dims[1] * w.dims[2] * w.dims[3];
    return {w.value.begin() + static_cast<std::ptrdiff_t>(c * per),
            w.value.begin() + static_cast<std::ptrdiff_t>((c + 1) * per)};
}

// Kernel taps reading input channel `c`, as an (out, 1, k, k) kernel.
std::vector<double> in_channel_kernel(const Param& w, std::size_t c) {
    const std::size_t cout = w.dims[0], cin = w.dims[1], kk = w.dims[2] * w.dims[3];
    std::vector<double> out(cout * kk);
    for (std::size_t co = 0; co < cout; ++co)
        std::copy_n(w.value.begin() + static_cast<std::ptrdiff_t>((co * cin + c) * kk), kk,
                    out.begin() + static_cast<std::ptrdiff_t>(co * kk));
    return out;
}

// Multiplies by the cached dropout mask; for a one-channel tensor only channel `channel` of the mask.
void apply_mask(Tensor4& t, const std::vector<double>& mask, std::size_t channel, std::size_t channels) {
    if (mask.empty()) return;
    const std::size_t hw = t.h() * t.w();
    const std::size_t samples = mask.size() / (channels * hw);
    for (std::size_t b = 0; b < t.n(); ++b) {
        const std::size_t sb = b % samples;
        for (std::size_t c = 0; c < t.c(); ++c) {
            const std::size_t mc = t.c() == 1 ? channel : c;
            const double* m = mask.data() + (sb * channels + mc) * hw;
            double* p = t.plane(b, c);
            for (std::size_t i = 0; i < hw; ++i) p[i] *= m[i];
        }
    }
}

// Train-mode batch norm with statistics per group of `batch` samples (same arithmetic as the layer).
Tensor4 grouped_norm(const Tensor4& x, const BatchNorm2d& bn, std::size_t batch) {
    Tensor4 out(x.shape());
    const std::size_t hw = x.h() * x.w();
    const double m = static_cast<double>(batch * hw);
    for (std::size_t g0 = 0; g0 < x.n(); g0 += batch) {
        for (std::size_t ch = 0; ch < x.c(); ++ch) {
            double s = 0.0;
            for (std::size_t b = g0; b < g0 + batch; ++b) {
                const double* p = x.plane(b, ch);
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            const double mean = s / m;
            double ss = 0.0;
            for (std::size_t b = g0; b < g0 + batch; ++b) {
                const double* p = x.plane(b, ch);
                for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
            }
            const double inv = 1.0 / std::sqrt(ss / m + bn.eps());
            const double gamma = bn.gamma.value[ch], beta = bn.beta.value[ch];
            for (std::size_t b = g0; b < g0 + batch; ++b) {
                const double* p = x.plane(b, ch);
                double* q = out.plane(b, ch);
                for (std::size_t i = 0; i < hw; ++i) q[i] = gamma * ((p[i] - mean) * inv) + beta;
            }
        }
    }
    return out;
}

// Flags every group whose pre-activation signs differ from the cached ReLU output.
void mark_kinks(const Tensor4& pre, const Tensor4& reference_post, std::vector<char>& kinks) {
    const std::size_t g = reference_post.size();
    for (std::size_t k = 0; k * g < pre.size(); ++k) {
        if (kinks[k]) continue;
        const double* p = pre.data() + k * g;
        const double* r = reference_post.data();
        bool changed = false;
        for (std::size_t i = 0; i < g; ++i) changed |= (p[i] > 0.0) != (r[i] > 0.0);
        if (changed) kinks[k] = 1;
    }
}

Tensor4 stacked_block_forward(const ResidualBlock& blk, const Tensor4& x, std::size_t batch,
                              std::vector<char>* kinks) {
    const std::size_t cout = blk.out_channels();
    Tensor4 z1 = conv2d_forward(x, blk.conv1.weight.value, blk.conv1.bias.value, cout, 3);
    Tensor4 a1 = grouped_norm(z1, blk.bn1, batch);
    if (kinks) mark_kinks(a1, blk.trace.r1, *kinks);
    Tensor4 d1 = relu(a1);
    apply_mask(d1, blk.drop.mask(), 0, cout);
    Tensor4 z2 = conv2d_forward(d1, blk.conv2.weight.value, blk.conv2.bias.value, cout, 3);
    Tensor4 pre = grouped_norm(z2, blk.bn2, batch);
    if (blk.proj)
        pre = sum(pre, conv2d_forward(x, blk.proj->weight.value, blk.proj->bias.value, cout, 1));
    else
        pre = sum(pre, x);
    if (kinks) mark_kinks(pre, blk.trace.y, *kinks);
    return relu(pre);
}

std::vector<double> readout_losses(const BedTopoCNN& model, const Tensor4& h, const std::vector<double>& readout) {
    const Tensor4 out = conv2d_forward(h, model.head().weight.value, model.head().bias.value, 1, 1);
    const std::size_t g = readout.size();
    if (out.size() % g != 0) throw DimensionError("readout size does not match the model output");
    std::vector<double> losses(out.size() / g, 0.0);
    for (std::size_t k = 0; k < losses.size(); ++k) {
        double l = 0.0;
        for (std::size_t i = 0; i < g; ++i)
            l += readout[i] * (model.output_offset() + model.output_scale() * out.data()[k * g + i]);
        losses[k] = l;
    }
    return losses;
}

}  // namespace

double full_forward_readout(const BedTopoCNN& model, const Tensor4& input, const std::vector<double>& readout) {
    Tensor4 x = input;
    for (const auto& blk : model.blocks()) x = stacked_block_forward(blk, x, input.n(), nullptr);
    return readout_losses(model, x, readout).at(0);
}

StagedEvaluator::StagedEvaluator(BedTopoCNN& model, std::vector<double> readout)
    : model_(model), readout_(std::move(readout)) {
    for (std::size_t b = 0; b < model_.blocks().size(); ++b) {
        const auto& blk = model_.blocks()[b];
        for (int w = 0; w < 4; ++w) roles_.push_back({b, Group::pre_activation, w});
        for (int w = 0; w < 4; ++w) roles_.push_back({b, Group::post_block, w});
        if (blk.proj)
            for (int w = 0; w < 2; ++w) roles_.push_back({b, Group::skip, w});
    }
    roles_.push_back({0, Group::head, 0});
    roles_.push_back({0, Group::head, 1});
    const auto& x = model_.blocks().front().trace.x;
    if (x.size() == 0) throw StateError("gradient check needs a train-mode forward pass first");
    batch_ = x.n();
}

std::vector<double> StagedEvaluator::head_losses(const Tensor4& h) const { return readout_losses(model_, h, readout_); }

std::vector<double> StagedEvaluator::run_from_block(std::size_t block, Tensor4 x, std::vector<char>& kinks) const {
    for (std::size_t b = block; b < model_.blocks().size(); ++b)
        x = stacked_block_forward(model_.blocks()[b], x, batch_, &kinks);
    return head_losses(x);
}

std::vector<double> StagedEvaluator::propagate_channel(std::size_t block, std::size_t channel, const Tensor4& delta,
                                                       std::vector<char>& kinks) const {
    const auto& blocks = model_.blocks();
    const std::size_t copies = delta.n() / batch_;
    if (block == blocks.size()) {
        Tensor4 h = tile(blocks.back().trace.y, copies);
        add_to_channel(h, channel, delta);
        return head_losses(h);
    }
    const auto& blk = blocks[block];
    const auto& t = blk.trace;
    const std::size_t cout = blk.out_channels();
    const std::vector<double> zero(cout, 0.0);

    Tensor4 z1 = conv2d_forward(delta, in_channel_kernel(blk.conv1.weight, channel), zero, cout, 3);
    add_tiled(z1, t.z1);
    Tensor4 skip;
    if (blk.proj) {
        skip = conv2d_forward(delta, in_channel_kernel(blk.proj->weight, channel), zero, cout, 1);
        add_tiled(skip, t.skip);
    } else {
        skip = tile(t.x, copies);
        add_to_channel(skip, channel, delta);
    }
    Tensor4 a1 = grouped_norm(z1, blk.bn1, batch_);
    mark_kinks(a1, t.r1, kinks);
    Tensor4 d1 = relu(a1);
    apply_mask(d1, blk.drop.mask(), 0, cout);
    Tensor4 z2 = conv2d_forward(d1, blk.conv2.weight.value, blk.conv2.bias.value, cout, 3);
    Tensor4 pre = sum(grouped_norm(z2, blk.bn2, batch_), skip);
    mark_kinks(pre, t.y, kinks);
    return run_from_block(block + 1, relu(pre), kinks);
}

std::size_t StagedEvaluator::channel_of(std::size_t param_index, std::size_t element) const {
    const Role role = roles_.at(param_index);
    if (role.group == Group::head) return 0;
    if (role.which != 0) return element;
    const auto& blk = model_.blocks()[role.block];
    const Param& w = role.group == Group::pre_activation ? blk.conv1.weight
                     : role.group == Group::post_block   ? blk.conv2.weight
                                                         : blk.proj->weight;
    return element / (w.dims[1] * w.dims[2] * w.dims[3]);
}

double StagedEvaluator::loss(std::size_t param_index, std::size_t element, bool& kink) const {
    const Param& p = *model_.parameters().at(param_index);
    const Perturbation one{element, p.value.at(element)};
    std::vector<char> kinks;
    const double l = losses(param_index, std::span<const Perturbation>(&one, 1), kinks).front();
    if (kinks.front()) kink = true;
    return l;
}

std::vector<double> StagedEvaluator::losses(std::size_t param_index, std::span<const Perturbation> batch,
                                            std::vector<char>& kinks) const {
    const Role role = roles_.at(param_index);
    Param& p = *model_.parameters().at(param_index);
    kinks.assign(batch.size(), 0);
    if (batch.empty()) return {};
    const std::size_t c = channel_of(param_index, batch.front().element);
    for (const auto& q : batch)
        if (q.element >= p.size() || channel_of(param_index, q.element) != c)
            throw std::invalid_argument("staged evaluation batch must stay within one channel");

    auto with_value = [&](const Perturbation& q, auto&& fn) {
        const double saved = p.value[q.element];
        p.value[q.element] = q.value;
        fn();
        p.value[q.element] = saved;
    };

    if (role.group == Group::head) {
        std::vector<double> out;
        for (const auto& q : batch)
            with_value(q, [&] { out.push_back(head_losses(model_.blocks().back().trace.y).front()); });
        return out;
    }

    const auto& blk = model_.blocks()[role.block];
    const auto& t = blk.trace;
    const std::size_t cout = blk.out_channels();
    const std::size_t count = batch.size();

    // Output channel c of `conv` under every perturbation, as one stacked convolution.
    auto perturbed_conv = [&](const Tensor4& input, const Conv2d& conv) {
        const std::vector<double> base = out_channel_kernel(conv.weight, c);
        std::vector<double> kernel, bias;
        kernel.reserve(count * base.size());
        for (const auto& q : batch) {
            kernel.insert(kernel.end(), base.begin(), base.end());
            bias.push_back(conv.bias.value[c]);
            if (role.which == 0)
                kernel[kernel.size() - base.size() + q.element - c * base.size()] = q.value;
            else
                bias.back() = q.value;
        }
        const Tensor4 all = conv2d_forward(input, kernel, bias, count, conv.ksize());
        std::vector<Tensor4> out;
        for (std::size_t k = 0; k < count; ++k) out.push_back(extract_channel(all, k));
        return out;
    };
    // Batch-norm scale and shift of channel c under perturbation k.
    auto affine = [&](const BatchNorm2d& bn, std::size_t k) {
        std::pair<double, double> gb{bn.gamma.value[c], bn.beta.value[c]};
        if (role.which == 2) gb.first = batch[k].value;
        if (role.which == 3) gb.second = batch[k].value;
        return gb;
    };

    std::vector<Tensor4> parts;
    parts.reserve(count);

    if (role.group == Group::pre_activation) {
        const Tensor4 r1_ref = extract_channel(t.r1, c);
        const Tensor4 d1_ref = extract_channel(t.d1, c);
        const auto z1 = role.which < 2 ? perturbed_conv(t.x, blk.conv1)
                                       : std::vector<Tensor4>(count, extract_channel(t.z1, c));
        for (std::size_t k = 0; k < count; ++k) {
            const auto [g, bt] = affine(blk.bn1, k);
            Tensor4 a1c(z1[k].shape());
            BatchNorm2d::normalize_channel(z1[k], 0, g, bt, blk.bn1.eps(), a1c);
            std::vector<char> one(1, 0);
            mark_kinks(a1c, r1_ref, one);
            if (one[0]) kinks[k] = 1;
            Tensor4 d1c = relu(a1c);
            apply_mask(d1c, blk.drop.mask(), c, cout);
            parts.push_back(difference(d1c, d1_ref));
        }
        const std::vector<double> zero(cout, 0.0);
        Tensor4 z2 = conv2d_forward(stack(parts), in_channel_kernel(blk.conv2.weight, c), zero, cout, 3);
        add_tiled(z2, t.z2);
        Tensor4 pre = grouped_norm(z2, blk.bn2, batch_);
        add_tiled(pre, t.skip);
        mark_kinks(pre, t.y, kinks);
        return run_from_block(role.block + 1, relu(pre), kinks);
    }

    const Tensor4 y_ref = extract_channel(t.y, c);
    std::vector<Tensor4> pre(count);
    if (role.group == Group::post_block) {
        const Tensor4 skip_ref = extract_channel(t.skip, c);
        const auto z2 = role.which < 2 ? perturbed_conv(t.d1, blk.conv2)
                                       : std::vector<Tensor4>(count, extract_channel(t.z2, c));
        for (std::size_t k = 0; k < count; ++k) {
            const auto [g, bt] = affine(blk.bn2, k);
            Tensor4 a2c(z2[k].shape());
            BatchNorm2d::normalize_channel(z2[k], 0, g, bt, blk.bn2.eps(), a2c);
            pre[k] = sum(a2c, skip_ref);
        }
    } else {
        const Tensor4 a2_ref = extract_channel(t.a2, c);
        const auto sc = perturbed_conv(t.x, *blk.proj);
        for (std::size_t k = 0; k < count; ++k) pre[k] = sum(a2_ref, sc[k]);
    }
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<char> one(1, 0);
        mark_kinks(pre[k], y_ref, one);
        if (one[0]) kinks[k] = 1;
        parts.push_back(difference(relu(pre[k]), y_ref));
    }
    std::vector<char> downstream(count, 0);
    auto out = propagate_channel(role.block + 1, c, stack(parts), downstream);
    for (std::size_t k = 0; k < count; ++k) kinks[k] |= downstream[k];
    return out;
}

GradCheckReport check_model_gradients(BedTopoCNN& model, const Tensor4& input, const GradCheckOptions& options) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t numel = input.n() * input.h() * input.w();
    std::mt19937_64 rng(options.seed);
    std::vector<double> readout(numel);
    for (auto& r : readout) r = options.readout_scale * (2.0 * uniform01(rng) - 1.0) / static_cast<double>(numel);

    model.zero_grad();
    const Tensor4 out = model.forward(input, Mode::train);
    model.backward(Tensor4(out.shape(), readout));

    StagedEvaluator eval(model, readout);
    auto params = model.parameters();
    GradCheckReport report;
    const std::size_t chunk = std::max<std::size_t>(1, options.chunk);
    using Perturbation = StagedEvaluator::Perturbation;

    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        const auto tp = std::chrono::steady_clock::now();
        Param& p = *params[pi];
        ParamCheck pc{p.name, p.size(), 0.0, 0, 0, 0.0};
        std::vector<double> fd(p.size(), 0.0);

        // Elements of one channel are contiguous for every parameter kind.
        std::size_t e0 = 0;
        while (e0 < p.size()) {
            std::size_t e1 = e0 + 1;
            const std::size_t c = eval.channel_of(pi, e0);
            while (e1 < p.size() && e1 - e0 < chunk && eval.channel_of(pi, e1) == c) ++e1;

            std::vector<std::size_t> pending;
            for (std::size_t e = e0; e < e1; ++e) pending.push_back(e);
            double h = options.step;
            for (int attempt = 0; !pending.empty(); ++attempt) {
                std::vector<Perturbation> batch;
                for (auto e : pending) {
                    batch.push_back({e, p.value[e] + h});
                    batch.push_back({e, p.value[e] - h});
                }
                std::vector<char> kinks;
                const auto l = eval.losses(pi, batch, kinks);
                std::vector<std::size_t> retry;
                for (std::size_t j = 0; j < pending.size(); ++j) {
                    fd[pending[j]] = (l[2 * j] - l[2 * j + 1]) / (2.0 * h);
                    if ((kinks[2 * j] || kinks[2 * j + 1]) && attempt < options.kink_retries) retry.push_back(pending[j]);
                }
                report.kink_retries += retry.size();
                pending = std::move(retry);
                h /= 10.0;
            }
            e0 = e1;
        }

        for (std::size_t e = 0; e < p.size(); ++e) {
            const double rel = relative_error(p.grad[e], fd[e]);
            if (!std::isfinite(rel) || rel > options.tolerance) ++pc.failures;
            if (!(rel <= pc.max_rel_error)) {
                pc.max_rel_error = rel;
                pc.worst_index = e;
            }
        }
        pc.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - tp).count();
        report.checked += pc.count;
        report.failures += pc.failures;
        report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
        report.params.push_back(std::move(pc));
    }
    report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace bedtopo::nn
