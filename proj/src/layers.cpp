#include "bedtopo/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "bedtopo/error.hpp"

namespace bedtopo::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMat>;

// Per-thread scratch reused across calls; large short-lived allocations otherwise cost a
// page-fault round trip on every convolution.
struct Scratch {
    std::vector<double> buf;
    RowMap get(std::size_t rows, std::size_t cols) {
        if (buf.size() < rows * cols) buf.resize(rows * cols);
        return {buf.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)};
    }
};
thread_local Scratch scratch_col, scratch_out, scratch_grad;

#if defined(__GLIBC__)
// Activation tensors and GEMM blocking buffers are a few hundred KB and live for one layer call.
// Keep them on the heap instead of mmap/munmap (and trimming) per call.
const bool allocator_tuned = [] {
    mallopt(M_MMAP_THRESHOLD, 64 << 20);
    mallopt(M_TRIM_THRESHOLD, 256 << 20);
    return true;
}();
#endif

std::size_t product(const std::vector<std::size_t>& dims) {
    std::size_t p = 1;
    for (auto d : dims) p *= d;
    return p;
}

void check_kernel(std::size_t ksize) {
    if (ksize != 1 && ksize != 3) throw DimensionError("only 1x1 and 3x3 kernels are supported");
}

// Valid output range [lo, hi) along one axis for tap offset `o` (source index = out + o).
inline void tap_range(std::ptrdiff_t o, std::size_t n, std::size_t& lo, std::size_t& hi) {
    lo = o < 0 ? static_cast<std::size_t>(-o) : 0;
    hi = o > 0 ? n - std::min<std::size_t>(n, static_cast<std::size_t>(o)) : n;
    if (lo > hi) lo = hi;
}

// Images per GEMM chunk: about 512 columns keeps the column buffer near the L2 cache size.
std::size_t chunk_images(std::size_t n, std::size_t hw) {
    return std::clamp<std::size_t>(512 / std::max<std::size_t>(hw, 1), 1, std::max<std::size_t>(n, 1));
}

// Rows (ci, ky, kx); columns (b, y, x) for images [b0, b0 + nb). Out-of-range taps read zero padding.
RowMap im2col(const Tensor4& x, std::size_t ksize, std::size_t b0, std::size_t nb) {
    const std::size_t c = x.c(), h = x.h(), w = x.w();
    const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const std::size_t hw = h * w;
    RowMap col = scratch_col.get(c * ksize * ksize, nb * hw);
    if (ksize == 1) {
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t b = 0; b < nb; ++b)
                std::copy_n(x.plane(b0 + b, ci), hw, col.row(static_cast<Eigen::Index>(ci)).data() + b * hw);
        return col;
    }
    col.setZero();
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            const auto oy = static_cast<std::ptrdiff_t>(ky) - pad;
            std::size_t ylo, yhi;
            tap_range(oy, h, ylo, yhi);
            for (std::size_t kx = 0; kx < ksize; ++kx) {
                const auto ox = static_cast<std::ptrdiff_t>(kx) - pad;
                std::size_t xlo, xhi;
                tap_range(ox, w, xlo, xhi);
                double* row = col.row(static_cast<Eigen::Index>((ci * ksize + ky) * ksize + kx)).data();
                for (std::size_t b = 0; b < nb; ++b) {
                    const double* src = x.plane(b0 + b, ci);
                    double* dst = row + b * hw;
                    for (std::size_t yy = ylo; yy < yhi; ++yy) {
                        double* d = dst + yy * w;
                        const double* s = src + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(yy) + oy) * w + ox;
                        for (std::size_t xx = xlo; xx < xhi; ++xx) d[xx] = s[xx];
                    }
                }
            }
        }
    }
    return col;
}

void col2im_add(const RowMap& col, std::size_t ksize, Tensor4& gx, std::size_t b0, std::size_t nb) {
    const std::size_t c = gx.c(), h = gx.h(), w = gx.w();
    const auto pad = static_cast<std::ptrdiff_t>(ksize / 2);
    const std::size_t hw = h * w;
    for (std::size_t ci = 0; ci < c; ++ci) {
        for (std::size_t ky = 0; ky < ksize; ++ky) {
            const auto oy = static_cast<std::ptrdiff_t>(ky) - pad;
            std::size_t ylo, yhi;
            tap_range(oy, h, ylo, yhi);
            for (std::size_t kx = 0; kx < ksize; ++kx) {
                const auto ox = static_cast<std::ptrdiff_t>(kx) - pad;
                std::size_t xlo, xhi;
                tap_range(ox, w, xlo, xhi);
                const double* row = col.row(static_cast<Eigen::Index>((ci * ksize + ky) * ksize + kx)).data();
                for (std::size_t b = 0; b < nb; ++b) {
                    double* dst = gx.plane(b0 + b, ci);
                    const double* src = row + b * hw;
                    for (std::size_t yy = ylo; yy < yhi; ++yy) {
                        double* d = dst + static_cast<std::size_t>(static_cast<std::ptrdiff_t>(yy) + oy) * w + ox;
                        const double* s = src + yy * w;
                        for (std::size_t xx = xlo; xx < xhi; ++xx) d[xx] += s[xx];
                    }
                }
            }
        }
    }
}

}  // namespace

Param::Param(std::string name_, std::vector<std::size_t> dims_)
    : name(std::move(name_)), dims(std::move(dims_)), value(product(dims), 0.0), grad(product(dims), 0.0) {}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Tensor4 conv2d_forward(const Tensor4& input, std::span<const double> kernel, std::span<const double> bias,
                       std::size_t out_channels, std::size_t ksize) {
    check_kernel(ksize);
    const std::size_t kdim = input.c() * ksize * ksize;
    if (kernel.size() != out_channels * kdim)
        throw DimensionError("conv kernel expects " + std::to_string(kernel.size() / std::max<std::size_t>(1, out_channels * ksize * ksize)) +
                             " input channels, got input " + input.shape().str());
    if (bias.size() != out_channels) throw DimensionError("conv bias size does not match output channels");

    const std::size_t hw = input.h() * input.w();
    Eigen::Map<const RowMat> wmat(kernel.data(), static_cast<Eigen::Index>(out_channels),
                                  static_cast<Eigen::Index>(kdim));
    Tensor4 y({input.n(), out_channels, input.h(), input.w()});
    const std::size_t step = chunk_images(input.n(), hw);
    for (std::size_t b0 = 0; b0 < input.n(); b0 += step) {
        const std::size_t nb = std::min(step, input.n() - b0);
        const RowMap col = im2col(input, ksize, b0, nb);
        RowMap out = scratch_out.get(out_channels, nb * hw);
        out.noalias() = wmat * col;
        for (std::size_t b = 0; b < nb; ++b) {
            for (std::size_t co = 0; co < out_channels; ++co) {
                const double* src = out.row(static_cast<Eigen::Index>(co)).data() + b * hw;
                double* dst = y.plane(b0 + b, co);
                const double bco = bias[co];
                for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + bco;
            }
        }
    }
    return y;
}

ConvGrads conv2d_backward(const Tensor4& grad_out, const Tensor4& input, std::span<const double> kernel,
                          std::size_t ksize) {
    check_kernel(ksize);
    const std::size_t cout = grad_out.c();
    const std::size_t kdim = input.c() * ksize * ksize;
    if (grad_out.n() != input.n() || grad_out.h() != input.h() || grad_out.w() != input.w() ||
        kernel.size() != cout * kdim)
        throw DimensionError("conv backward: grad " + grad_out.shape().str() + " inconsistent with input " +
                             input.shape().str());

    const std::size_t hw = input.h() * input.w();
    Eigen::Map<const RowMat> wmat(kernel.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(kdim));

    ConvGrads out;
    out.grad_kernel.assign(cout * kdim, 0.0);
    Eigen::Map<RowMat> gw(out.grad_kernel.data(), static_cast<Eigen::Index>(cout), static_cast<Eigen::Index>(kdim));
    out.grad_bias.assign(cout, 0.0);
    out.grad_input = Tensor4(input.shape());

    const std::size_t step = chunk_images(input.n(), hw);
    for (std::size_t b0 = 0; b0 < input.n(); b0 += step) {
        const std::size_t nb = std::min(step, input.n() - b0);
        RowMap g = scratch_grad.get(cout, nb * hw);
        for (std::size_t b = 0; b < nb; ++b)
            for (std::size_t co = 0; co < cout; ++co)
                std::copy_n(grad_out.plane(b0 + b, co), hw, g.row(static_cast<Eigen::Index>(co)).data() + b * hw);
        const RowMap col = im2col(input, ksize, b0, nb);
        gw.noalias() += g * col.transpose();
        for (std::size_t co = 0; co < cout; ++co) out.grad_bias[co] += g.row(static_cast<Eigen::Index>(co)).sum();
        RowMap gcol = scratch_out.get(kdim, nb * hw);
        gcol.noalias() = wmat.transpose() * g;
        col2im_add(gcol, ksize, out.grad_input, b0, nb);
    }
    return out;
}

Conv2d::Conv2d(const std::string& name, std::size_t in_channels, std::size_t out_channels, std::size_t ksize)
    : weight(name + ".weight", {out_channels, in_channels, ksize, ksize}),
      bias(name + ".bias", {out_channels}),
      in_(in_channels),
      out_(out_channels),
      k_(ksize) {
    check_kernel(ksize);
}

void Conv2d::init(std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in_ * k_ * k_);
    const double wb = std::sqrt(6.0 / fan_in);
    const double bb = 1.0 / std::sqrt(fan_in);
    for (auto& v : weight.value) v = (2.0 * uniform01(rng) - 1.0) * wb;
    for (auto& v : bias.value) v = (2.0 * uniform01(rng) - 1.0) * bb;
}

Tensor4 Conv2d::forward(const Tensor4& input) {
    if (input.c() != in_)
        throw DimensionError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                             std::to_string(input.c()));
    input_ = input;
    cached_ = true;
    return conv2d_forward(input, weight.value, bias.value, out_, k_);
}

Tensor4 Conv2d::backward(const Tensor4& grad_out) {
    if (!cached_) throw StateError(weight.name + ": backward called without a cached forward pass");
    if (grad_out.c() != out_) throw DimensionError(weight.name + ": gradient channel mismatch");
    auto g = conv2d_backward(grad_out, input_, weight.value, k_);
    for (std::size_t i = 0; i < g.grad_kernel.size(); ++i) weight.grad[i] += g.grad_kernel[i];
    for (std::size_t i = 0; i < g.grad_bias.size(); ++i) bias.grad[i] += g.grad_bias[i];
    return std::move(g.grad_input);
}

BatchNorm2d::BatchNorm2d(const std::string& name, std::size_t channels, double momentum, double eps)
    : gamma(name + ".gamma", {channels}),
      beta(name + ".beta", {channels}),
      running_mean(channels, 0.0),
      running_var(channels, 1.0),
      batch_mean(channels, 0.0),
      batch_var(channels, 0.0),
      momentum_(momentum),
      eps_(eps) {
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
}

namespace {

void channel_moments(const Tensor4& x, std::size_t ch, double& mean, double& var) {
    const std::size_t hw = x.h() * x.w();
    double s = 0.0;
    for (std::size_t b = 0; b < x.n(); ++b) {
        const double* p = x.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) s += p[i];
    }
    const double m = static_cast<double>(x.n() * hw);
    mean = s / m;
    double ss = 0.0;
    for (std::size_t b = 0; b < x.n(); ++b) {
        const double* p = x.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mean) * (p[i] - mean);
    }
    var = ss / m;
}

}  // namespace

void BatchNorm2d::normalize_channel(const Tensor4& input, std::size_t ch, double gamma, double beta, double eps,
                                    Tensor4& out) {
    const std::size_t hw = input.h() * input.w();
    if (input.n() * hw <= 1) throw NumericalError("batch norm in train mode needs more than one value per channel");
    double mean = 0.0, var = 0.0;
    channel_moments(input, ch, mean, var);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t b = 0; b < input.n(); ++b) {
        const double* p = input.plane(b, ch);
        double* q = out.plane(b, ch);
        for (std::size_t i = 0; i < hw; ++i) q[i] = gamma * ((p[i] - mean) * inv) + beta;
    }
}

Tensor4 BatchNorm2d::normalize_batch(const Tensor4& input, std::span<const double> gamma, std::span<const double> beta,
                                     double eps) {
    Tensor4 out(input.shape());
    for (std::size_t ch = 0; ch < input.c(); ++ch) normalize_channel(input, ch, gamma[ch], beta[ch], eps, out);
    return out;
}

Tensor4 BatchNorm2d::forward(const Tensor4& input, Mode mode) {
    const std::size_t c = channels();
    if (input.c() != c) throw DimensionError(gamma.name + ": channel mismatch, got input " + input.shape().str());
    const std::size_t hw = input.h() * input.w();
    const std::size_t m = input.n() * hw;
    if (mode == Mode::train && m <= 1)
        throw NumericalError(gamma.name + ": degenerate batch, train mode needs n*h*w > 1");

    Tensor4 out(input.shape());
    xhat_.resize(input.size());
    inv_std_.assign(c, 0.0);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0, var = 0.0;
        if (mode == Mode::train) {
            channel_moments(input, ch, mean, var);
            batch_mean[ch] = mean;
            batch_var[ch] = var;
            const double unbiased = var * static_cast<double>(m) / static_cast<double>(m - 1);
            running_mean[ch] = (1.0 - momentum_) * running_mean[ch] + momentum_ * mean;
            running_var[ch] = (1.0 - momentum_) * running_var[ch] + momentum_ * unbiased;
        } else {
            mean = running_mean[ch];
            var = running_var[ch];
        }
        const double inv = 1.0 / std::sqrt(var + eps_);
        inv_std_[ch] = inv;
        const double g = gamma.value[ch], bt = beta.value[ch];
        for (std::size_t b = 0; b < input.n(); ++b) {
            const double* p = input.plane(b, ch);
            double* q = out.plane(b, ch);
            double* xh = xhat_.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                xh[i] = (p[i] - mean) * inv;
                q[i] = g * xh[i] + bt;
            }
        }
    }
    mode_ = mode;
    shape_ = input.shape();
    cached_ = true;
    return out;
}

Tensor4 BatchNorm2d::backward(const Tensor4& grad_out) {
    if (!cached_) throw StateError(gamma.name + ": backward called without a cached forward pass");
    if (!(grad_out.shape() == shape_)) throw DimensionError(gamma.name + ": gradient shape mismatch");
    const std::size_t c = channels();
    const std::size_t hw = shape_.h * shape_.w;
    const double m = static_cast<double>(shape_.n * hw);
    Tensor4 gx(shape_);
    for (std::size_t ch = 0; ch < c; ++ch) {
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t b = 0; b < shape_.n; ++b) {
            const double* dy = grad_out.plane(b, ch);
            const double* xh = xhat_.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                sum_dy += dy[i];
                sum_dy_xhat += dy[i] * xh[i];
            }
        }
        gamma.grad[ch] += sum_dy_xhat;
        beta.grad[ch] += sum_dy;
        const double g = gamma.value[ch];
        const double inv = inv_std_[ch];
        for (std::size_t b = 0; b < shape_.n; ++b) {
            const double* dy = grad_out.plane(b, ch);
            const double* xh = xhat_.data() + (b * c + ch) * hw;
            double* dx = gx.plane(b, ch);
            if (mode_ == Mode::train) {
                for (std::size_t i = 0; i < hw; ++i)
                    dx[i] = g * inv * (dy[i] - sum_dy / m - xh[i] * sum_dy_xhat / m);
            } else {
                for (std::size_t i = 0; i < hw; ++i) dx[i] = g * inv * dy[i];
            }
        }
    }
    return gx;
}

Tensor4 Dropout::forward(const Tensor4& input, Mode mode, std::mt19937_64& rng) {
    if (mode == Mode::eval || rate_ <= 0.0) {
        mask_.clear();
        return input;
    }
    const double keep = 1.0 - rate_;
    mask_.resize(input.size());
    Tensor4 out(input.shape());
    for (std::size_t i = 0; i < input.size(); ++i) {
        mask_[i] = uniform01(rng) < keep ? 1.0 / keep : 0.0;
        out.data()[i] = input.data()[i] * mask_[i];
    }
    return out;
}

Tensor4 Dropout::backward(const Tensor4& grad_out) const {
    if (mask_.empty()) return grad_out;
    if (mask_.size() != grad_out.size()) throw DimensionError("dropout: gradient shape mismatch");
    Tensor4 g(grad_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = grad_out.data()[i] * mask_[i];
    return g;
}

Tensor4 relu(const Tensor4& x) {
    Tensor4 y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    return y;
}

Tensor4 relu_backward(const Tensor4& grad_out, const Tensor4& activation) {
    if (!(grad_out.shape() == activation.shape())) throw DimensionError("relu: gradient shape mismatch");
    Tensor4 g(grad_out.shape());
    for (std::size_t i = 0; i < g.size(); ++i)
        g.data()[i] = activation.data()[i] > 0.0 ? grad_out.data()[i] : 0.0;
    return g;
}

}  // namespace bedtopo::nn
