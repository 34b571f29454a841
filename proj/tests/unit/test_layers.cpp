#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "bedtopo/error.hpp"
#include "bedtopo/gradcheck.hpp"
#include "bedtopo/layers.hpp"
#include "bedtopo/model.hpp"

using namespace bedtopo;
using namespace bedtopo::nn;

namespace {

Tensor4 random_tensor(Shape4 s, std::mt19937_64& rng, double scale = 1.0) {
    Tensor4 t(s);
    for (auto& v : t.vec()) v = (2.0 * uniform01(rng) - 1.0) * scale;
    return t;
}

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = 2.0 * uniform01(rng) - 1.0;
    return v;
}

double dot(const Tensor4& a, const std::vector<double>& w) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * w[i];
    return s;
}

// Direct nested-loop cross-correlation with zero padding.
Tensor4 naive_conv(const Tensor4& x, const std::vector<double>& k, const std::vector<double>& b, std::size_t out,
                   std::size_t ks) {
    const long pad = ks == 3 ? 1 : 0;
    Tensor4 y({x.n(), out, x.h(), x.w()});
    for (std::size_t n = 0; n < x.n(); ++n)
        for (std::size_t o = 0; o < out; ++o)
            for (long i = 0; i < static_cast<long>(x.h()); ++i)
                for (long j = 0; j < static_cast<long>(x.w()); ++j) {
                    double s = b[o];
                    for (std::size_t c = 0; c < x.c(); ++c)
                        for (long a = 0; a < static_cast<long>(ks); ++a)
                            for (long bb = 0; bb < static_cast<long>(ks); ++bb) {
                                const long ii = i + a - pad, jj = j + bb - pad;
                                if (ii < 0 || jj < 0 || ii >= static_cast<long>(x.h()) || jj >= static_cast<long>(x.w()))
                                    continue;
                                s += k[((o * x.c() + c) * ks + static_cast<std::size_t>(a)) * ks + static_cast<std::size_t>(bb)] *
                                     x.at(n, c, static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
                            }
                    y.at(n, o, static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = s;
                }
    return y;
}

// Central differences of f with respect to every element of v, compared to `analytic`.
void expect_fd(std::vector<double>& v, const std::function<double()>& f, const std::vector<double>& analytic,
               double tol, const char* what) {
    ASSERT_EQ(v.size(), analytic.size());
    const double h = 1e-5;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double keep = v[i];
        v[i] = keep + h;
        const double up = f();
        v[i] = keep - h;
        const double dn = f();
        v[i] = keep;
        const double fd = (up - dn) / (2 * h);
        EXPECT_LE(relative_error(fd, analytic[i]), tol) << what << "[" << i << "] fd " << fd << " analytic " << analytic[i];
    }
}

}  // namespace

TEST(Conv, IdentityKernel) {
    std::mt19937_64 rng(1);
    const auto x = random_tensor({2, 1, 6, 7}, rng);
    std::vector<double> k(9, 0.0);
    k[4] = 1.0;
    EXPECT_EQ(conv2d_forward(x, k, std::vector<double>{0.0}, 1, 3), x);
}

TEST(Conv, AllOnesCenterIsNine) {
    const Tensor4 x({1, 1, 3, 3}, 1.0);
    const auto y = conv2d_forward(x, std::vector<double>(9, 1.0), std::vector<double>{0.0}, 1, 3);
    EXPECT_EQ(y.at(0, 0, 1, 1), 9.0);
    EXPECT_EQ(y.at(0, 0, 0, 0), 4.0);
    EXPECT_EQ(y.at(0, 0, 0, 1), 6.0);
}

TEST(Conv, OneByOneAffine) {
    std::mt19937_64 rng(2);
    const auto x = random_tensor({3, 1, 4, 5}, rng);
    const auto y = conv2d_forward(x, std::vector<double>{2.0}, std::vector<double>{1.0}, 1, 1);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y.data()[i], 2.0 * x.data()[i] + 1.0);
}

TEST(Conv, MatchesNaiveLoops) {
    std::mt19937_64 rng(3);
    for (const std::size_t ks : {1u, 3u}) {
        const auto x = random_tensor({3, 4, 7, 5}, rng);
        const auto k = random_vec(6 * 4 * ks * ks, rng), b = random_vec(6, rng);
        const auto y = conv2d_forward(x, k, b, 6, ks);
        const auto z = naive_conv(x, k, b, 6, ks);
        ASSERT_EQ(y.shape(), z.shape());
        for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], z.data()[i], 1e-12);
    }
    // a 32x32 batch exercises the chunked column buffer
    const auto x = random_tensor({5, 3, 32, 32}, rng);
    const auto k = random_vec(2 * 3 * 9, rng), b = random_vec(2, rng);
    const auto y = conv2d_forward(x, k, b, 2, 3), z = naive_conv(x, k, b, 2, 3);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data()[i], z.data()[i], 1e-12);
}

TEST(Conv, ChannelMismatch) {
    const Tensor4 x({1, 2, 4, 4});
    EXPECT_THROW(conv2d_forward(x, std::vector<double>(3 * 9), std::vector<double>(1), 1, 3), DimensionError);
    EXPECT_THROW(conv2d_forward(x, std::vector<double>(2 * 25), std::vector<double>(1), 1, 5), DimensionError);
    Conv2d c("c", 3, 2, 3);
    EXPECT_THROW(c.forward(x), DimensionError);
    EXPECT_THROW(c.backward(Tensor4({1, 2, 4, 4})), StateError);
}

TEST(Conv, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    for (const std::size_t ks : {3u, 1u}) {
        auto x = random_tensor({2, 3, 5, 5}, rng);
        auto k = random_vec(4 * 3 * ks * ks, rng), b = random_vec(4, rng);
        const auto w = random_vec(2 * 4 * 25, rng);
        Tensor4 g({2, 4, 5, 5});
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = w[i];
        const auto grads = conv2d_backward(g, x, k, ks);
        auto f = [&] { return dot(conv2d_forward(x, k, b, 4, ks), w); };
        expect_fd(x.vec(), f, grads.grad_input.vec(), 1e-4, "input");
        expect_fd(k, f, grads.grad_kernel, 1e-4, "kernel");
        expect_fd(b, f, grads.grad_bias, 1e-4, "bias");
    }
}

TEST(Conv, ZeroGradOutAndBiasIdentity) {
    std::mt19937_64 rng(5);
    const auto x = random_tensor({2, 3, 5, 5}, rng);
    const auto k = random_vec(4 * 27, rng);
    const auto z = conv2d_backward(Tensor4({2, 4, 5, 5}), x, k, 3);
    for (double v : z.grad_input.vec()) EXPECT_EQ(v, 0.0);
    for (double v : z.grad_kernel) EXPECT_EQ(v, 0.0);
    for (double v : z.grad_bias) EXPECT_EQ(v, 0.0);

    const auto g = random_tensor({2, 4, 5, 5}, rng);
    const auto r = conv2d_backward(g, x, k, 3);
    for (std::size_t o = 0; o < 4; ++o) {
        double s = 0;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t i = 0; i < 25; ++i) s += g.plane(n, o)[i];
        EXPECT_NEAR(r.grad_bias[o], s, 1e-12);
    }
    EXPECT_THROW(conv2d_backward(Tensor4({2, 4, 4, 5}), x, k, 3), DimensionError);
}

TEST(BatchNorm, TrainModeMoments) {
    std::mt19937_64 rng(6);
    BatchNorm2d bn("bn", 3);
    auto x = random_tensor({4, 3, 5, 6}, rng, 50.0);
    for (auto& v : x.vec()) v += 300.0;
    const auto y = bn.forward(x, Mode::train);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 30; ++i) s += y.plane(n, c)[i];
        const double mean = s / 120;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 30; ++i) ss += (y.plane(n, c)[i] - mean) * (y.plane(n, c)[i] - mean);
        EXPECT_NEAR(mean, 0.0, 1e-6);
        // eps 1e-5 relative to a variance of ~833
        EXPECT_NEAR(ss / 120, 1.0, 1e-6);
    }
}

TEST(BatchNorm, RunningStatisticsUpdate) {
    std::mt19937_64 rng(7);
    BatchNorm2d bn("bn", 2, 0.1);
    const auto x = random_tensor({3, 2, 4, 4}, rng);
    bn.forward(x, Mode::train);
    for (std::size_t c = 0; c < 2; ++c) {
        EXPECT_NEAR(bn.running_mean[c], 0.1 * bn.batch_mean[c], 1e-15);
        EXPECT_NEAR(bn.running_var[c], 0.9 + 0.1 * bn.batch_var[c] * 48.0 / 47.0, 1e-15);
        EXPECT_GE(bn.running_var[c], 0.0);
    }
}

TEST(BatchNorm, EvalIdentity) {
    std::mt19937_64 rng(8);
    BatchNorm2d bn("bn", 2);
    const auto x = random_tensor({2, 2, 3, 3}, rng);
    const auto y = bn.forward(x, Mode::eval);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y.data()[i], x.data()[i] / std::sqrt(1 + 1e-5), 1e-15);
    EXPECT_NEAR(y.data()[0], x.data()[0], 1e-5);
}

TEST(BatchNorm, DegenerateBatch) {
    BatchNorm2d bn("bn", 1);
    EXPECT_THROW(bn.forward(Tensor4({1, 1, 1, 1}, 2.0), Mode::train), NumericalError);
    EXPECT_NO_THROW(bn.forward(Tensor4({1, 1, 1, 1}, 2.0), Mode::eval));
}

TEST(BatchNorm, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(9);
    for (const Mode mode : {Mode::train, Mode::eval}) {
        BatchNorm2d bn("bn", 3);
        bn.gamma.value = random_vec(3, rng);
        bn.beta.value = random_vec(3, rng);
        bn.running_mean = random_vec(3, rng);
        bn.running_var = {0.5, 1.5, 2.0};
        auto x = random_tensor({2, 3, 4, 4}, rng, 2.0);
        const auto w = random_vec(x.size(), rng);
        Tensor4 g(x.shape());
        for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = w[i];
        bn.forward(x, mode);
        const auto gx = bn.backward(g);
        const auto gg = bn.gamma.grad, gb = bn.beta.grad;
        auto gamma = bn.gamma.value, beta = bn.beta.value;
        auto f = [&] {
            if (mode == Mode::train) return dot(BatchNorm2d::normalize_batch(x, gamma, beta, 1e-5), w);
            BatchNorm2d e("e", 3);
            e.gamma.value = gamma;
            e.beta.value = beta;
            e.running_mean = bn.running_mean;
            e.running_var = bn.running_var;
            return dot(e.forward(x, Mode::eval), w);
        };
        expect_fd(x.vec(), f, gx.vec(), 1e-4, "bn input");
        expect_fd(gamma, f, gg, 1e-4, "bn gamma");
        expect_fd(beta, f, gb, 1e-4, "bn beta");
    }
}

TEST(Dropout, EvalIsIdentityTrainIsInverted) {
    std::mt19937_64 rng(10);
    const auto x = random_tensor({2, 3, 8, 8}, rng);
    Dropout d(0.25);
    EXPECT_EQ(d.forward(x, Mode::eval, rng), x);
    const auto y = d.forward(x, Mode::train, rng);
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double m = d.mask()[i];
        EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.75);
        EXPECT_EQ(y.data()[i], x.data()[i] * m);
        zeros += m == 0.0;
    }
    EXPECT_GT(zeros, 40u);
    EXPECT_LT(zeros, 160u);
    const auto g = d.backward(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(g.data()[i], x.data()[i] * d.mask()[i]);
}

TEST(Relu, ForwardBackward) {
    Tensor4 x({1, 1, 1, 4}, std::vector<double>{-1, 0, 2, -3});
    const auto y = relu(x);
    EXPECT_EQ(y.vec(), (std::vector<double>{0, 0, 2, 0}));
    const auto g = relu_backward(Tensor4({1, 1, 1, 4}, 5.0), y);
    EXPECT_EQ(g.vec(), (std::vector<double>{0, 0, 5, 0}));
}

TEST(ResidualBlock, ZeroedBlockIsReluOfInput) {
    std::mt19937_64 rng(11);
    ResidualBlock b("b", 4, 4, 0.3, 0.1, 1e-5);
    b.init(rng);
    EXPECT_FALSE(b.has_projection());
    for (auto* p : b.parameters())
        if (p->name.find("weight") != std::string::npos || p->name.find("gamma") != std::string::npos ||
            p->name.find("beta") != std::string::npos)
            std::fill(p->value.begin(), p->value.end(), 0.0);
    const auto x = random_tensor({2, 4, 6, 6}, rng);
    for (const Mode m : {Mode::train, Mode::eval}) EXPECT_EQ(b.forward(x, m, rng), relu(x));
}

TEST(ResidualBlock, ProjectionIffChannelsChange) {
    EXPECT_TRUE(ResidualBlock("b", 3, 5, 0, 0.1, 1e-5).has_projection());
    EXPECT_FALSE(ResidualBlock("b", 5, 5, 0, 0.1, 1e-5).has_projection());
}
