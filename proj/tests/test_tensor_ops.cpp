#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cblas.h>

#include <cmath>

#include "spermdet/errors.hpp"
#include "spermdet/ops.hpp"
#include "spermdet/rng.hpp"
#include "support/oracles.hpp"

using namespace spermdet;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
    Tensor t(n, c, h, w);
    for (float& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

ConvParams random_conv(int out_c, int in_c, int k, bool bn, Rng& rng) {
    ConvParams p;
    p.weights = random_tensor(out_c, in_c, k, k, rng);
    p.bias.resize(out_c);
    for (float& b : p.bias) b = rng.uniform(-0.5f, 0.5f);
    if (bn) {
        BatchNormParams stats;
        stats.gamma.resize(out_c);
        stats.rolling_mean.resize(out_c);
        stats.rolling_var.resize(out_c);
        for (int i = 0; i < out_c; ++i) {
            stats.gamma[i] = rng.uniform(0.5f, 1.5f);
            stats.rolling_mean[i] = rng.uniform(-0.5f, 0.5f);
            stats.rolling_var[i] = rng.uniform(0.2f, 2.0f);
        }
        p.bn = std::move(stats);
    }
    return p;
}

// relative with a unit floor: inputs are O(1)-bounded, so near-zero sums
// (catastrophic cancellation) are compared absolutely at the same tolerance
void check_close(const Tensor& a, const Tensor& b, float rel_tol) {
    REQUIRE(a.same_shape(b));
    for (std::size_t i = 0; i < a.size(); ++i) {
        const float denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), 1.0f});
        CHECK(std::abs(a.data[i] - b.data[i]) / denom <= rel_tol);
    }
}

ConvParams identity_1x1() {
    ConvParams p;
    p.weights = Tensor(1, 1, 1, 1);
    p.weights.data[0] = 1.0f;
    p.bias = {0.0f};
    return p;
}

}  // namespace

TEST_CASE("reference convolution hand examples") {
    SUBCASE("all-ones 3x3 filter over a 2x2 input with pad 1 sums every pixel") {
        Tensor x(1, 1, 2, 2);
        x.data = {1, 2, 3, 4};
        ConvParams p;
        p.weights = Tensor(1, 1, 3, 3);
        std::fill(p.weights.data.begin(), p.weights.data.end(), 1.0f);
        p.bias = {0.0f};
        const Tensor y = conv2d_reference(x, p, 1, 1);
        REQUIRE(y.size() == 4);
        for (float v : y.data) CHECK(v == doctest::Approx(10.0f));
    }
    SUBCASE("1x1 identity filter reproduces the input") {
        Rng rng(3);
        const Tensor x = random_tensor(1, 1, 5, 7, rng);
        const Tensor y = conv2d_reference(x, identity_1x1(), 1, 0);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
    }
    SUBCASE("zero weights give a zero output") {
        Rng rng(4);
        const Tensor x = random_tensor(2, 3, 4, 4, rng);
        ConvParams p;
        p.weights = Tensor(5, 3, 3, 3);
        p.bias.assign(5, 0.0f);
        const Tensor y = conv2d_reference(x, p, 1, 1);
        for (float v : y.data) CHECK(v == 0.0f);
    }
    SUBCASE("channel mismatch throws") {
        Tensor x(1, 2, 4, 4);
        CHECK_THROWS_AS(conv2d_reference(x, identity_1x1(), 1, 0), ShapeError);
    }
}

TEST_CASE("optimized convolution is invariant to the BLAS thread count") {
    Rng rng(16);
    const Tensor x = random_tensor(2, 8, 24, 24, rng);
    const ConvParams p = random_conv(16, 8, 3, false, rng);

    const int original = openblas_get_num_threads();
    openblas_set_num_threads(1);
    const Tensor single = conv2d_optimized(x, p, 1, 1);
    openblas_set_num_threads(2);
    const Tensor multi = conv2d_optimized(x, p, 1, 1);
    openblas_set_num_threads(original);

    check_close(single, multi, 1e-6f);
}

TEST_CASE("optimized convolution matches the reference oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + rng.uniform_int(3);
        const int c = 1 + rng.uniform_int(8);
        const int h = 2 + rng.uniform_int(15);
        const int w = 2 + rng.uniform_int(15);
        const int k = rng.uniform_int(2) ? 3 : 1;
        const int stride = 1 + rng.uniform_int(2);
        const int pad = rng.uniform_int(2) ? k / 2 : 0;
        if ((h + 2 * pad - k) / stride + 1 < 1 || (w + 2 * pad - k) / stride + 1 < 1) continue;
        const int out_c = 1 + rng.uniform_int(8);

        const Tensor x = random_tensor(n, c, h, w, rng);
        const ConvParams p = random_conv(out_c, c, k, rng.uniform_int(2) != 0, rng);
        check_close(conv2d_optimized(x, p, stride, pad), conv2d_reference(x, p, stride, pad), 1e-5f);
    }
}

TEST_CASE("batch normalization") {
    SUBCASE("identity statistics with zero epsilon pass values through") {
        Rng rng(5);
        Tensor x = random_tensor(2, 3, 4, 4, rng);
        ConvParams p = random_conv(3, 3, 1, true, rng);
        std::fill(p.bn->gamma.begin(), p.bn->gamma.end(), 1.0f);
        std::fill(p.bn->rolling_mean.begin(), p.bn->rolling_mean.end(), 0.0f);
        std::fill(p.bn->rolling_var.begin(), p.bn->rolling_var.end(), 1.0f);
        std::fill(p.bias.begin(), p.bias.end(), 0.0f);
        Tensor y = batchnorm_forward(x, p, RunMode::Inference, 0.0f);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]));

        // affine per channel: applying twice with identity statistics
        // equals applying once
        Tensor yy = batchnorm_forward(y, p, RunMode::Inference, 0.0f);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(yy.data[i] == doctest::Approx(y.data[i]));
    }
    SUBCASE("hand-evaluated inference point") {
        // gamma=2, beta=1, mean=3, var=4, eps=0, x=5 -> 2*(5-3)/2 + 1 = 3
        Tensor x(1, 1, 1, 1);
        x.data = {5.0f};
        ConvParams p;
        p.weights = Tensor(1, 1, 1, 1);
        p.bias = {1.0f};
        p.bn = BatchNormParams{{2.0f}, {3.0f}, {4.0f}};
        const Tensor y = batchnorm_forward(x, p, RunMode::Inference, 0.0f);
        CHECK(y.data[0] == doctest::Approx(3.0f));
    }
    SUBCASE("training on a constant channel yields zeros before gamma/beta") {
        Tensor x(2, 1, 3, 3);
        std::fill(x.data.begin(), x.data.end(), 7.25f);
        ConvParams p;
        p.weights = Tensor(1, 1, 1, 1);
        p.bias = {0.0f};
        p.bn = BatchNormParams{{1.0f}, {0.0f}, {1.0f}};
        BatchStats stats;
        const Tensor y = batchnorm_forward(x, p, RunMode::Training, 1e-6f, &stats);
        for (float v : y.data) CHECK(v == doctest::Approx(0.0f));
        CHECK(stats.mean[0] == doctest::Approx(7.25f));
        CHECK(stats.var[0] == doctest::Approx(0.0f));
    }
    SUBCASE("training updates rolling statistics with the 0.99/0.01 rule") {
        Rng rng(6);
        Tensor x = random_tensor(4, 2, 5, 5, rng);
        ConvParams p = random_conv(2, 2, 1, true, rng);
        const std::vector<float> mean0 = p.bn->rolling_mean;
        const std::vector<float> var0 = p.bn->rolling_var;
        BatchStats stats;
        batchnorm_forward(x, p, RunMode::Training, 1e-6f, &stats);
        for (int c = 0; c < 2; ++c) {
            CHECK(p.bn->rolling_mean[c] == doctest::Approx(0.99f * mean0[c] + 0.01f * stats.mean[c]));
            CHECK(p.bn->rolling_var[c] == doctest::Approx(0.99f * var0[c] + 0.01f * stats.var[c]));
        }
    }
    SUBCASE("negative rolling variance is rejected") {
        Tensor x(1, 1, 2, 2);
        ConvParams p;
        p.weights = Tensor(1, 1, 1, 1);
        p.bias = {0.0f};
        p.bn = BatchNormParams{{1.0f}, {0.0f}, {-0.5f}};
        CHECK_THROWS_AS(batchnorm_forward(x, p, RunMode::Inference, 1e-6f), NumericError);
    }
}

TEST_CASE("activations") {
    SUBCASE("leaky relu values") {
        Tensor x(1, 1, 1, 3);
        x.data = {2.0f, -2.0f, 0.0f};
        const Tensor y = leaky_relu(x);
        CHECK(y.data[0] == doctest::Approx(2.0f));
        CHECK(y.data[1] == doctest::Approx(-0.2f));
        CHECK(y.data[2] == doctest::Approx(0.0f));
    }
    SUBCASE("leaky relu is positively homogeneous") {
        Rng rng(8);
        for (int i = 0; i < 100; ++i) {
            const float x = rng.uniform(-10.0f, 10.0f);
            const float k = rng.uniform(0.1f, 5.0f);
            Tensor tx(1, 1, 1, 1), tkx(1, 1, 1, 1);
            tx.data = {x};
            tkx.data = {k * x};
            CHECK(leaky_relu(tkx).data[0] == doctest::Approx(k * leaky_relu(tx).data[0]).epsilon(1e-4));
        }
    }
    SUBCASE("logistic values and saturation") {
        CHECK(logistic(0.0f) == doctest::Approx(0.5f));
        CHECK(logistic(1000.0f) == doctest::Approx(1.0f));
        CHECK(logistic(-1000.0f) == doctest::Approx(0.0f));
        CHECK(std::isfinite(logistic(88.0f)));
        CHECK(std::isfinite(logistic(-88.0f)));
    }
    SUBCASE("logistic symmetry") {
        Rng rng(9);
        for (int i = 0; i < 200; ++i) {
            const float x = rng.uniform(-30.0f, 30.0f);
            CHECK(logistic(x) + logistic(-x) == doctest::Approx(1.0f).epsilon(1e-6));
        }
    }
}

TEST_CASE("shortcut addition") {
    Rng rng(10);
    const Tensor a = random_tensor(1, 2, 3, 3, rng);
    Tensor zero(1, 2, 3, 3);
    const Tensor sum = shortcut_add(a, zero);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(sum.data[i] == a.data[i]);

    Tensor neg = a;
    for (float& v : neg.data) v = -v;
    for (float v : shortcut_add(a, neg).data) CHECK(v == 0.0f);

    const Tensor b = random_tensor(1, 2, 3, 3, rng);
    const Tensor ab = shortcut_add(a, b);
    const Tensor ba = shortcut_add(b, a);
    for (std::size_t i = 0; i < ab.size(); ++i) CHECK(ab.data[i] == ba.data[i]);

    Tensor other(1, 2, 3, 4);
    CHECK_THROWS_AS(shortcut_add(a, other), ShapeError);
}

TEST_CASE("dropout") {
    Rng rng(12);
    const Tensor x = random_tensor(1, 2, 4, 4, rng);

    SUBCASE("inference is the identity for any p") {
        Rng r(1);
        const Tensor y = dropout(x, 0.9f, RunMode::Inference, r);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
    }
    SUBCASE("p = 0 in training is the identity") {
        Rng r(1);
        const Tensor y = dropout(x, 0.0f, RunMode::Training, r);
        for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);
    }
    SUBCASE("inverted scaling preserves the mean at p = 0.5") {
        Tensor ones(1, 1, 1000, 1000);
        std::fill(ones.data.begin(), ones.data.end(), 1.0f);
        Rng r(77);
        const Tensor y = dropout(ones, 0.5f, RunMode::Training, r);
        double sum = 0.0;
        for (float v : y.data) sum += v;
        CHECK(sum / static_cast<double>(ones.size()) == doctest::Approx(1.0).epsilon(0.01));
    }
    SUBCASE("mask is reproducible from the seed") {
        std::vector<float> mask1, mask2;
        Rng r1(424242), r2(424242);
        dropout(x, 0.5f, RunMode::Training, r1, &mask1);
        dropout(x, 0.5f, RunMode::Training, r2, &mask2);
        CHECK(mask1 == mask2);
    }
}

TEST_CASE("activation backward") {
    SUBCASE("leaky slope on the negative side and at zero") {
        Tensor x(1, 1, 1, 3), dy(1, 1, 1, 3);
        x.data = {-2.0f, 0.0f, 3.0f};
        dy.data = {1.0f, 1.0f, 1.0f};
        const Tensor dx = leaky_relu_backward(x, dy);
        CHECK(dx.data[0] == doctest::Approx(0.1f));
        CHECK(dx.data[1] == doctest::Approx(0.1f));  // subgradient at 0
        CHECK(dx.data[2] == doctest::Approx(1.0f));
    }
    SUBCASE("logistic derivative") {
        Tensor x(1, 1, 1, 1), dy(1, 1, 1, 1);
        x.data = {0.0f};
        dy.data = {2.0f};
        CHECK(logistic_backward(x, dy).data[0] == doctest::Approx(2.0f * 0.25f));
    }
}

TEST_CASE("convolution backward matches finite differences of the double oracle") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 1 + rng.uniform_int(2);
        const int c = 1 + rng.uniform_int(3);
        const int h = 2 + rng.uniform_int(3);
        const int w = 2 + rng.uniform_int(3);
        const int k = rng.uniform_int(2) ? 3 : 1;
        const int stride = 1 + rng.uniform_int(2);
        const int pad = k / 2;
        const int out_c = 1 + rng.uniform_int(3);
        const int oh = (h + 2 * pad - k) / stride + 1;
        const int ow = (w + 2 * pad - k) / stride + 1;
        if (oh < 1 || ow < 1) continue;

        const Tensor x = random_tensor(n, c, h, w, rng);
        const ConvParams p = random_conv(out_c, c, k, false, rng);
        const Tensor dy = random_tensor(n, out_c, oh, ow, rng);

        const ConvPath path = trial % 2 ? ConvPath::Optimized : ConvPath::Reference;
        ConvGrads grads;
        const Tensor dx = conv2d_backward(x, p, stride, pad, dy, grads, path);

        const oracle::Dims dims{n, c, h, w};
        const std::vector<double> dy_d = oracle::to_double(dy.data);
        const std::vector<double> w_d = oracle::to_double(p.weights.data);
        const std::vector<double> b_d = oracle::to_double(p.bias);

        // scalar objective: <dy, conv(x, w)>
        auto loss_of_x = [&](const std::vector<double>& xv) {
            const auto y = oracle::conv2d(xv, dims, w_d, out_c, k, b_d, true, stride, pad);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * dy_d[i];
            return loss;
        };
        auto loss_of_w = [&](const std::vector<double>& wv) {
            const auto y = oracle::conv2d(oracle::to_double(x.data), dims, wv, out_c, k, b_d, true,
                                          stride, pad);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * dy_d[i];
            return loss;
        };

        const auto fd_dx = oracle::finite_diff(loss_of_x, oracle::to_double(x.data), 1e-3);
        CHECK(oracle::max_rel_error(oracle::to_double(dx.data), fd_dx) <= 1e-3);
        const auto fd_dw = oracle::finite_diff(loss_of_w, w_d, 1e-3);
        CHECK(oracle::max_rel_error(oracle::to_double(grads.dweights.data), fd_dw) <= 1e-3);
    }
}

TEST_CASE("batchnorm backward matches finite differences of the double oracle") {
    Rng rng(14);
    for (int trial = 0; trial < 8; ++trial) {
        const int n = 2;
        const int c = 1 + rng.uniform_int(3);
        const int h = 2 + rng.uniform_int(3);
        const int w = 2 + rng.uniform_int(3);
        const Tensor x = random_tensor(n, c, h, w, rng);
        ConvParams p = random_conv(c, c, 1, true, rng);
        const Tensor dy = random_tensor(n, c, h, w, rng);

        BatchStats stats;
        ConvParams run = p;  // training advances rolling stats; keep p pristine
        batchnorm_forward(x, run, RunMode::Training, 1e-6f, &stats);
        BnGrads grads;
        const Tensor dx = batchnorm_backward(x, p, stats, 1e-6f, dy, grads);

        const oracle::Dims dims{n, c, h, w};
        const std::vector<double> dy_d = oracle::to_double(dy.data);
        const std::vector<double> gamma_d = oracle::to_double(p.bn->gamma);
        const std::vector<double> beta_d = oracle::to_double(p.bias);

        auto loss_of_x = [&](const std::vector<double>& xv) {
            const auto y = oracle::batchnorm_train(xv, dims, gamma_d, beta_d, 1e-6);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * dy_d[i];
            return loss;
        };
        const auto fd_dx = oracle::finite_diff(loss_of_x, oracle::to_double(x.data), 1e-3);
        CHECK(oracle::max_rel_error(oracle::to_double(dx.data), fd_dx) <= 1e-3);

        auto loss_of_gamma = [&](const std::vector<double>& gv) {
            const auto y = oracle::batchnorm_train(oracle::to_double(x.data), dims, gv, beta_d, 1e-6);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * dy_d[i];
            return loss;
        };
        const auto fd_dgamma = oracle::finite_diff(loss_of_gamma, gamma_d, 1e-3);
        CHECK(oracle::max_rel_error(oracle::to_double(grads.dgamma), fd_dgamma) <= 1e-3);

        auto loss_of_beta = [&](const std::vector<double>& bv) {
            const auto y = oracle::batchnorm_train(oracle::to_double(x.data), dims, gamma_d, bv, 1e-6);
            double loss = 0.0;
            for (std::size_t i = 0; i < y.size(); ++i) loss += y[i] * dy_d[i];
            return loss;
        };
        const auto fd_dbeta = oracle::finite_diff(loss_of_beta, beta_d, 1e-3);
        CHECK(oracle::max_rel_error(oracle::to_double(grads.dbeta), fd_dbeta) <= 1e-3);
    }
}

TEST_CASE("dropout backward applies the saved mask") {
    Rng rng(15);
    const Tensor x = random_tensor(1, 1, 4, 4, rng);
    std::vector<float> mask;
    Rng drop_rng(5);
    dropout(x, 0.5f, RunMode::Training, drop_rng, &mask);
    const Tensor dy = random_tensor(1, 1, 4, 4, rng);
    const Tensor dx = dropout_backward(dy, mask);
    for (std::size_t i = 0; i < dy.size(); ++i)
        CHECK(dx.data[i] == doctest::Approx(dy.data[i] * mask[i]));
}
