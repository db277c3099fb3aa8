#include "spermdet/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "spermdet/errors.hpp"

namespace spermdet {

namespace {

void check_conv_args(const Tensor& input, const ConvParams& params, int stride, int pad) {
    if (params.weights.h != params.weights.w)
        throw ShapeError("convolution kernels must be square");
    if (input.c != params.in_channels())
        throw ShapeError("conv input has " + std::to_string(input.c) + " channels, weights expect " +
                         std::to_string(params.in_channels()));
    if (static_cast<int>(params.bias.size()) != params.out_channels())
        throw ShapeError("conv bias length does not match output channels");
    if (stride < 1) throw ShapeError("conv stride must be >= 1");
    if (pad < 0) throw ShapeError("conv pad must be >= 0");
    if (conv_out_dim(input.h, pad, params.kernel(), stride) < 1 ||
        conv_out_dim(input.w, pad, params.kernel(), stride) < 1)
        throw ShapeError("conv output would have a non-positive dimension");
}

void check_bn_args(const Tensor& x, const ConvParams& params) {
    if (!params.bn) throw ShapeError("batchnorm_forward called on a layer without BN parameters");
    const BatchNormParams& bn = *params.bn;
    std::size_t c = static_cast<std::size_t>(x.c);
    if (bn.gamma.size() != c || bn.rolling_mean.size() != c || bn.rolling_var.size() != c ||
        params.bias.size() != c)
        throw ShapeError("batchnorm per-channel vectors do not match the channel count");
}

/// Expand input patches for output positions [col0, col0+ncols) of one
/// sample into a (C*k*k) x ncols column-major-by-row matrix.
void im2col_range(const float* x, int channels, int height, int width, int kernel, int stride,
                  int pad, int out_w, int col0, int ncols, float* buf) {
    const int k2 = kernel * kernel;
    for (int r = 0; r < channels * k2; ++r) {
        const int ic = r / k2;
        const int kh = (r % k2) / kernel;
        const int kw = r % kernel;
        const float* plane = x + static_cast<std::size_t>(ic) * height * width;
        float* row = buf + static_cast<std::size_t>(r) * ncols;
        for (int j = 0; j < ncols; ++j) {
            const int pos = col0 + j;
            const int ih = (pos / out_w) * stride - pad + kh;
            const int iw = (pos % out_w) * stride - pad + kw;
            row[j] = (ih >= 0 && ih < height && iw >= 0 && iw < width)
                         ? plane[static_cast<std::size_t>(ih) * width + iw]
                         : 0.0f;
        }
    }
}

/// Scatter-add the column matrix back into the input gradient.
void col2im_range(const float* buf, int channels, int height, int width, int kernel, int stride,
                  int pad, int out_w, int col0, int ncols, float* dx) {
    const int k2 = kernel * kernel;
    for (int r = 0; r < channels * k2; ++r) {
        const int ic = r / k2;
        const int kh = (r % k2) / kernel;
        const int kw = r % kernel;
        float* plane = dx + static_cast<std::size_t>(ic) * height * width;
        const float* row = buf + static_cast<std::size_t>(r) * ncols;
        for (int j = 0; j < ncols; ++j) {
            const int pos = col0 + j;
            const int ih = (pos / out_w) * stride - pad + kh;
            const int iw = (pos % out_w) * stride - pad + kw;
            if (ih >= 0 && ih < height && iw >= 0 && iw < width)
                plane[static_cast<std::size_t>(ih) * width + iw] += row[j];
        }
    }
}

int column_chunk(int rows, int total_cols) {
    // Cap the patch-matrix workspace at ~8 MB.
    const int budget = 2 * 1024 * 1024;
    return std::clamp(budget / std::max(rows, 1), 256, std::max(total_cols, 256));
}

}  // namespace

int conv_out_dim(int in, int pad, int size, int stride) {
    const int span = in + 2 * pad - size;
    if (span < 0) return 0;  // window does not fit even once
    return span / stride + 1;
}

Tensor conv2d_reference(const Tensor& input, const ConvParams& params, int stride, int pad) {
    check_conv_args(input, params, stride, pad);
    const int oc = params.out_channels(), ic = params.in_channels(), k = params.kernel();
    const int oh = conv_out_dim(input.h, pad, k, stride);
    const int ow = conv_out_dim(input.w, pad, k, stride);
    const bool add_bias = !params.bn.has_value();

    Tensor out(input.n, oc, oh, ow);
    for (int n = 0; n < input.n; ++n) {
        for (int o = 0; o < oc; ++o) {
            const float bias = add_bias ? params.bias[o] : 0.0f;
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    float acc = bias;
                    for (int c = 0; c < ic; ++c) {
                        for (int kh = 0; kh < k; ++kh) {
                            const int iy = y * stride - pad + kh;
                            if (iy < 0 || iy >= input.h) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                const int ix = x * stride - pad + kw;
                                if (ix < 0 || ix >= input.w) continue;
                                acc += input.at(n, c, iy, ix) * params.weights.at(o, c, kh, kw);
                            }
                        }
                    }
                    out.at(n, o, y, x) = acc;
                }
            }
        }
    }
    return out;
}

Tensor conv2d_optimized(const Tensor& input, const ConvParams& params, int stride, int pad) {
    check_conv_args(input, params, stride, pad);
    const int oc = params.out_channels(), ic = params.in_channels(), k = params.kernel();
    const int oh = conv_out_dim(input.h, pad, k, stride);
    const int ow = conv_out_dim(input.w, pad, k, stride);
    const int positions = oh * ow;
    const int rows = ic * k * k;
    const bool add_bias = !params.bn.has_value();

    Tensor out(input.n, oc, oh, ow);
    const bool pointwise = (k == 1 && stride == 1 && pad == 0);
    std::vector<float> col;
    if (!pointwise) col.resize(static_cast<std::size_t>(rows) * column_chunk(rows, positions));

    for (int n = 0; n < input.n; ++n) {
        const float* x = input.data.data() + input.index(n, 0, 0, 0);
        float* y = out.data.data() + out.index(n, 0, 0, 0);
        if (add_bias)
            for (int o = 0; o < oc; ++o)
                std::fill_n(y + static_cast<std::size_t>(o) * positions, positions, params.bias[o]);

        if (pointwise) {
            // 1x1 stride-1: the input already is the column matrix.
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, oc, positions, rows, 1.0f,
                        params.weights.data.data(), rows, x, positions, add_bias ? 1.0f : 0.0f, y,
                        positions);
            continue;
        }
        const int chunk = column_chunk(rows, positions);
        for (int col0 = 0; col0 < positions; col0 += chunk) {
            const int ncols = std::min(chunk, positions - col0);
            im2col_range(x, ic, input.h, input.w, k, stride, pad, ow, col0, ncols, col.data());
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, oc, ncols, rows, 1.0f,
                        params.weights.data.data(), rows, col.data(), ncols, add_bias ? 1.0f : 0.0f,
                        y + col0, positions);
        }
    }
    return out;
}

Tensor conv2d(const Tensor& input, const ConvParams& params, int stride, int pad, ConvPath path) {
    return path == ConvPath::Reference ? conv2d_reference(input, params, stride, pad)
                                       : conv2d_optimized(input, params, stride, pad);
}

namespace {

Tensor normalize_channels(const Tensor& x, const ConvParams& params, const std::vector<float>& mean,
                          const std::vector<float>& var, float epsilon) {
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    Tensor out(x.n, x.c, x.h, x.w);
    for (int c = 0; c < x.c; ++c) {
        const float scale = params.bn->gamma[c] / std::sqrt(var[c] + epsilon);
        const float shift = params.bias[c] - mean[c] * scale;
        for (int n = 0; n < x.n; ++n) {
            const float* p = x.data.data() + x.index(n, c, 0, 0);
            float* q = out.data.data() + out.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * scale + shift;
        }
    }
    return out;
}

}  // namespace

Tensor batchnorm_forward(const Tensor& x, const ConvParams& params, float epsilon) {
    check_bn_args(x, params);
    const BatchNormParams& bn = *params.bn;
    for (int c = 0; c < x.c; ++c) {
        if (bn.rolling_var[c] < 0.0f)
            throw NumericError(NumericError::Kind::NegativeVariance,
                               "negative rolling variance in channel " + std::to_string(c) +
                                   " (corrupt weights)");
    }
    return normalize_channels(x, params, bn.rolling_mean, bn.rolling_var, epsilon);
}

Tensor batchnorm_forward(const Tensor& x, ConvParams& params, RunMode mode, float epsilon,
                         BatchStats* stats_out) {
    if (mode == RunMode::Inference) return batchnorm_forward(x, std::as_const(params), epsilon);

    check_bn_args(x, params);
    BatchNormParams& bn = *params.bn;
    const int channels = x.c;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;

    std::vector<float> mean(channels), var(channels);
    for (int c = 0; c < channels; ++c) {
        double sum = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* p = x.data.data() + x.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        const double mu = sum / m;
        double sq = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* p = x.data.data() + x.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const double d = p[i] - mu;
                sq += d * d;
            }
        }
        mean[c] = static_cast<float>(mu);
        var[c] = static_cast<float>(sq / m);
        bn.rolling_mean[c] = kBnRollingMomentum * bn.rolling_mean[c] + (1.0f - kBnRollingMomentum) * mean[c];
        bn.rolling_var[c] = kBnRollingMomentum * bn.rolling_var[c] + (1.0f - kBnRollingMomentum) * var[c];
    }
    if (stats_out) {
        stats_out->mean = mean;
        stats_out->var = var;
    }
    return normalize_channels(x, params, mean, var, epsilon);
}

Tensor leaky_relu(const Tensor& x) {
    Tensor out(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x.data[i];
        out.data[i] = v > 0.0f ? v : 0.1f * v;
    }
    return out;
}

float logistic(float x) {
    if (x >= 0.0f) return 1.0f / (1.0f + std::exp(-x));
    const float e = std::exp(x);
    return e / (1.0f + e);
}

Tensor logistic(const Tensor& x) {
    Tensor out(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = logistic(x.data[i]);
    return out;
}

Tensor shortcut_add(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("shortcut_add requires identical shapes");
    Tensor out(a.n, a.c, a.h, a.w);
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

Tensor dropout(const Tensor& x, float p, RunMode mode, Rng& rng, std::vector<float>* mask_out) {
    if (!(p >= 0.0f && p < 1.0f)) throw ShapeError("dropout probability must lie in [0, 1)");
    if (mode == RunMode::Inference) return x;

    const float keep_scale = 1.0f / (1.0f - p);
    Tensor out(x.n, x.c, x.h, x.w);
    std::vector<float> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float factor = rng.uniform() < p ? 0.0f : keep_scale;
        mask[i] = factor;
        out.data[i] = x.data[i] * factor;
    }
    if (mask_out) *mask_out = std::move(mask);
    return out;
}

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy) {
    if (!x.same_shape(dy)) throw ShapeError("leaky_relu_backward shape mismatch");
    Tensor dx(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i)
        dx.data[i] = dy.data[i] * (x.data[i] > 0.0f ? 1.0f : 0.1f);
    return dx;
}

Tensor logistic_backward(const Tensor& x, const Tensor& dy) {
    if (!x.same_shape(dy)) throw ShapeError("logistic_backward shape mismatch");
    Tensor dx(x.n, x.c, x.h, x.w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float s = logistic(x.data[i]);
        dx.data[i] = dy.data[i] * s * (1.0f - s);
    }
    return dx;
}

namespace {

void ensure_conv_grads(ConvGrads& grads, const ConvParams& params) {
    if (grads.dweights.size() == 0)
        grads.dweights = Tensor(params.weights.n, params.weights.c, params.weights.h, params.weights.w);
    if (!params.bn && grads.dbias.empty()) grads.dbias.assign(params.bias.size(), 0.0f);
    if (!grads.dweights.same_shape(params.weights))
        throw ShapeError("conv2d_backward gradient accumulator shape mismatch");
}

Tensor conv2d_backward_reference(const Tensor& input, const ConvParams& params, int stride, int pad,
                                 const Tensor& dy, ConvGrads& grads) {
    const int oc = params.out_channels(), ic = params.in_channels(), k = params.kernel();
    const int oh = dy.h, ow = dy.w;
    Tensor dx(input.n, input.c, input.h, input.w);
    for (int n = 0; n < input.n; ++n) {
        for (int o = 0; o < oc; ++o) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    const float g = dy.at(n, o, y, x);
                    if (!params.bn) grads.dbias[o] += g;
                    for (int c = 0; c < ic; ++c) {
                        for (int kh = 0; kh < k; ++kh) {
                            const int iy = y * stride - pad + kh;
                            if (iy < 0 || iy >= input.h) continue;
                            for (int kw = 0; kw < k; ++kw) {
                                const int ix = x * stride - pad + kw;
                                if (ix < 0 || ix >= input.w) continue;
                                grads.dweights.at(o, c, kh, kw) += g * input.at(n, c, iy, ix);
                                dx.at(n, c, iy, ix) += g * params.weights.at(o, c, kh, kw);
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

Tensor conv2d_backward_optimized(const Tensor& input, const ConvParams& params, int stride, int pad,
                                 const Tensor& dy, ConvGrads& grads) {
    const int oc = params.out_channels(), ic = params.in_channels(), k = params.kernel();
    const int oh = dy.h, ow = dy.w;
    const int positions = oh * ow;
    const int rows = ic * k * k;
    const bool pointwise = (k == 1 && stride == 1 && pad == 0);

    Tensor dx(input.n, input.c, input.h, input.w);
    const int chunk = pointwise ? positions : column_chunk(rows, positions);
    std::vector<float> col, dcol(static_cast<std::size_t>(rows) * chunk);
    if (!pointwise) col.resize(static_cast<std::size_t>(rows) * chunk);

    for (int n = 0; n < input.n; ++n) {
        const float* x = input.data.data() + input.index(n, 0, 0, 0);
        const float* g = dy.data.data() + dy.index(n, 0, 0, 0);
        float* dxp = dx.data.data() + dx.index(n, 0, 0, 0);

        if (!params.bn)
            for (int o = 0; o < oc; ++o) {
                const float* row = g + static_cast<std::size_t>(o) * positions;
                double sum = 0.0;
                for (int j = 0; j < positions; ++j) sum += row[j];
                grads.dbias[o] += static_cast<float>(sum);
            }

        for (int col0 = 0; col0 < positions; col0 += chunk) {
            const int ncols = std::min(chunk, positions - col0);
            const float* colmat;
            if (pointwise) {
                colmat = x;  // whole input, single chunk
            } else {
                im2col_range(x, ic, input.h, input.w, k, stride, pad, ow, col0, ncols, col.data());
                colmat = col.data();
            }
            // dW += dy_chunk * col^T
            cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, oc, rows, ncols, 1.0f, g + col0,
                        positions, colmat, ncols, 1.0f, grads.dweights.data.data(), rows);
            // dcol = W^T * dy_chunk
            cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, rows, ncols, oc, 1.0f,
                        params.weights.data.data(), rows, g + col0, positions, 0.0f, dcol.data(), ncols);
            if (pointwise) {
                float* base = dxp;
                for (std::size_t i = 0; i < static_cast<std::size_t>(rows) * ncols; ++i) base[i] += dcol[i];
            } else {
                col2im_range(dcol.data(), ic, input.h, input.w, k, stride, pad, ow, col0, ncols, dxp);
            }
        }
    }
    return dx;
}

}  // namespace

Tensor conv2d_backward(const Tensor& input, const ConvParams& params, int stride, int pad,
                       const Tensor& dy, ConvGrads& grads, ConvPath path) {
    check_conv_args(input, params, stride, pad);
    if (dy.n != input.n || dy.c != params.out_channels() ||
        dy.h != conv_out_dim(input.h, pad, params.kernel(), stride) ||
        dy.w != conv_out_dim(input.w, pad, params.kernel(), stride))
        throw ShapeError("conv2d_backward upstream gradient shape mismatch");
    ensure_conv_grads(grads, params);
    return path == ConvPath::Reference
               ? conv2d_backward_reference(input, params, stride, pad, dy, grads)
               : conv2d_backward_optimized(input, params, stride, pad, dy, grads);
}

Tensor batchnorm_backward(const Tensor& x, const ConvParams& params, const BatchStats& stats,
                          float epsilon, const Tensor& dy, BnGrads& grads) {
    check_bn_args(x, params);
    if (!x.same_shape(dy)) throw ShapeError("batchnorm_backward shape mismatch");
    const BatchNormParams& bn = *params.bn;
    const int channels = x.c;
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    const double m = static_cast<double>(x.n) * plane;
    if (grads.dgamma.empty()) grads.dgamma.assign(channels, 0.0f);
    if (grads.dbeta.empty()) grads.dbeta.assign(channels, 0.0f);

    Tensor dx(x.n, x.c, x.h, x.w);
    for (int c = 0; c < channels; ++c) {
        const double mean = stats.mean[c];
        const double inv_std = 1.0 / std::sqrt(static_cast<double>(stats.var[c]) + epsilon);
        double sum_dy = 0.0, sum_dy_xhat = 0.0, sum_centered = 0.0;
        for (int n = 0; n < x.n; ++n) {
            const float* xp = x.data.data() + x.index(n, c, 0, 0);
            const float* gp = dy.data.data() + dy.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const double centered = xp[i] - mean;
                sum_dy += gp[i];
                sum_dy_xhat += gp[i] * centered * inv_std;
                sum_centered += centered;
            }
        }
        grads.dbeta[c] += static_cast<float>(sum_dy);
        grads.dgamma[c] += static_cast<float>(sum_dy_xhat);

        const double gamma = bn.gamma[c];
        // dvar and dmean aggregate the chain through the batch statistics
        const double dvar = -0.5 * gamma * inv_std * inv_std * sum_dy_xhat;
        const double dmean = -gamma * inv_std * sum_dy + dvar * (-2.0 / m) * sum_centered;
        for (int n = 0; n < x.n; ++n) {
            const float* xp = x.data.data() + x.index(n, c, 0, 0);
            const float* gp = dy.data.data() + dy.index(n, c, 0, 0);
            float* dp = dx.data.data() + dx.index(n, c, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                const double centered = xp[i] - mean;
                dp[i] = static_cast<float>(gp[i] * gamma * inv_std + dvar * 2.0 * centered / m + dmean / m);
            }
        }
    }
    return dx;
}

Tensor dropout_backward(const Tensor& dy, const std::vector<float>& mask) {
    if (mask.size() != dy.size()) throw ShapeError("dropout_backward mask size mismatch");
    Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (std::size_t i = 0; i < dy.size(); ++i) dx.data[i] = dy.data[i] * mask[i];
    return dx;
}

}  // namespace spermdet
