#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace spermdet {

/// Dense NCHW float32 tensor, the currency of every numeric op.
/// Flat index of (n, c, h, w) is ((n*C + c)*H + h)*W + w.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

    std::size_t size() const { return data.size(); }

    std::size_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw;
    }

    float& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
    float at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    /// One sample of a batched tensor, copied out as a batch-of-one tensor.
    Tensor slice(int sample) const;
};

/// Per-channel batch-normalization statistics stored alongside the weights.
struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> rolling_mean;
    std::vector<float> rolling_var;
};

/// Everything a convolutional layer owns. `bias` doubles as the
/// batch-normalization beta when `bn` is present.
struct ConvParams {
    Tensor weights;  // (out, in, k, k)
    std::vector<float> bias;
    std::optional<BatchNormParams> bn;

    int out_channels() const { return weights.n; }
    int in_channels() const { return weights.c; }
    int kernel() const { return weights.h; }
};

}  // namespace spermdet
