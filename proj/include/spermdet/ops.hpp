#pragma once

#include <vector>

#include "spermdet/rng.hpp"
#include "spermdet/tensor.hpp"

namespace spermdet {

/// Which convolution implementation runs. The reference path is the direct
/// nested-loop oracle; the optimized path is patch-matrix expansion into a
/// GEMM and must agree with the reference within 1e-5 relative.
enum class ConvPath { Reference, Optimized };

enum class RunMode { Inference, Training };

inline constexpr float kBnEpsilon = 1e-6f;
inline constexpr float kBnRollingMomentum = 0.99f;

int conv_out_dim(int in, int pad, int size, int stride);

/// Direct cross-correlation with zero padding. Bias is added only when the
/// layer has no batch normalization (the bias then acts as the BN beta).
Tensor conv2d_reference(const Tensor& input, const ConvParams& params, int stride, int pad);
Tensor conv2d_optimized(const Tensor& input, const ConvParams& params, int stride, int pad);
Tensor conv2d(const Tensor& input, const ConvParams& params, int stride, int pad, ConvPath path);

/// Per-channel batch statistics captured during a training-mode forward.
struct BatchStats {
    std::vector<float> mean;
    std::vector<float> var;
};

/// Inference: normalize with rolling statistics. Training: normalize with
/// batch statistics over N*H*W per channel, update the rolling statistics,
/// and report the batch statistics for the backward pass. The conv bias
/// vector serves as beta.
Tensor batchnorm_forward(const Tensor& x, ConvParams& params, RunMode mode, float epsilon,
                         BatchStats* stats_out = nullptr);
/// Inference-only batch normalization; leaves the parameters untouched.
Tensor batchnorm_forward(const Tensor& x, const ConvParams& params, float epsilon);

Tensor leaky_relu(const Tensor& x);
Tensor logistic(const Tensor& x);
float logistic(float x);

Tensor shortcut_add(const Tensor& a, const Tensor& b);

/// Inference: identity. Training: inverted dropout, each element zeroed with
/// probability p and survivors scaled by 1/(1-p); the mask (containing the
/// applied factors) is reported for the backward pass.
Tensor dropout(const Tensor& x, float p, RunMode mode, Rng& rng, std::vector<float>* mask_out = nullptr);

// ---- backward ops ----

Tensor leaky_relu_backward(const Tensor& x, const Tensor& dy);
Tensor logistic_backward(const Tensor& x, const Tensor& dy);

struct ConvGrads {
    Tensor dweights;
    std::vector<float> dbias;  // only filled when the layer has no BN
};

/// Returns the gradient with respect to the input; parameter gradients are
/// accumulated into `grads` (which must be zero-initialized or hold a
/// running sum of matching shape).
Tensor conv2d_backward(const Tensor& input, const ConvParams& params, int stride, int pad,
                       const Tensor& dy, ConvGrads& grads, ConvPath path);

struct BnGrads {
    std::vector<float> dgamma;
    std::vector<float> dbeta;
};

/// Backward through training-mode batch normalization (gradients flow
/// through the batch mean and variance).
Tensor batchnorm_backward(const Tensor& x, const ConvParams& params, const BatchStats& stats,
                          float epsilon, const Tensor& dy, BnGrads& grads);

Tensor dropout_backward(const Tensor& dy, const std::vector<float>& mask);

}  // namespace spermdet
