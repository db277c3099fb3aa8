#pragma once

#include <vector>

#include "spermdet/netdef.hpp"
#include "spermdet/ops.hpp"
#include "spermdet/rng.hpp"
#include "spermdet/tensor.hpp"

namespace spermdet {

/// A runnable network: definition plus one parameter set per convolution.
class Network {
public:
    Network() = default;
    Network(NetworkDef def, std::vector<ConvParams> params);

    const NetworkDef& def() const { return def_; }
    const ShapeTrace& shapes() const { return shapes_; }
    const std::vector<ConvParams>& params() const { return params_; }
    std::vector<ConvParams>& params() { return params_; }

    /// Index into params() for a convolutional layer, -1 otherwise.
    int conv_slot(int layer) const { return conv_slot_[layer]; }
    int conv_count() const { return static_cast<int>(params_.size()); }

    /// Inference forward pass; dropout is an identity, BN uses rolling
    /// statistics. Returns the raw head tensor (no activations applied to
    /// the head channels).
    Tensor forward(const Tensor& input, ConvPath path = ConvPath::Optimized) const;

    const YoloSpec& head() const;
    LayerShape head_shape() const { return shapes_.back(); }

private:
    NetworkDef def_;
    std::vector<ConvParams> params_;
    ShapeTrace shapes_;
    std::vector<int> conv_slot_;
};

/// Everything the backward pass needs from a training-mode forward.
struct ForwardTrace {
    Tensor input;
    std::vector<Tensor> conv_pre_bn;         // per layer: raw conv output entering BN
    std::vector<Tensor> pre_activation;      // per layer: value entering the activation
    std::vector<Tensor> outputs;             // per layer: layer output
    std::vector<BatchStats> bn_stats;        // per conv slot (empty when no BN)
    std::vector<std::vector<float>> dropout_masks;  // per layer (empty when not dropout)
};

/// Training-mode forward: BN uses batch statistics (and advances the rolling
/// ones), dropout is active and consumes `rng`.
Tensor train_forward(Network& net, const Tensor& input, Rng& rng, ForwardTrace& trace,
                     ConvPath path = ConvPath::Optimized);

/// Gradients for every trainable parameter of one convolution.
struct ConvTrainableGrads {
    Tensor weights;
    std::vector<float> bias;   // beta gradient when the layer has BN
    std::vector<float> gamma;  // empty when no BN
};

using ParamGrads = std::vector<ConvTrainableGrads>;

ParamGrads zero_grads(const Network& net);

/// Backpropagate d(loss)/d(head) through the traced forward pass,
/// accumulating into `grads` (+=).
void train_backward(Network& net, const ForwardTrace& trace, const Tensor& dhead, ParamGrads& grads,
                    ConvPath path = ConvPath::Optimized);

}  // namespace spermdet
