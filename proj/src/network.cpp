#include "spermdet/network.hpp"

#include <variant>

#include "spermdet/errors.hpp"

namespace spermdet {

namespace {

Tensor apply_activation(Activation act, const Tensor& x) {
    switch (act) {
        case Activation::Leaky: return leaky_relu(x);
        case Activation::Logistic: return logistic(x);
        default: return x;
    }
}

Tensor activation_backward(Activation act, const Tensor& pre, const Tensor& dy) {
    switch (act) {
        case Activation::Leaky: return leaky_relu_backward(pre, dy);
        case Activation::Logistic: return logistic_backward(pre, dy);
        default: return dy;
    }
}

}  // namespace

Network::Network(NetworkDef def, std::vector<ConvParams> params)
    : def_(std::move(def)), params_(std::move(params)) {
    shapes_ = infer_shapes(def_);
    conv_slot_.assign(def_.layers.size(), -1);
    int slot = 0;
    for (std::size_t i = 0; i < def_.layers.size(); ++i)
        if (std::holds_alternative<ConvolutionalSpec>(def_.layers[i])) conv_slot_[i] = slot++;
    if (static_cast<int>(params_.size()) != slot)
        throw ShapeError("network expects " + std::to_string(slot) + " convolution parameter sets, got " +
                         std::to_string(params_.size()));
}

const YoloSpec& Network::head() const {
    if (def_.layers.empty() || !std::holds_alternative<YoloSpec>(def_.layers.back()))
        throw ShapeError("network does not end in a yolo layer");
    return std::get<YoloSpec>(def_.layers.back());
}

Tensor Network::forward(const Tensor& input, ConvPath path) const {
    if (input.c != def_.input_channels || input.h != def_.input_height || input.w != def_.input_width)
        throw ShapeError("network input shape mismatch");

    std::vector<Tensor> outputs;
    outputs.reserve(def_.layers.size());
    const Tensor* current = &input;
    for (std::size_t i = 0; i < def_.layers.size(); ++i) {
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def_.layers[i])) {
            const ConvParams& p = params_[conv_slot_[i]];
            Tensor y = conv2d(*current, p, conv->stride, conv->pad, path);
            if (conv->batch_normalize) y = batchnorm_forward(y, p, kBnEpsilon);
            outputs.push_back(apply_activation(conv->activation, y));
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&def_.layers[i])) {
            outputs.push_back(apply_activation(sc->activation, shortcut_add(*current, outputs[sc->from])));
        } else {
            outputs.push_back(*current);  // dropout (inference) and yolo pass through
        }
        current = &outputs.back();
    }
    return outputs.back();
}

Tensor train_forward(Network& net, const Tensor& input, Rng& rng, ForwardTrace& trace, ConvPath path) {
    const NetworkDef& def = net.def();
    if (input.c != def.input_channels || input.h != def.input_height || input.w != def.input_width)
        throw ShapeError("network input shape mismatch");

    const std::size_t n_layers = def.layers.size();
    trace.input = input;
    trace.conv_pre_bn.assign(n_layers, {});
    trace.pre_activation.assign(n_layers, {});
    trace.outputs.assign(n_layers, {});
    trace.bn_stats.assign(net.conv_count(), {});
    trace.dropout_masks.assign(n_layers, {});

    const Tensor* current = &trace.input;
    for (std::size_t i = 0; i < n_layers; ++i) {
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def.layers[i])) {
            const int slot = net.conv_slot(static_cast<int>(i));
            ConvParams& p = net.params()[slot];
            Tensor y = conv2d(*current, p, conv->stride, conv->pad, path);
            if (conv->batch_normalize) {
                trace.conv_pre_bn[i] = y;
                y = batchnorm_forward(y, p, RunMode::Training, kBnEpsilon, &trace.bn_stats[slot]);
            }
            trace.pre_activation[i] = y;
            trace.outputs[i] = apply_activation(conv->activation, y);
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&def.layers[i])) {
            Tensor y = shortcut_add(*current, trace.outputs[sc->from]);
            trace.pre_activation[i] = y;
            trace.outputs[i] = apply_activation(sc->activation, y);
        } else if (const auto* drop = std::get_if<DropoutSpec>(&def.layers[i])) {
            trace.outputs[i] = dropout(*current, drop->probability, RunMode::Training, rng,
                                       &trace.dropout_masks[i]);
        } else {
            trace.outputs[i] = *current;  // yolo passes the raw head through
        }
        current = &trace.outputs[i];
    }
    return trace.outputs.back();
}

ParamGrads zero_grads(const Network& net) {
    ParamGrads grads(net.conv_count());
    for (int s = 0; s < net.conv_count(); ++s) {
        const ConvParams& p = net.params()[s];
        grads[s].weights = Tensor(p.weights.n, p.weights.c, p.weights.h, p.weights.w);
        grads[s].bias.assign(p.bias.size(), 0.0f);
        if (p.bn) grads[s].gamma.assign(p.bn->gamma.size(), 0.0f);
    }
    return grads;
}

void train_backward(Network& net, const ForwardTrace& trace, const Tensor& dhead, ParamGrads& grads,
                    ConvPath path) {
    const NetworkDef& def = net.def();
    const int n_layers = static_cast<int>(def.layers.size());
    if (static_cast<int>(grads.size()) != net.conv_count())
        throw ShapeError("train_backward gradient accumulator count mismatch");

    auto layer_input = [&](int i) -> const Tensor& {
        return i == 0 ? trace.input : trace.outputs[i - 1];
    };
    auto add_into = [](Tensor& dst, const Tensor& src) {
        if (dst.size() == 0) {
            dst = src;
            return;
        }
        for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
    };

    // d(loss)/d(output) per layer, accumulated as shortcuts fan gradients out.
    std::vector<Tensor> dout(n_layers);
    dout[n_layers - 1] = dhead;

    Tensor dinput;  // gradient reaching the network input; discarded
    for (int i = n_layers - 1; i >= 0; --i) {
        if (dout[i].size() == 0) continue;
        Tensor* upstream = i > 0 ? &dout[i - 1] : &dinput;

        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def.layers[i])) {
            const int slot = net.conv_slot(i);
            ConvParams& p = net.params()[slot];
            Tensor d = activation_backward(conv->activation, trace.pre_activation[i], dout[i]);
            if (conv->batch_normalize) {
                BnGrads bn_grads;
                bn_grads.dbeta = std::move(grads[slot].bias);
                bn_grads.dgamma = std::move(grads[slot].gamma);
                d = batchnorm_backward(trace.conv_pre_bn[i], p, trace.bn_stats[slot], kBnEpsilon, d,
                                       bn_grads);
                grads[slot].bias = std::move(bn_grads.dbeta);
                grads[slot].gamma = std::move(bn_grads.dgamma);
            }
            ConvGrads conv_grads;
            conv_grads.dweights = std::move(grads[slot].weights);
            if (!p.bn) conv_grads.dbias = std::move(grads[slot].bias);
            Tensor dx = conv2d_backward(layer_input(i), p, conv->stride, conv->pad, d, conv_grads, path);
            grads[slot].weights = std::move(conv_grads.dweights);
            if (!p.bn) grads[slot].bias = std::move(conv_grads.dbias);
            add_into(*upstream, dx);
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&def.layers[i])) {
            Tensor d = activation_backward(sc->activation, trace.pre_activation[i], dout[i]);
            add_into(*upstream, d);
            add_into(dout[sc->from], d);
        } else if (std::holds_alternative<DropoutSpec>(def.layers[i])) {
            add_into(*upstream, dropout_backward(dout[i], trace.dropout_masks[i]));
        } else {
            add_into(*upstream, dout[i]);
        }
    }
}

}  // namespace spermdet
