#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spermdet/config.hpp"
#include "spermdet/detector.hpp"
#include "spermdet/network.hpp"

namespace spermdet {

/// Learning rate at an iteration: quartic ramp from 0 over the burn-in
/// window, then the base rate scaled by every step factor already passed.
float lr_at(int iteration, const TrainConfig& cfg);

/// Per-(anchor, cell) training targets for one image.
struct TargetAssignment {
    enum SlotKind : std::int8_t { Negative = 0, Positive = 1, Ignore = 2 };

    int grid_w = 0, grid_h = 0, num_anchors = 0;
    std::vector<std::int8_t> kind;  // SlotKind per slot
    // targets below are meaningful for positive slots only
    std::vector<float> tx, ty;      // targets for the sigmoided center offsets
    std::vector<float> tw, th;      // raw targets for the log-size channels
    std::vector<float> scale;       // box-loss weight, 2 - area fraction

    std::size_t slot(int anchor, int row, int col) const {
        return (static_cast<std::size_t>(anchor) * grid_h + row) * grid_w + col;
    }
    std::size_t slots() const { return kind.size(); }
};

/// Assign each ground-truth box (network-input pixels) to the best
/// width/height-IoU anchor in its center cell, with decode-inverted box
/// targets. Non-positive slots whose decoded prediction overlaps any ground
/// truth above ignore_thresh are excluded from the objectness loss.
/// `decoded` must follow decode_boxes' slot order.
TargetAssignment assign_targets(const std::vector<BBox>& gts,
                                const std::vector<std::pair<float, float>>& anchors, int grid_w,
                                int grid_h, int net_w, int net_h, const std::vector<BBox>& decoded,
                                float ignore_thresh);

struct LossResult {
    double loss = 0;
    Tensor dhead;  // analytic d(loss)/d(raw head)
};

/// Single-image head loss: weighted squared error on the box channels for
/// positives, binary cross-entropy on objectness over non-ignored slots and
/// on the class channel over positives.
LossResult yolo_loss(const Tensor& head, const TargetAssignment& assignment);

/// Mutable training state: parameters live inside the network, velocity
/// mirrors every trainable parameter.
struct TrainState {
    Network net;
    ParamGrads velocity;
    int iteration = 0;
    std::uint64_t rng_seed = 0;
};

/// Momentum SGD with weight decay: v <- momentum*v - lr*(grad + decay*w),
/// w <- w + v. BN rolling statistics are not parameters and stay untouched.
void sgd_step(TrainState& state, const ParamGrads& grads, float lr, const TrainConfig& cfg);

/// Dimension clustering with d = 1 - IoU of origin-centered boxes;
/// deterministic for a given seed, result sorted by area ascending.
std::vector<std::pair<float, float>> kmeans_anchors(const std::vector<std::pair<float, float>>& boxes,
                                                    int k, std::uint64_t seed);

/// Fresh parameters: weights uniform in +-sqrt(2/(in*k*k)), biases zero,
/// BN gamma 1 / mean 0 / var 1. Each convolution draws from its own stream
/// of `seed`, so a layer's initialization does not depend on the others.
std::vector<ConvParams> init_params(const NetworkDef& def, std::uint64_t seed);

struct TrainSample {
    Image image;
    std::vector<BBox> boxes;  // original-image pixels
};

struct TrainOptions {
    ConvPath conv_path = ConvPath::Optimized;
    int checkpoint_interval = 100;
    /// Receives the initial state (iteration 0), every interval, and the end.
    std::function<void(int iteration, const Network& net, std::uint64_t seen)> checkpoint_sink;
    std::function<void(int iteration, float loss, float smoothed, float lr)> log;
    /// Invoked every periodic_interval iterations; returning true stops early.
    std::function<bool(int iteration, const Network& net)> periodic;
    int periodic_interval = 100;
    /// Resume support: start from these parameters at this iteration.
    std::optional<std::vector<ConvParams>> initial_params;
    int start_iteration = 0;
};

struct TrainResult {
    Network net;
    std::vector<float> loss;           // per completed iteration
    std::vector<float> smoothed_loss;  // 0.9/0.1 exponential moving average
    std::uint64_t seen = 0;
    int final_iteration = 0;
};

/// Full training loop: per iteration sample a batch with replacement,
/// jitter, letterbox, forward in training mode, accumulate gradients over
/// `subdivisions` micro-batches, then one SGD step at lr_at(iteration).
/// Reproducible from (seed, dataset order) on the reference conv path.
TrainResult train(const NetworkDef& def, const std::vector<TrainSample>& dataset,
                  const TrainConfig& cfg, const AugmentConfig& augment, std::uint64_t seed,
                  const TrainOptions& options = {});

/// `<stem>_<iteration>.weights` inside `dir`.
std::string checkpoint_path(const std::string& dir, const std::string& stem, int iteration);

}  // namespace spermdet
