#include "spermdet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <variant>

#include "spermdet/augment.hpp"
#include "spermdet/errors.hpp"

namespace spermdet {

float lr_at(int iteration, const TrainConfig& cfg) {
    if (iteration < cfg.burn_in) {
        const double ramp = static_cast<double>(iteration) / cfg.burn_in;
        return static_cast<float>(cfg.learning_rate * ramp * ramp * ramp * ramp);
    }
    double lr = cfg.learning_rate;
    for (std::size_t i = 0; i < cfg.steps.size(); ++i)
        if (iteration > cfg.steps[i]) lr *= cfg.scales[i];
    return static_cast<float>(lr);
}

namespace {

float wh_iou(float w1, float h1, float w2, float h2) {
    const float inter = std::min(w1, w2) * std::min(h1, h2);
    const float uni = w1 * h1 + w2 * h2 - inter;
    return uni > 0.0f ? inter / uni : 0.0f;
}

/// softplus(z) = log(1 + exp(z)) without overflow.
double softplus(double z) {
    return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

TargetAssignment assign_targets(const std::vector<BBox>& gts,
                                const std::vector<std::pair<float, float>>& anchors, int grid_w,
                                int grid_h, int net_w, int net_h, const std::vector<BBox>& decoded,
                                float ignore_thresh) {
    TargetAssignment a;
    a.grid_w = grid_w;
    a.grid_h = grid_h;
    a.num_anchors = static_cast<int>(anchors.size());
    const std::size_t n = anchors.size() * grid_w * grid_h;
    if (decoded.size() != n)
        throw ShapeError("assign_targets: decoded prediction count does not match the grid");
    a.kind.assign(n, TargetAssignment::Negative);
    a.tx.assign(n, 0.0f);
    a.ty.assign(n, 0.0f);
    a.tw.assign(n, 0.0f);
    a.th.assign(n, 0.0f);
    a.scale.assign(n, 0.0f);

    // ignore first, positives overwrite
    for (std::size_t s = 0; s < n; ++s) {
        for (const BBox& gt : gts) {
            if (iou(decoded[s], gt) > ignore_thresh) {
                a.kind[s] = TargetAssignment::Ignore;
                break;
            }
        }
    }

    const float stride_x = static_cast<float>(net_w) / grid_w;
    const float stride_y = static_cast<float>(net_h) / grid_h;
    for (const BBox& gt : gts) {
        if (!(gt.cx >= 0 && gt.cx < net_w && gt.cy >= 0 && gt.cy < net_h))
            throw NumericError(NumericError::Kind::GtOutsideCanvas,
                               "ground-truth center outside the network canvas");
        const int col = std::min(grid_w - 1, static_cast<int>(gt.cx / stride_x));
        const int row = std::min(grid_h - 1, static_cast<int>(gt.cy / stride_y));

        int best_anchor = 0;
        float best = -1.0f;
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            const float overlap = wh_iou(gt.w, gt.h, anchors[i].first, anchors[i].second);
            if (overlap > best) {
                best = overlap;
                best_anchor = static_cast<int>(i);
            }
        }

        const std::size_t s = a.slot(best_anchor, row, col);
        a.kind[s] = TargetAssignment::Positive;
        a.tx[s] = gt.cx / stride_x - col;
        a.ty[s] = gt.cy / stride_y - row;
        a.tw[s] = std::log(gt.w / anchors[best_anchor].first);
        a.th[s] = std::log(gt.h / anchors[best_anchor].second);
        a.scale[s] = 2.0f - (gt.w * gt.h) / (static_cast<float>(net_w) * net_h);
    }
    return a;
}

LossResult yolo_loss(const Tensor& head, const TargetAssignment& a) {
    if (head.n != 1 || head.c != a.num_anchors * 6 || head.h != a.grid_h || head.w != a.grid_w)
        throw ShapeError("yolo_loss: head shape does not match the assignment grid");

    LossResult result;
    result.dhead = Tensor(1, head.c, head.h, head.w);
    double loss = 0.0;

    for (int anchor = 0; anchor < a.num_anchors; ++anchor) {
        const int base = anchor * 6;
        for (int row = 0; row < a.grid_h; ++row) {
            for (int col = 0; col < a.grid_w; ++col) {
                const std::size_t s = a.slot(anchor, row, col);
                const float to = head.at(0, base + 4, row, col);
                const float so = logistic(to);

                if (a.kind[s] == TargetAssignment::Positive) {
                    const float tx = head.at(0, base + 0, row, col);
                    const float ty = head.at(0, base + 1, row, col);
                    const float tw = head.at(0, base + 2, row, col);
                    const float th = head.at(0, base + 3, row, col);
                    const float sx = logistic(tx), sy = logistic(ty);
                    const float w = a.scale[s];

                    loss += w * ((sx - a.tx[s]) * (sx - a.tx[s]) + (sy - a.ty[s]) * (sy - a.ty[s]) +
                                 (tw - a.tw[s]) * (tw - a.tw[s]) + (th - a.th[s]) * (th - a.th[s]));
                    result.dhead.at(0, base + 0, row, col) = w * 2 * (sx - a.tx[s]) * sx * (1 - sx);
                    result.dhead.at(0, base + 1, row, col) = w * 2 * (sy - a.ty[s]) * sy * (1 - sy);
                    result.dhead.at(0, base + 2, row, col) = w * 2 * (tw - a.tw[s]);
                    result.dhead.at(0, base + 3, row, col) = w * 2 * (th - a.th[s]);

                    // objectness toward 1, class toward 1
                    loss += softplus(-to);
                    result.dhead.at(0, base + 4, row, col) = so - 1.0f;
                    const float tc = head.at(0, base + 5, row, col);
                    loss += softplus(-tc);
                    result.dhead.at(0, base + 5, row, col) = logistic(tc) - 1.0f;
                } else if (a.kind[s] == TargetAssignment::Negative) {
                    loss += softplus(to);
                    result.dhead.at(0, base + 4, row, col) = so;
                }
            }
        }
    }
    result.loss = loss;
    return result;
}

void sgd_step(TrainState& state, const ParamGrads& grads, float lr, const TrainConfig& cfg) {
    auto update = [&](float& w, float& v, float g) {
        v = cfg.momentum * v - lr * (g + cfg.decay * w);
        w += v;
    };
    std::vector<ConvParams>& params = state.net.params();
    if (grads.size() != params.size() || state.velocity.size() != params.size())
        throw ShapeError("sgd_step: gradient/velocity count mismatch");

    for (std::size_t s = 0; s < params.size(); ++s) {
        ConvParams& p = params[s];
        ConvTrainableGrads& v = state.velocity[s];
        const ConvTrainableGrads& g = grads[s];
        for (std::size_t i = 0; i < p.weights.size(); ++i)
            update(p.weights.data[i], v.weights.data[i], g.weights.data[i]);
        for (std::size_t i = 0; i < p.bias.size(); ++i) update(p.bias[i], v.bias[i], g.bias[i]);
        if (p.bn)
            for (std::size_t i = 0; i < p.bn->gamma.size(); ++i)
                update(p.bn->gamma[i], v.gamma[i], g.gamma[i]);
    }
}

std::vector<std::pair<float, float>> kmeans_anchors(const std::vector<std::pair<float, float>>& boxes,
                                                    int k, std::uint64_t seed) {
    if (static_cast<int>(boxes.size()) < k)
        throw NumericError(NumericError::Kind::TooFewBoxes,
                           "k-means needs at least " + std::to_string(k) + " boxes, got " +
                               std::to_string(boxes.size()));
    auto distance = [](const std::pair<float, float>& box, const std::pair<float, float>& centroid) {
        return 1.0f - wh_iou(box.first, box.second, centroid.first, centroid.second);
    };

    Rng rng(seed);
    std::vector<std::pair<float, float>> centroids;
    centroids.push_back(boxes[rng.uniform_int(static_cast<int>(boxes.size()))]);
    // k-means++ style seeding: weight by distance to the nearest centroid
    while (static_cast<int>(centroids.size()) < k) {
        std::vector<float> weights(boxes.size());
        float total = 0.0f;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            float nearest = std::numeric_limits<float>::max();
            for (const auto& c : centroids) nearest = std::min(nearest, distance(boxes[i], c));
            weights[i] = nearest;
            total += nearest;
        }
        if (total <= 0.0f) {
            centroids.push_back(boxes[rng.uniform_int(static_cast<int>(boxes.size()))]);
            continue;
        }
        float pick = rng.uniform() * total;
        std::size_t chosen = boxes.size() - 1;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            pick -= weights[i];
            if (pick <= 0.0f) {
                chosen = i;
                break;
            }
        }
        centroids.push_back(boxes[chosen]);
    }

    std::vector<int> assignment(boxes.size(), -1);
    for (int round = 0; round < 100; ++round) {
        bool changed = false;
        for (std::size_t i = 0; i < boxes.size(); ++i) {
            int best = 0;
            float best_d = std::numeric_limits<float>::max();
            for (int c = 0; c < k; ++c) {
                const float d = distance(boxes[i], centroids[c]);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            if (assignment[i] != best) {
                assignment[i] = best;
                changed = true;
            }
        }
        if (!changed && round > 0) break;

        for (int c = 0; c < k; ++c) {
            double sum_w = 0, sum_h = 0;
            int count = 0;
            for (std::size_t i = 0; i < boxes.size(); ++i) {
                if (assignment[i] != c) continue;
                sum_w += boxes[i].first;
                sum_h += boxes[i].second;
                ++count;
            }
            if (count == 0) {
                // re-seed an empty cluster with the worst-fitting box
                std::size_t farthest = 0;
                float worst = -1.0f;
                for (std::size_t i = 0; i < boxes.size(); ++i) {
                    const float d = distance(boxes[i], centroids[assignment[i]]);
                    if (d > worst) {
                        worst = d;
                        farthest = i;
                    }
                }
                centroids[c] = boxes[farthest];
            } else {
                centroids[c] = {static_cast<float>(sum_w / count), static_cast<float>(sum_h / count)};
            }
        }
    }

    std::sort(centroids.begin(), centroids.end(), [](const auto& a, const auto& b) {
        return a.first * a.second < b.first * b.second;
    });
    return centroids;
}

std::vector<ConvParams> init_params(const NetworkDef& def, std::uint64_t seed) {
    std::vector<ConvParams> params;
    int channels = def.input_channels;
    int slot = 0;
    for (const LayerSpec& layer : def.layers) {
        const auto* conv = std::get_if<ConvolutionalSpec>(&layer);
        if (!conv) continue;
        Rng rng = Rng::derive(seed, 0x1d17, static_cast<std::uint64_t>(slot));
        ConvParams p;
        p.weights = Tensor(conv->filters, channels, conv->size, conv->size);
        const float bound = std::sqrt(2.0f / (static_cast<float>(channels) * conv->size * conv->size));
        for (float& w : p.weights.data) w = rng.uniform(-bound, bound);
        p.bias.assign(conv->filters, 0.0f);
        if (conv->batch_normalize) {
            BatchNormParams bn;
            bn.gamma.assign(conv->filters, 1.0f);
            bn.rolling_mean.assign(conv->filters, 0.0f);
            bn.rolling_var.assign(conv->filters, 1.0f);
            p.bn = std::move(bn);
        }
        params.push_back(std::move(p));
        channels = conv->filters;
        ++slot;
    }
    return params;
}

namespace {

struct NetFrameSample {
    std::vector<BBox> boxes;  // network-input pixels
};

}  // namespace

TrainResult train(const NetworkDef& def, const std::vector<TrainSample>& dataset,
                  const TrainConfig& cfg, const AugmentConfig& augment, std::uint64_t seed,
                  const TrainOptions& options) {
    if (dataset.empty())
        throw NumericError(NumericError::Kind::EmptyDataset, "training dataset is empty");
    if (const std::vector<Violation> violations = validate(def); !violations.empty())
        throw Error("network failed validation: layer " + std::to_string(violations.front().layer) +
                    ": " + violations.front().rule);
    if (cfg.batch < 1 || cfg.subdivisions < 1 || cfg.batch % cfg.subdivisions != 0)
        throw Error("batch must be divisible by subdivisions");

    TrainState state;
    state.rng_seed = seed;
    state.iteration = options.start_iteration;
    state.net = Network(def, options.initial_params ? *options.initial_params : init_params(def, seed));
    state.velocity = zero_grads(state.net);

    const YoloSpec& head_spec = state.net.head();
    const LayerShape head_shape = state.net.head_shape();
    const int grid_w = head_shape.w, grid_h = head_shape.h;
    const int net_w = def.input_width, net_h = def.input_height;
    const int micro = cfg.batch / cfg.subdivisions;

    // boxes are unaffected by photometric jitter, so their network-frame
    // coordinates can be fixed up front
    std::vector<NetFrameSample> net_frame(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        auto [tensor, transform] = letterbox(dataset[i].image, net_w, net_h);
        (void)tensor;
        for (const BBox& b : dataset[i].boxes)
            net_frame[i].boxes.push_back(to_network_frame(b, transform));
    }

    TrainResult result;
    const auto checkpoint = [&](int iteration) {
        if (options.checkpoint_sink)
            options.checkpoint_sink(iteration, state.net,
                                    static_cast<std::uint64_t>(iteration) * cfg.batch);
    };
    checkpoint(state.iteration);

    float smoothed = 0.0f;
    bool have_smoothed = false;
    for (int iteration = state.iteration + 1; iteration <= cfg.max_batches; ++iteration) {
        const float lr = lr_at(iteration, cfg);
        ParamGrads grads = zero_grads(state.net);
        double iteration_loss = 0.0;

        for (int sub = 0; sub < cfg.subdivisions; ++sub) {
            Tensor batch(micro, def.input_channels, net_h, net_w);
            std::vector<int> indices(micro);
            for (int m = 0; m < micro; ++m) {
                const int slot_id = sub * micro + m;
                Rng pick = Rng::derive(seed, static_cast<std::uint64_t>(iteration), slot_id, 0);
                const int idx = pick.uniform_int(static_cast<int>(dataset.size()));
                indices[m] = idx;
                Rng aug_rng = Rng::derive(seed, static_cast<std::uint64_t>(iteration), slot_id, 1);
                const Image jittered = jitter(dataset[idx].image, augment, aug_rng);
                auto [tensor, transform] = letterbox(jittered, net_w, net_h);
                (void)transform;
                std::memcpy(batch.data.data() + batch.index(m, 0, 0, 0), tensor.data.data(),
                            tensor.size() * sizeof(float));
            }

            Rng dropout_rng = Rng::derive(seed, static_cast<std::uint64_t>(iteration), sub, 2);
            ForwardTrace trace;
            const Tensor head = train_forward(state.net, batch, dropout_rng, trace, options.conv_path);

            Tensor dhead(head.n, head.c, head.h, head.w);
            for (int m = 0; m < micro; ++m) {
                const Tensor head_m = head.slice(m);
                const std::vector<BBox> decoded = decode_boxes(head_m, head_spec.anchors, net_w, net_h);
                const TargetAssignment targets =
                    assign_targets(net_frame[indices[m]].boxes, head_spec.anchors, grid_w, grid_h,
                                   net_w, net_h, decoded, cfg.ignore_thresh);
                LossResult part = yolo_loss(head_m, targets);
                iteration_loss += part.loss;
                std::memcpy(dhead.data.data() + dhead.index(m, 0, 0, 0), part.dhead.data.data(),
                            part.dhead.size() * sizeof(float));
            }
            train_backward(state.net, trace, dhead, grads, options.conv_path);
        }

        // gradients averaged over the full batch regardless of subdivisions
        const float inv_batch = 1.0f / cfg.batch;
        for (ConvTrainableGrads& g : grads) {
            for (float& v : g.weights.data) v *= inv_batch;
            for (float& v : g.bias) v *= inv_batch;
            for (float& v : g.gamma) v *= inv_batch;
        }
        sgd_step(state, grads, lr, cfg);
        state.iteration = iteration;

        const float mean_loss = static_cast<float>(iteration_loss / cfg.batch);
        if (!std::isfinite(mean_loss))
            throw NumericError(NumericError::Kind::NanLoss,
                               "loss became non-finite at iteration " + std::to_string(iteration) +
                                   " (lr=" + std::to_string(lr) + ")");
        smoothed = have_smoothed ? 0.9f * smoothed + 0.1f * mean_loss : mean_loss;
        have_smoothed = true;
        result.loss.push_back(mean_loss);
        result.smoothed_loss.push_back(smoothed);
        if (options.log) options.log(iteration, mean_loss, smoothed, lr);

        const bool at_end = iteration == cfg.max_batches;
        if (options.checkpoint_interval > 0 && (iteration % options.checkpoint_interval == 0 || at_end))
            checkpoint(iteration);
        if (options.periodic && options.periodic_interval > 0 && iteration % options.periodic_interval == 0 &&
            options.periodic(iteration, state.net)) {
            if (!(options.checkpoint_interval > 0 && iteration % options.checkpoint_interval == 0))
                checkpoint(iteration);
            break;
        }
    }

    result.net = std::move(state.net);
    result.seen = static_cast<std::uint64_t>(state.iteration) * cfg.batch;
    result.final_iteration = state.iteration;
    return result;
}

std::string checkpoint_path(const std::string& dir, const std::string& stem, int iteration) {
    return dir + "/" + stem + "_" + std::to_string(iteration) + ".weights";
}

}  // namespace spermdet
