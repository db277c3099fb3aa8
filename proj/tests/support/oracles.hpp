#pragma once

// Independent reference implementations used as test oracles. Everything here
// is computed in double precision and written directly from the math, with no
// calls into the library paths under test.

#include <functional>
#include <vector>

#include "spermdet/detector.hpp"
#include "spermdet/eval.hpp"
#include "spermdet/tensor.hpp"
#include "spermdet/trainer.hpp"

namespace oracle {

struct Dims {
    int n = 1, c = 1, h = 1, w = 1;
    std::size_t count() const { return static_cast<std::size_t>(n) * c * h * w; }
};

// direct cross-correlation, zero padding, optional bias
std::vector<double> conv2d(const std::vector<double>& x, Dims in, const std::vector<double>& weights,
                           int out_channels, int kernel, const std::vector<double>& bias,
                           bool add_bias, int stride, int pad);

// training-mode batch normalization: batch statistics over N*H*W per channel
std::vector<double> batchnorm_train(const std::vector<double>& x, Dims in,
                                    const std::vector<double>& gamma, const std::vector<double>& beta,
                                    double epsilon);

std::vector<double> leaky_relu(const std::vector<double>& x);

// central finite differences of a scalar functional
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double step);

// worst relative disagreement between two gradient vectors
double max_rel_error(const std::vector<double>& a, const std::vector<double>& b,
                     double denom_floor = 1e-4);

std::vector<double> to_double(const std::vector<float>& v);

// independent greedy NMS with the same keep/suppress definition
std::vector<spermdet::Detection> nms(std::vector<spermdet::Detection> dets, float iou_thresh);

// independent pooled-AP computation with a rescan-everything envelope
double average_precision(const std::vector<std::vector<spermdet::PredBox>>& preds,
                         const std::vector<std::vector<spermdet::BBox>>& gts, double iou_thresh);

// independent double-precision head loss following the same composition
double yolo_loss(const std::vector<double>& head, const spermdet::TargetAssignment& assignment);

}  // namespace oracle
