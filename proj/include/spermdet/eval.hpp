#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "spermdet/detector.hpp"

namespace spermdet {

/// Parse YOLO-format annotations (`class cx cy w h`, normalized floats) and
/// denormalize against the image size. Only class 0 is accepted.
std::vector<BBox> parse_yolo_annotations(std::string_view text, int image_w, int image_h);

/// One scored single-class prediction for evaluation.
struct PredBox {
    BBox box;
    float confidence = 0;
};

struct EvalResult {
    std::int64_t tp = 0, fp = 0, fn = 0;
    std::vector<std::pair<double, double>> pr_curve;  // (recall, precision)
    double ap = 0;
    double map50 = 0;  // equals ap with a single class
};

/// Pooled-detections average precision: predictions across all images are
/// sorted by confidence (ties broken by image order, then emission order),
/// greedily matched against unmatched ground truth at IoU >= iou_thresh,
/// and integrated as the area under the precision envelope. Set
/// eleven_point for the legacy 11-point interpolation instead.
EvalResult average_precision(const std::vector<std::vector<PredBox>>& preds_per_image,
                             const std::vector<std::vector<BBox>>& gts_per_image,
                             double iou_thresh = 0.5, bool eleven_point = false);

/// Variant with explicit image ids indexing the ground-truth list; an id
/// outside the list raises EvalError(UnknownImageId).
struct ImagePredictions {
    int image_id = 0;
    std::vector<PredBox> preds;
};
EvalResult average_precision(const std::vector<ImagePredictions>& preds,
                             const std::vector<std::vector<BBox>>& gts_per_image,
                             double iou_thresh = 0.5, bool eleven_point = false);

/// Directory evaluation: every `.txt` prediction file must have a matching
/// ground-truth file and vice versa. Ground truth is normalized, so the
/// caller supplies image dimensions per stem.
using ImageSizeLookup = std::function<std::pair<int, int>(const std::string& stem)>;
EvalResult evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir, double iou_thresh,
                            const ImageSizeLookup& image_size, bool eleven_point = false);

}  // namespace spermdet
