#pragma once

#include <string>
#include <utility>
#include <vector>

#include "spermdet/image.hpp"
#include "spermdet/network.hpp"
#include "spermdet/tensor.hpp"

namespace spermdet {

/// Axis-aligned box as center and size, in pixels of whichever frame the
/// call site states.
struct BBox {
    float cx = 0, cy = 0, w = 0, h = 0;
};

struct Detection {
    BBox box;
    float objectness = 0;
    float class_prob = 0;
    float confidence = 0;  // objectness * class_prob
};

/// Maps original-image pixels into the padded network canvas and back.
struct LetterboxTransform {
    float scale = 1;
    float pad_x = 0, pad_y = 0;
};

/// Aspect-preserving bilinear resize into a net_w x net_h canvas, centered,
/// 0.5-gray padding, values scaled to [0,1].
std::pair<Tensor, LetterboxTransform> letterbox(const Image& image, int net_w, int net_h);

BBox to_network_frame(const BBox& b, const LetterboxTransform& t);
BBox to_image_frame(const BBox& b, const LetterboxTransform& t);

/// Dense decode of every (anchor, row, col) slot, anchor-major order,
/// no thresholding. Channel layout per anchor is (tx, ty, tw, th, to, tc).
std::vector<BBox> decode_boxes(const Tensor& head, const std::vector<std::pair<float, float>>& anchors,
                               int net_w, int net_h);

/// Thresholded decode: keeps detections with confidence >= conf_thresh,
/// boxes in the network-input pixel frame.
std::vector<Detection> decode(const Tensor& head, const std::vector<std::pair<float, float>>& anchors,
                              int net_w, int net_h, float conf_thresh);

float iou(const BBox& a, const BBox& b);

/// Greedy non-maximum suppression; result sorted by confidence descending.
std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh);

/// Undo the letterbox transform on every detection.
std::vector<Detection> map_back(std::vector<Detection> dets, const LetterboxTransform& t);

/// Text exchange format: one `class confidence cx cy w h` line per
/// detection, 6-decimal fixed point, original-image pixels.
std::string format_detections(const std::vector<Detection>& dets);
std::vector<Detection> parse_detections(const std::string& text);

/// Draw 1-pixel box outlines (clamped to the image bounds).
void draw_detections(Image& image, const std::vector<Detection>& dets);

struct DetectTiming {
    double preprocess_ms = 0;
    double inference_ms = 0;  // forward + decode + nms
};

std::vector<Detection> detect_image(const Network& net, const Image& image, float conf_thresh,
                                    float nms_thresh, ConvPath path = ConvPath::Optimized,
                                    DetectTiming* timing = nullptr);

}  // namespace spermdet
