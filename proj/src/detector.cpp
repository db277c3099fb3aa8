#include "spermdet/detector.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "spermdet/errors.hpp"
#include "spermdet/netdef.hpp"
#include "spermdet/ops.hpp"

namespace spermdet {

std::pair<Tensor, LetterboxTransform> letterbox(const Image& image, int net_w, int net_h) {
    const Image rgb = to_rgb(image);
    LetterboxTransform t;
    t.scale = std::min(static_cast<float>(net_w) / rgb.width, static_cast<float>(net_h) / rgb.height);
    const int fit_w = static_cast<int>(std::lround(rgb.width * t.scale));
    const int fit_h = static_cast<int>(std::lround(rgb.height * t.scale));
    t.pad_x = static_cast<float>((net_w - fit_w) / 2);
    t.pad_y = static_cast<float>((net_h - fit_h) / 2);

    Tensor out(1, 3, net_h, net_w);
    std::fill(out.data.begin(), out.data.end(), 0.5f);

    const int x0 = static_cast<int>(t.pad_x), y0 = static_cast<int>(t.pad_y);
    for (int y = 0; y < fit_h; ++y) {
        // bilinear sample position in the source image
        const float sy = (y + 0.5f) / t.scale - 0.5f;
        const int iy0 = static_cast<int>(std::floor(sy));
        const float fy = sy - iy0;
        const int y_lo = std::clamp(iy0, 0, rgb.height - 1);
        const int y_hi = std::clamp(iy0 + 1, 0, rgb.height - 1);
        for (int x = 0; x < fit_w; ++x) {
            const float sx = (x + 0.5f) / t.scale - 0.5f;
            const int ix0 = static_cast<int>(std::floor(sx));
            const float fx = sx - ix0;
            const int x_lo = std::clamp(ix0, 0, rgb.width - 1);
            const int x_hi = std::clamp(ix0 + 1, 0, rgb.width - 1);
            for (int c = 0; c < 3; ++c) {
                const float v00 = rgb.at(x_lo, y_lo, c), v01 = rgb.at(x_hi, y_lo, c);
                const float v10 = rgb.at(x_lo, y_hi, c), v11 = rgb.at(x_hi, y_hi, c);
                const float v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                out.at(0, c, y0 + y, x0 + x) = v / 255.0f;
            }
        }
    }
    return {std::move(out), t};
}

BBox to_network_frame(const BBox& b, const LetterboxTransform& t) {
    return {b.cx * t.scale + t.pad_x, b.cy * t.scale + t.pad_y, b.w * t.scale, b.h * t.scale};
}

BBox to_image_frame(const BBox& b, const LetterboxTransform& t) {
    return {(b.cx - t.pad_x) / t.scale, (b.cy - t.pad_y) / t.scale, b.w / t.scale, b.h / t.scale};
}

namespace {

void check_head(const Tensor& head, std::size_t anchor_count) {
    const int want = filters_per_cell(static_cast<int>(anchor_count), 1);
    if (head.c != want)
        throw ShapeError("head has " + std::to_string(head.c) + " channels, decode expects " +
                         std::to_string(want));
}

}  // namespace

std::vector<BBox> decode_boxes(const Tensor& head, const std::vector<std::pair<float, float>>& anchors,
                               int net_w, int net_h) {
    check_head(head, anchors.size());
    const int grid_h = head.h, grid_w = head.w;
    const float stride_x = static_cast<float>(net_w) / grid_w;
    const float stride_y = static_cast<float>(net_h) / grid_h;

    std::vector<BBox> boxes;
    boxes.reserve(anchors.size() * grid_h * grid_w);
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const int base = static_cast<int>(a) * 6;
        for (int row = 0; row < grid_h; ++row) {
            for (int col = 0; col < grid_w; ++col) {
                BBox b;
                b.cx = (logistic(head.at(0, base + 0, row, col)) + col) * stride_x;
                b.cy = (logistic(head.at(0, base + 1, row, col)) + row) * stride_y;
                // clamp keeps a diverged head finite instead of overflowing exp
                b.w = anchors[a].first * std::exp(std::min(60.0f, head.at(0, base + 2, row, col)));
                b.h = anchors[a].second * std::exp(std::min(60.0f, head.at(0, base + 3, row, col)));
                boxes.push_back(b);
            }
        }
    }
    return boxes;
}

std::vector<Detection> decode(const Tensor& head, const std::vector<std::pair<float, float>>& anchors,
                              int net_w, int net_h, float conf_thresh) {
    check_head(head, anchors.size());
    const std::vector<BBox> boxes = decode_boxes(head, anchors, net_w, net_h);
    const int grid_h = head.h, grid_w = head.w;

    std::vector<Detection> dets;
    std::size_t slot = 0;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const int base = static_cast<int>(a) * 6;
        for (int row = 0; row < grid_h; ++row) {
            for (int col = 0; col < grid_w; ++col, ++slot) {
                Detection d;
                d.objectness = logistic(head.at(0, base + 4, row, col));
                d.class_prob = logistic(head.at(0, base + 5, row, col));
                d.confidence = d.objectness * d.class_prob;
                if (d.confidence < conf_thresh) continue;
                d.box = boxes[slot];
                dets.push_back(d);
            }
        }
    }
    return dets;
}

float iou(const BBox& a, const BBox& b) {
    const float ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2;
    const float ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
    const float bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2;
    const float by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
    const float iw = std::max(0.0f, std::min(ax2, bx2) - std::max(ax1, bx1));
    const float ih = std::max(0.0f, std::min(ay2, by2) - std::max(ay1, by1));
    const float inter = iw * ih;
    const float uni = a.w * a.h + b.w * b.h - inter;
    return uni > 0.0f ? inter / uni : 0.0f;
}

std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh) {
    std::vector<std::size_t> order(dets.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&dets](std::size_t i, std::size_t j) {
        return dets[i].confidence > dets[j].confidence;
    });

    std::vector<bool> suppressed(dets.size(), false);
    std::vector<Detection> kept;
    for (std::size_t oi = 0; oi < order.size(); ++oi) {
        if (suppressed[order[oi]]) continue;
        const Detection& best = dets[order[oi]];
        kept.push_back(best);
        for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
            if (!suppressed[order[oj]] && iou(best.box, dets[order[oj]].box) > iou_thresh)
                suppressed[order[oj]] = true;
        }
    }
    return kept;
}

std::vector<Detection> map_back(std::vector<Detection> dets, const LetterboxTransform& t) {
    for (Detection& d : dets) d.box = to_image_frame(d.box, t);
    return dets;
}

std::string format_detections(const std::vector<Detection>& dets) {
    std::string out;
    char line[160];
    for (const Detection& d : dets) {
        std::snprintf(line, sizeof(line), "0 %.6f %.6f %.6f %.6f %.6f\n",
                      static_cast<double>(d.confidence), static_cast<double>(d.box.cx),
                      static_cast<double>(d.box.cy), static_cast<double>(d.box.w),
                      static_cast<double>(d.box.h));
        out += line;
    }
    return out;
}

std::vector<Detection> parse_detections(const std::string& text) {
    std::vector<Detection> dets;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream fields(line);
        int cls;
        Detection d;
        if (!(fields >> cls >> d.confidence >> d.box.cx >> d.box.cy >> d.box.w >> d.box.h))
            throw Error("detection file line " + std::to_string(line_no) + " is malformed: " + line);
        d.objectness = d.confidence;
        d.class_prob = 1.0f;
        dets.push_back(d);
    }
    return dets;
}

void draw_detections(Image& image, const std::vector<Detection>& dets) {
    const std::uint8_t color[3] = {255, 64, 64};
    auto put = [&image, &color](int x, int y) {
        if (x < 0 || x >= image.width || y < 0 || y >= image.height) return;
        for (int c = 0; c < image.channels; ++c)
            image.at(x, y, c) = image.channels == 3 ? color[c] : color[0];
    };
    for (const Detection& d : dets) {
        const int x1 = static_cast<int>(std::lround(d.box.cx - d.box.w / 2));
        const int x2 = static_cast<int>(std::lround(d.box.cx + d.box.w / 2));
        const int y1 = static_cast<int>(std::lround(d.box.cy - d.box.h / 2));
        const int y2 = static_cast<int>(std::lround(d.box.cy + d.box.h / 2));
        for (int x = x1; x <= x2; ++x) { put(x, y1); put(x, y2); }
        for (int y = y1; y <= y2; ++y) { put(x1, y); put(x2, y); }
    }
}

std::vector<Detection> detect_image(const Network& net, const Image& image, float conf_thresh,
                                    float nms_thresh, ConvPath path, DetectTiming* timing) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    auto [input, transform] = letterbox(image, net.def().input_width, net.def().input_height);
    const auto t1 = clock::now();

    const Tensor head = net.forward(input, path);
    std::vector<Detection> dets =
        decode(head, net.head().anchors, net.def().input_width, net.def().input_height, conf_thresh);
    dets = nms(std::move(dets), nms_thresh);
    const auto t2 = clock::now();

    if (timing) {
        timing->preprocess_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
        timing->inference_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    }
    return map_back(std::move(dets), transform);
}

}  // namespace spermdet
