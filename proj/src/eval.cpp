#include "spermdet/eval.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "spermdet/errors.hpp"

namespace fs = std::filesystem;

namespace spermdet {

std::vector<BBox> parse_yolo_annotations(std::string_view text, int image_w, int image_h) {
    std::vector<BBox> boxes;
    std::istringstream in{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream fields(line);
        int cls;
        double cx, cy, w, h;
        std::string extra;
        if (!(fields >> cls >> cx >> cy >> w >> h) || (fields >> extra))
            throw AnnotationError(AnnotationError::Kind::MalformedLine,
                                  "annotation line " + std::to_string(line_no) + " is malformed: " + line,
                                  line_no);
        auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
        if (cls != 0 || !in_unit(cx) || !in_unit(cy) || !in_unit(w) || !in_unit(h))
            throw AnnotationError(AnnotationError::Kind::ValueOutOfRange,
                                  "annotation line " + std::to_string(line_no) +
                                      " outside the normalized range (or class != 0)",
                                  line_no);
        boxes.push_back({static_cast<float>(cx * image_w), static_cast<float>(cy * image_h),
                         static_cast<float>(w * image_w), static_cast<float>(h * image_h)});
    }
    return boxes;
}

namespace {

struct PooledPred {
    int image;
    int order;  // emission order within the image
    float confidence;
    BBox box;
};

double envelope_area(const std::vector<std::pair<double, double>>& curve) {
    // Area under max-precision-at-recall>=r, summed over recall increments.
    std::vector<double> suffix_max(curve.size());
    double best = 0.0;
    for (std::size_t i = curve.size(); i-- > 0;) {
        best = std::max(best, curve[i].second);
        suffix_max[i] = best;
    }
    double ap = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const double recall = curve[i].first;
        if (recall <= prev_recall) continue;
        ap += (recall - prev_recall) * suffix_max[i];
        prev_recall = recall;
    }
    return ap;
}

double eleven_point_area(const std::vector<std::pair<double, double>>& curve) {
    double total = 0.0;
    for (int i = 0; i <= 10; ++i) {
        const double r = i / 10.0;
        double best = 0.0;
        for (const auto& [recall, precision] : curve)
            if (recall >= r) best = std::max(best, precision);
        total += best;
    }
    return total / 11.0;
}

}  // namespace

EvalResult average_precision(const std::vector<ImagePredictions>& preds,
                             const std::vector<std::vector<BBox>>& gts_per_image, double iou_thresh,
                             bool eleven_point) {
    std::vector<PooledPred> pool;
    for (const ImagePredictions& img : preds) {
        if (img.image_id < 0 || img.image_id >= static_cast<int>(gts_per_image.size()))
            throw EvalError(EvalError::Kind::UnknownImageId,
                            "predictions reference image id " + std::to_string(img.image_id) +
                                " with no ground truth");
        for (std::size_t i = 0; i < img.preds.size(); ++i)
            pool.push_back({img.image_id, static_cast<int>(i), img.preds[i].confidence, img.preds[i].box});
    }
    // confidence descending; ties broken by image order then emission order
    std::stable_sort(pool.begin(), pool.end(), [](const PooledPred& a, const PooledPred& b) {
        return a.confidence > b.confidence;
    });

    std::int64_t total_gt = 0;
    for (const auto& gts : gts_per_image) total_gt += static_cast<std::int64_t>(gts.size());

    EvalResult result;
    std::vector<std::vector<bool>> matched(gts_per_image.size());
    for (std::size_t i = 0; i < gts_per_image.size(); ++i) matched[i].assign(gts_per_image[i].size(), false);

    std::int64_t tp = 0, fp = 0;
    for (const PooledPred& p : pool) {
        const std::vector<BBox>& gts = gts_per_image[p.image];
        int best_gt = -1;
        float best_iou = 0.0f;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (matched[p.image][g]) continue;
            const float overlap = iou(p.box, gts[g]);
            if (overlap > best_iou) {
                best_iou = overlap;
                best_gt = static_cast<int>(g);
            }
        }
        if (best_gt >= 0 && best_iou >= static_cast<float>(iou_thresh)) {
            matched[p.image][best_gt] = true;
            ++tp;
        } else {
            ++fp;
        }
        const double recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
        const double precision = static_cast<double>(tp) / (tp + fp);
        result.pr_curve.emplace_back(recall, precision);
    }

    result.tp = tp;
    result.fp = fp;
    result.fn = total_gt - tp;
    if (total_gt == 0) {
        result.ap = pool.empty() ? 1.0 : 0.0;
    } else {
        result.ap = eleven_point ? eleven_point_area(result.pr_curve) : envelope_area(result.pr_curve);
    }
    result.map50 = result.ap;
    return result;
}

EvalResult average_precision(const std::vector<std::vector<PredBox>>& preds_per_image,
                             const std::vector<std::vector<BBox>>& gts_per_image, double iou_thresh,
                             bool eleven_point) {
    std::vector<ImagePredictions> preds;
    preds.reserve(preds_per_image.size());
    for (std::size_t i = 0; i < preds_per_image.size(); ++i)
        preds.push_back({static_cast<int>(i), preds_per_image[i]});
    return average_precision(preds, gts_per_image, iou_thresh, eleven_point);
}

EvalResult evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir, double iou_thresh,
                            const ImageSizeLookup& image_size, bool eleven_point) {
    auto list_txt = [](const std::string& dir) {
        std::set<std::string> stems;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && entry.path().extension() == ".txt")
                stems.insert(entry.path().stem().string());
        return stems;
    };
    const std::set<std::string> pred_stems = list_txt(pred_dir);
    const std::set<std::string> gt_stems = list_txt(gt_dir);
    for (const std::string& stem : gt_stems)
        if (!pred_stems.count(stem))
            throw EvalError(EvalError::Kind::MissingCounterpart,
                            "no prediction file for ground truth '" + stem + ".txt'");
    for (const std::string& stem : pred_stems)
        if (!gt_stems.count(stem))
            throw EvalError(EvalError::Kind::MissingCounterpart,
                            "no ground-truth file for prediction '" + stem + ".txt'");

    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };

    std::vector<std::vector<PredBox>> preds;
    std::vector<std::vector<BBox>> gts;
    for (const std::string& stem : gt_stems) {  // set iteration = deterministic file order
        const auto [w, h] = image_size(stem);
        gts.push_back(parse_yolo_annotations(slurp(fs::path(gt_dir) / (stem + ".txt")), w, h));
        std::vector<PredBox> image_preds;
        for (const Detection& d : parse_detections(slurp(fs::path(pred_dir) / (stem + ".txt"))))
            image_preds.push_back({d.box, d.confidence});
        preds.push_back(std::move(image_preds));
    }
    return average_precision(preds, gts, iou_thresh, eleven_point);
}

}  // namespace spermdet
