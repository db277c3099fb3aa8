#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <variant>

#include <CLI11.hpp>
#include <json.hpp>

#include "spermdet/augment.hpp"
#include "spermdet/detector.hpp"
#include "spermdet/errors.hpp"
#include "spermdet/eval.hpp"
#include "spermdet/netdef.hpp"
#include "spermdet/network.hpp"
#include "spermdet/trainer.hpp"
#include "spermdet/weights_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace spermdet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;    // input/parse errors
constexpr int kExitPairing = 3;  // evaluation pairing errors
constexpr int kExitNumeric = 4;  // NaN abort and friends

struct GlobalOptions {
    float conf_thresh = 0.25f;
    float nms_thresh = 0.45f;
    float eval_iou = 0.5f;
    std::uint64_t seed = 1234567;
    int jobs = 1;
    std::string format = "text";
    std::string out_dir = ".";
    std::string conv = "optimized";
};

ConvPath conv_path(const GlobalOptions& g) {
    return g.conv == "reference" ? ConvPath::Reference : ConvPath::Optimized;
}

const char* layer_name(const LayerSpec& layer) {
    if (std::holds_alternative<ConvolutionalSpec>(layer)) return "convolutional";
    if (std::holds_alternative<ShortcutSpec>(layer)) return "shortcut";
    if (std::holds_alternative<DropoutSpec>(layer)) return "dropout";
    return "yolo";
}

void emit(const GlobalOptions& g, const std::string& text_report, const json& metrics,
          const std::string& command, const json& inputs, double elapsed_ms) {
    if (g.format == "json") {
        json out{{"command", command}, {"inputs", inputs}, {"metrics", metrics},
                 {"timing", {{"total_ms", elapsed_ms}}}};
        std::cout << out.dump(2) << "\n";
    } else {
        std::cout << text_report;
    }
}

Network load_network(const std::string& cfg_path, const std::string& weights_path, ParsedCfg* parsed_out = nullptr) {
    ParsedCfg parsed = parse_cfg_file(cfg_path);
    if (const auto violations = validate(parsed.net); !violations.empty()) {
        std::string msg = "configuration failed validation:";
        for (const Violation& v : violations)
            msg += "\n  layer " + std::to_string(v.layer) + ": " + v.rule;
        throw Error(msg);
    }
    if (parsed_out) *parsed_out = parsed;
    LoadedWeights loaded = read_weights_file(weights_path, parsed.net);
    return Network(parsed.net, std::move(loaded.params));
}

/// Image sizes for normalized ground truth: look for a sibling raster with
/// the same stem, else fall back to the --frame-size flag.
ImageSizeLookup make_size_lookup(const std::string& gt_dir, std::optional<std::pair<int, int>> frame) {
    return [gt_dir, frame](const std::string& stem) -> std::pair<int, int> {
        for (const char* ext : {".ppm", ".pgm", ".pnm"}) {
            const fs::path candidate = fs::path(gt_dir) / (stem + ext);
            if (fs::exists(candidate)) {
                const Image img = read_pnm_file(candidate.string());
                return {img.width, img.height};
            }
        }
        if (frame) return *frame;
        throw Error("no image next to ground truth '" + stem + "' and no --frame-size given");
    };
}

std::vector<std::string> expand_inputs(const std::vector<std::string>& inputs) {
    std::vector<std::string> files;
    for (const std::string& inp : inputs) {
        if (fs::is_directory(inp)) {
            for (const auto& entry : fs::directory_iterator(inp)) {
                const std::string ext = entry.path().extension().string();
                if (ext == ".ppm" || ext == ".pgm" || ext == ".pnm") files.push_back(entry.path().string());
            }
        } else {
            files.push_back(inp);
        }
    }
    std::sort(files.begin(), files.end());
    return files;
}

int cmd_info(const GlobalOptions& g, const std::string& cfg_path) {
    const auto t0 = std::chrono::steady_clock::now();
    ParsedCfg parsed = parse_cfg_file(cfg_path);
    const auto violations = validate(parsed.net);
    if (!violations.empty()) {
        std::cerr << "configuration failed validation:\n";
        for (const Violation& v : violations)
            std::cerr << "  layer " << v.layer << ": " << v.rule << "\n";
        return kExitInput;
    }
    const ShapeTrace shapes = infer_shapes(parsed.net);
    const ParamCount pc = param_count(parsed.net);

    std::ostringstream report;
    report << "layer  type           output (c x h x w)\n";
    for (std::size_t i = 0; i < parsed.net.layers.size(); ++i) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-6zu %-14s %d x %d x %d\n", i,
                      layer_name(parsed.net.layers[i]), shapes[i].c, shapes[i].h, shapes[i].w);
        report << line;
    }
    report << "layers: " << parsed.net.layers.size() << "\n";
    report << "input: " << parsed.net.input_channels << " x " << parsed.net.input_height << " x "
           << parsed.net.input_width << "\n";
    report << "head: " << shapes.back().c << " x " << shapes.back().h << " x " << shapes.back().w << "\n";
    report << "parameters: " << pc.total_floats << " floats\n";
    char size_line[96];
    std::snprintf(size_line, sizeof(size_line), "weights file size: %lld bytes (%.2f MB)\n",
                  static_cast<long long>(pc.serialized_bytes), pc.serialized_bytes / 1e6);
    report << size_line;

    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    json metrics{{"layers", parsed.net.layers.size()},
                 {"head", {shapes.back().c, shapes.back().h, shapes.back().w}},
                 {"total_floats", pc.total_floats},
                 {"serialized_bytes", pc.serialized_bytes}};
    emit(g, report.str(), metrics, "info", json{{"cfg", cfg_path}}, ms);
    return kExitOk;
}

int cmd_detect(const GlobalOptions& g, const std::string& cfg_path, const std::string& weights_path,
               const std::vector<std::string>& inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    const Network net = load_network(cfg_path, weights_path);
    const std::vector<std::string> files = expand_inputs(inputs);
    if (files.empty()) throw Error("no input images");
    fs::create_directories(g.out_dir);

    std::mutex report_mutex;
    std::ostringstream report;
    std::atomic<std::size_t> next{0};
    std::atomic<int> failures{0};
    double total_infer_ms = 0.0;
    std::size_t total_dets = 0;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= files.size()) return;
            try {
                const Image image = read_pnm_file(files[i]);
                DetectTiming timing;
                const std::vector<Detection> dets =
                    detect_image(net, image, g.conf_thresh, g.nms_thresh, conv_path(g), &timing);

                const std::string stem = fs::path(files[i]).stem().string();
                std::ofstream txt(fs::path(g.out_dir) / (stem + ".txt"), std::ios::trunc);
                txt << format_detections(dets);
                Image overlay = to_rgb(image);
                draw_detections(overlay, dets);
                write_pnm_file((fs::path(g.out_dir) / (stem + ".ppm")).string(), overlay);

                std::lock_guard<std::mutex> lock(report_mutex);
                char line[256];
                std::snprintf(line, sizeof(line), "%s: %zu detections, preprocess %.1f ms, infer %.1f ms\n",
                              files[i].c_str(), dets.size(), timing.preprocess_ms, timing.inference_ms);
                report << line;
                total_infer_ms += timing.inference_ms;
                total_dets += dets.size();
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(report_mutex);
                report << files[i] << ": ERROR " << e.what() << "\n";
                failures.fetch_add(1);
            }
        }
    };
    std::vector<std::thread> pool;
    const int jobs = std::max(1, g.jobs);
    for (int j = 1; j < jobs; ++j) pool.emplace_back(worker);
    worker();
    for (std::thread& t : pool) t.join();

    const double fps = total_infer_ms > 0 ? 1000.0 * files.size() / total_infer_ms : 0.0;
    char summary[128];
    std::snprintf(summary, sizeof(summary), "%zu images, %zu detections, %.1f fps (forward+decode+nms)\n",
                  files.size(), total_dets, fps);
    report << summary;

    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    json metrics{{"images", files.size()}, {"detections", total_dets}, {"fps", fps}};
    emit(g, report.str(), metrics, "detect",
         json{{"cfg", cfg_path}, {"weights", weights_path}, {"count", files.size()}}, ms);
    return failures.load() == 0 ? kExitOk : kExitInput;
}

int cmd_eval(const GlobalOptions& g, const std::string& pred_dir, const std::string& gt_dir,
             std::optional<std::pair<int, int>> frame_size, bool eleven_point) {
    const auto t0 = std::chrono::steady_clock::now();
    const EvalResult result =
        evaluate_dataset(pred_dir, gt_dir, g.eval_iou, make_size_lookup(gt_dir, frame_size), eleven_point);

    char line[160];
    std::snprintf(line, sizeof(line), "tp=%lld fp=%lld fn=%lld\nAP@%.2f = %.6f\nmAP@%.2f = %.6f\n",
                  static_cast<long long>(result.tp), static_cast<long long>(result.fp),
                  static_cast<long long>(result.fn), g.eval_iou, result.ap, g.eval_iou, result.map50);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    json metrics{{"tp", result.tp}, {"fp", result.fp}, {"fn", result.fn},
                 {"ap", result.ap},  {"map50", result.map50}};
    emit(g, line, metrics, "eval", json{{"pred_dir", pred_dir}, {"gt_dir", gt_dir}}, ms);
    return kExitOk;
}

int cmd_stats(const GlobalOptions& g, const std::vector<std::string>& inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<std::string> files = expand_inputs(inputs);
    if (files.empty()) throw Error("no input images");

    std::ostringstream report;
    json all = json::array();
    for (const std::string& file : files) {
        const ImageStats stats = grayscale_stats(read_pnm_file(file));
        char line[192];
        std::snprintf(line, sizeof(line), "%s: mean=%.2f std=%.2f\n", file.c_str(), stats.mean,
                      stats.stddev);
        report << line;
        report << "histogram:";
        for (std::int64_t count : stats.histogram) report << " " << count;
        report << "\n";
        json hist = json::array();
        for (std::int64_t count : stats.histogram) hist.push_back(count);
        all.push_back({{"image", file}, {"mean", stats.mean}, {"std", stats.stddev}, {"histogram", hist}});
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    emit(g, report.str(), all, "stats", json{{"count", files.size()}}, ms);
    return kExitOk;
}

int cmd_anchors(const GlobalOptions& g, const std::string& gt_dir, int k,
                std::optional<std::pair<int, int>> frame_size, int net_w, int net_h) {
    const auto t0 = std::chrono::steady_clock::now();
    const ImageSizeLookup lookup = make_size_lookup(gt_dir, frame_size);

    std::vector<std::pair<float, float>> sizes;
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(gt_dir))
        if (entry.is_regular_file() && entry.path().extension() == ".txt") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const fs::path& file : files) {
        const auto [w, h] = lookup(file.stem().string());
        std::ifstream in(file);
        std::stringstream ss;
        ss << in.rdbuf();
        LetterboxTransform t;
        t.scale = std::min(static_cast<float>(net_w) / w, static_cast<float>(net_h) / h);
        for (const BBox& b : parse_yolo_annotations(ss.str(), w, h))
            sizes.emplace_back(b.w * t.scale, b.h * t.scale);
    }
    const auto anchors = kmeans_anchors(sizes, k, g.seed);

    std::string line = "anchors = ";
    char token[48];
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        std::snprintf(token, sizeof(token), "%s%.0f,%.0f", i ? ",  " : "", anchors[i].first,
                      anchors[i].second);
        line += token;
    }
    line += "\n";
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    json metrics = json::array();
    for (const auto& [w, h] : anchors) metrics.push_back({{"w", w}, {"h", h}});
    emit(g, line, metrics, "anchors", json{{"gt_dir", gt_dir}, {"k", k}, {"boxes", sizes.size()}}, ms);
    return kExitOk;
}

int cmd_augment(const GlobalOptions& g, const std::string& input, const std::string& output,
                float saturation, float exposure, float hue) {
    const Image image = read_pnm_file(input);
    AugmentConfig cfg{saturation, exposure, hue};
    Rng rng(g.seed);
    write_pnm_file(output, jitter(image, cfg, rng));
    std::cout << "wrote " << output << "\n";
    return kExitOk;
}

/// Evaluate every checkpoint in a directory against an annotated image set
/// and report which one scores the highest mAP.
int cmd_best(const GlobalOptions& g, const std::string& cfg_path, const std::string& ckpt_dir,
             const std::string& image_dir) {
    const auto t0 = std::chrono::steady_clock::now();
    ParsedCfg parsed = parse_cfg_file(cfg_path);
    if (const auto violations = validate(parsed.net); !violations.empty())
        throw Error("configuration failed validation");

    std::vector<fs::path> checkpoints;
    for (const auto& entry : fs::directory_iterator(ckpt_dir))
        if (entry.path().extension() == ".weights") checkpoints.push_back(entry.path());
    std::sort(checkpoints.begin(), checkpoints.end());
    if (checkpoints.empty()) throw Error("no .weights files in " + ckpt_dir);

    std::vector<fs::path> images = [&] {
        std::vector<fs::path> v;
        for (const std::string& f : expand_inputs({image_dir})) v.emplace_back(f);
        return v;
    }();
    if (images.empty()) throw Error("no images in " + image_dir);

    std::vector<std::vector<BBox>> gts;
    std::vector<Image> rasters;
    for (const fs::path& img_path : images) {
        rasters.push_back(read_pnm_file(img_path.string()));
        const fs::path ann = fs::path(img_path).replace_extension(".txt");
        std::ifstream in(ann);
        if (!in) throw EvalError(EvalError::Kind::MissingCounterpart, "no annotations: " + ann.string());
        std::stringstream ss;
        ss << in.rdbuf();
        gts.push_back(parse_yolo_annotations(ss.str(), rasters.back().width, rasters.back().height));
    }

    std::ostringstream report;
    json per_ckpt = json::array();
    std::string best_name;
    double best_map = -1.0;
    for (const fs::path& ckpt : checkpoints) {
        LoadedWeights loaded = read_weights_file(ckpt.string(), parsed.net);
        const Network net(parsed.net, std::move(loaded.params));
        std::vector<std::vector<PredBox>> preds(rasters.size());
        for (std::size_t i = 0; i < rasters.size(); ++i)
            for (const Detection& d : detect_image(net, rasters[i], 0.005f, g.nms_thresh, conv_path(g)))
                preds[i].push_back({d.box, d.confidence});
        const double map50 = average_precision(preds, gts, g.eval_iou).map50;
        char line[256];
        std::snprintf(line, sizeof(line), "%s: mAP@%.2f = %.6f\n", ckpt.filename().c_str(),
                      g.eval_iou, map50);
        report << line;
        per_ckpt.push_back({{"checkpoint", ckpt.filename().string()}, {"map50", map50}});
        if (map50 > best_map) {
            best_map = map50;
            best_name = ckpt.filename().string();
        }
    }
    report << "best: " << best_name << " (mAP " << best_map << ")\n";

    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    json metrics{{"checkpoints", per_ckpt}, {"best", best_name}, {"best_map50", best_map}};
    emit(g, report.str(), metrics, "best", json{{"cfg", cfg_path}, {"dir", ckpt_dir}}, ms);
    return kExitOk;
}

int cmd_train(const GlobalOptions& g, const std::string& cfg_path, const std::string& list_path,
              const std::string& resume_path) {
    const auto t0 = std::chrono::steady_clock::now();
    ParsedCfg parsed = parse_cfg_file(cfg_path);

    std::ifstream list(list_path);
    if (!list) throw Error("cannot open dataset list: " + list_path);
    std::vector<TrainSample> dataset;
    std::string image_path;
    while (std::getline(list, image_path)) {
        if (image_path.empty()) continue;
        TrainSample sample;
        sample.image = read_pnm_file(image_path);
        const fs::path ann = fs::path(image_path).replace_extension(".txt");
        std::ifstream ann_in(ann);
        if (!ann_in) throw Error("missing annotations: " + ann.string());
        std::stringstream ss;
        ss << ann_in.rdbuf();
        sample.boxes = parse_yolo_annotations(ss.str(), sample.image.width, sample.image.height);
        dataset.push_back(std::move(sample));
    }

    fs::create_directories(g.out_dir);
    const std::string stem = fs::path(cfg_path).stem().string();
    TrainOptions options;
    options.conv_path = conv_path(g);
    options.checkpoint_sink = [&](int iteration, const Network& net, std::uint64_t seen) {
        WeightsHeader header;
        header.seen = seen;
        write_weights_file(checkpoint_path(g.out_dir, stem, iteration), net.def(), net.params(), header);
    };
    options.log = [](int iteration, float loss, float smoothed, float lr) {
        std::printf("iter %5d  loss %.4f  avg %.4f  lr %.6g\n", iteration, static_cast<double>(loss),
                    static_cast<double>(smoothed), static_cast<double>(lr));
        std::fflush(stdout);
    };
    if (!resume_path.empty()) {
        LoadedWeights loaded = read_weights_file(resume_path, parsed.net);
        options.start_iteration = static_cast<int>(loaded.header.seen / parsed.train.batch);
        options.initial_params = std::move(loaded.params);
    }

    const TrainResult result = train(parsed.net, dataset, parsed.train, parsed.augment, g.seed, options);

    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    char summary[160];
    std::snprintf(summary, sizeof(summary), "trained to iteration %d (%llu images seen), final avg loss %.4f\n",
                  result.final_iteration, static_cast<unsigned long long>(result.seen),
                  result.smoothed_loss.empty() ? 0.0 : static_cast<double>(result.smoothed_loss.back()));
    json metrics{{"iterations", result.final_iteration},
                 {"seen", result.seen},
                 {"final_loss", result.loss.empty() ? 0.0f : result.loss.back()}};
    emit(g, summary, metrics, "train", json{{"cfg", cfg_path}, {"list", list_path}}, ms);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-class small-object detector: darknet-style cfg/weights, CPU inference, "
                 "training, and mAP evaluation"};
    app.require_subcommand(1);

    GlobalOptions g;
    app.add_option("--thresh", g.conf_thresh, "detection confidence threshold")->capture_default_str();
    app.add_option("--nms", g.nms_thresh, "NMS IoU threshold")->capture_default_str();
    app.add_option("--iou", g.eval_iou, "evaluation IoU threshold")->capture_default_str();
    app.add_option("--seed", g.seed, "rng seed")->capture_default_str();
    app.add_option("--jobs", g.jobs, "parallel images in detect")->capture_default_str();
    app.add_option("--format", g.format, "output format: text|json")
        ->check(CLI::IsMember({"text", "json"}))->capture_default_str();
    app.add_option("--out-dir", g.out_dir, "output directory")->capture_default_str();
    app.add_option("--conv-path", g.conv, "convolution path: optimized|reference")
        ->check(CLI::IsMember({"optimized", "reference"}))->capture_default_str();

    std::string cfg_path, weights_path, list_path, resume_path;
    std::vector<std::string> inputs;
    std::string pred_dir, gt_dir, aug_in, aug_out;
    int k_anchors = 3, net_w = 640, net_h = 640;
    std::vector<int> frame_size_flag;
    bool eleven_point = false;
    float aug_sat = 1.5f, aug_exp = 1.5f, aug_hue = 0.1f;

    CLI::App* info = app.add_subcommand("info", "parse a cfg and report shapes and parameter counts");
    info->add_option("cfg", cfg_path)->required();

    CLI::App* detect = app.add_subcommand("detect", "run detection over images");
    detect->add_option("cfg", cfg_path)->required();
    detect->add_option("weights", weights_path)->required();
    detect->add_option("images", inputs, "image files or directories")->required();

    CLI::App* eval = app.add_subcommand("eval", "score predictions against ground truth (mAP@50)");
    eval->add_option("pred_dir", pred_dir)->required();
    eval->add_option("gt_dir", gt_dir)->required();
    eval->add_option("--frame-size", frame_size_flag, "fallback image size W H")->expected(2);
    eval->add_flag("--11point", eleven_point, "11-point AP interpolation");

    CLI::App* stats = app.add_subcommand("stats", "grayscale mean/std/histogram per image");
    stats->add_option("images", inputs)->required();

    CLI::App* anchors = app.add_subcommand("anchors", "fit anchors to an annotation set with k-means");
    anchors->add_option("gt_dir", gt_dir)->required();
    anchors->add_option("-k", k_anchors, "cluster count")->capture_default_str();
    anchors->add_option("--net-size", net_w, "network input size the anchors target");
    anchors->add_option("--frame-size", frame_size_flag, "fallback image size W H")->expected(2);

    CLI::App* augment = app.add_subcommand("augment", "photometric jitter preview");
    augment->add_option("input", aug_in)->required();
    augment->add_option("output", aug_out)->required();
    augment->add_option("--saturation", aug_sat)->capture_default_str();
    augment->add_option("--exposure", aug_exp)->capture_default_str();
    augment->add_option("--hue", aug_hue)->capture_default_str();

    CLI::App* train_cmd = app.add_subcommand("train", "train on a dataset list file");
    train_cmd->add_option("cfg", cfg_path)->required();
    train_cmd->add_option("list", list_path, "one image path per line")->required();
    train_cmd->add_option("--resume", resume_path, "checkpoint to continue from");

    std::string ckpt_dir, image_dir;
    CLI::App* best = app.add_subcommand("best", "pick the checkpoint with the highest mAP");
    best->add_option("cfg", cfg_path)->required();
    best->add_option("checkpoint_dir", ckpt_dir)->required();
    best->add_option("image_dir", image_dir, "annotated images (.txt alongside)")->required();

    CLI11_PARSE(app, argc, argv);

    std::optional<std::pair<int, int>> frame_size;
    if (frame_size_flag.size() == 2) frame_size = {frame_size_flag[0], frame_size_flag[1]};

    try {
        if (info->parsed()) return cmd_info(g, cfg_path);
        if (detect->parsed()) return cmd_detect(g, cfg_path, weights_path, inputs);
        if (eval->parsed()) return cmd_eval(g, pred_dir, gt_dir, frame_size, eleven_point);
        if (stats->parsed()) return cmd_stats(g, inputs);
        if (anchors->parsed()) { net_h = net_w; return cmd_anchors(g, gt_dir, k_anchors, frame_size, net_w, net_h); }
        if (augment->parsed()) return cmd_augment(g, aug_in, aug_out, aug_sat, aug_exp, aug_hue);
        if (train_cmd->parsed()) return cmd_train(g, cfg_path, list_path, resume_path);
        if (best->parsed()) return cmd_best(g, cfg_path, ckpt_dir, image_dir);
    } catch (const EvalError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitPairing;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        // 4 is reserved for numeric breakdowns mid-computation; bad inputs stay 2
        return e.kind == NumericError::Kind::NanLoss ? kExitNumeric : kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}
