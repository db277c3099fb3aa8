#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "spermdet/image.hpp"
#include "spermdet/netdef.hpp"
#include "spermdet/trainer.hpp"
#include "spermdet/weights_io.hpp"
#include "support/synth.hpp"

using namespace spermdet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
    const std::string command = std::string(SPERMDET_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(command.c_str(), "r");
    REQUIRE(pipe != nullptr);
    RunResult result;
    char buffer[4096];
    while (std::size_t got = fread(buffer, 1, sizeof(buffer), pipe)) result.output.append(buffer, got);
    const int status = pclose(pipe);
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return result;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / ("spermdet_cli_" + name + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc);
    out << text;
}

const std::string kBundledCfg = std::string(SPERMDET_SOURCE_DIR) + "/cfg/deepsperm.cfg";

const char* kTinyCfg =
    "[net]\nwidth=64\nheight=64\nchannels=3\n"
    "[convolutional]\nbatch_normalize=1\nfilters=8\nsize=3\nstride=2\npad=1\nactivation=leaky\n"
    "[convolutional]\nbatch_normalize=1\nfilters=8\nsize=3\nstride=2\npad=1\nactivation=leaky\n"
    "[convolutional]\nbatch_normalize=1\nfilters=8\nsize=3\nstride=2\npad=1\nactivation=leaky\n"
    "[convolutional]\nfilters=18\nsize=1\nstride=1\npad=1\nactivation=linear\n"
    "[yolo]\nanchors=8,14, 10,18, 14,24\nclasses=1\n";

void write_zero_weights(const fs::path& cfg_path, const fs::path& weights_path) {
    const ParsedCfg parsed = parse_cfg_file(cfg_path.string());
    auto params = init_params(parsed.net, 1);
    for (ConvParams& p : params) {
        std::fill(p.weights.data.begin(), p.weights.data.end(), 0.0f);
        std::fill(p.bias.begin(), p.bias.end(), 0.0f);
        if (p.bn) {
            std::fill(p.bn->gamma.begin(), p.bn->gamma.end(), 1.0f);
            std::fill(p.bn->rolling_mean.begin(), p.bn->rolling_mean.end(), 0.0f);
            std::fill(p.bn->rolling_var.begin(), p.bn->rolling_var.end(), 1.0f);
        }
    }
    write_weights_file(weights_path.string(), parsed.net, params, WeightsHeader{});
}

}  // namespace

TEST_CASE("info reports the bundled head and size") {
    const RunResult r = run_cli("info " + kBundledCfg);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("head: 18 x 80 x 80") != std::string::npos);
    CHECK(r.output.find("layers: 46") != std::string::npos);
}

TEST_CASE("info emits schema-stable json") {
    const RunResult r = run_cli("--format json info " + kBundledCfg);
    CHECK(r.exit_code == 0);
    const nlohmann::json parsed = nlohmann::json::parse(r.output);
    CHECK(parsed.contains("command"));
    CHECK(parsed.contains("inputs"));
    CHECK(parsed.contains("metrics"));
    CHECK(parsed.contains("timing"));
    CHECK(parsed["metrics"]["head"] == nlohmann::json({18, 80, 80}));
}

TEST_CASE("info rejects a layerless cfg with exit 2") {
    TempDir dir("empty");
    write_file(dir.path / "empty.cfg", "[net]\nwidth=64\nheight=64\nchannels=3\n");
    const RunResult r = run_cli("info " + (dir.path / "empty.cfg").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("info names the offending layer on a shape mismatch") {
    TempDir dir("badshape");
    write_file(dir.path / "bad.cfg",
               "[net]\nwidth=64\nheight=64\nchannels=3\n"
               "[convolutional]\nfilters=8\nsize=3\npad=1\nactivation=leaky\n"
               "[convolutional]\nfilters=16\nsize=3\npad=1\nactivation=leaky\n"
               "[shortcut]\nfrom=0\nactivation=linear\n"
               "[convolutional]\nfilters=18\nsize=1\nactivation=linear\n"
               "[yolo]\nanchors=8,14, 10,18, 14,24\nclasses=1\n");
    const RunResult r = run_cli("info " + (dir.path / "bad.cfg").string());
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("layer 2") != std::string::npos);
}

TEST_CASE("detect with zero weights emits empty detection files above the sigmoid floor") {
    TempDir dir("detect");
    write_file(dir.path / "tiny.cfg", kTinyCfg);
    write_zero_weights(dir.path / "tiny.cfg", dir.path / "tiny.weights");
    write_pnm_file((dir.path / "frame.pgm").string(), Image(64, 64, 1, 150));

    const RunResult r = run_cli("--thresh 0.3 --out-dir " + (dir.path / "out").string() + " detect " +
                                (dir.path / "tiny.cfg").string() + " " +
                                (dir.path / "tiny.weights").string() + " " +
                                (dir.path / "frame.pgm").string());
    CHECK(r.exit_code == 0);
    std::ifstream det(dir.path / "out" / "frame.txt");
    REQUIRE(det.good());
    std::stringstream ss;
    ss << det.rdbuf();
    CHECK(ss.str().empty());
    CHECK(fs::exists(dir.path / "out" / "frame.ppm"));  // overlay still written
    CHECK(r.output.find("fps") != std::string::npos);
}

TEST_CASE("detect with a missing weights file exits 2") {
    TempDir dir("noweights");
    write_file(dir.path / "tiny.cfg", kTinyCfg);
    write_pnm_file((dir.path / "frame.pgm").string(), Image(64, 64, 1, 150));
    const RunResult r = run_cli("detect " + (dir.path / "tiny.cfg").string() + " " +
                                (dir.path / "missing.weights").string() + " " +
                                (dir.path / "frame.pgm").string());
    CHECK(r.exit_code == 2);
}

TEST_CASE("eval scores the hit-miss-hit fixture at 0.8333") {
    TempDir preds("evalp"), gts("evalg");
    write_file(gts.path / "a.txt", "0 0.2 0.2 0.1 0.1\n0 0.7 0.7 0.1 0.1\n");
    write_pnm_file((gts.path / "a.pgm").string(), Image(100, 100, 1, 128));
    write_file(preds.path / "a.txt",
               "0 0.9 20.0 20.0 10.0 10.0\n"   // hit
               "0 0.8 50.0 50.0 10.0 10.0\n"   // miss
               "0 0.7 70.0 70.0 10.0 10.0\n")  // hit
        ;
    const RunResult r = run_cli("eval " + preds.path.string() + " " + gts.path.string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("0.833333") != std::string::npos);
}

TEST_CASE("eval without ground truth exits 3") {
    TempDir preds("evalp2"), gts("evalg2");
    write_file(preds.path / "a.txt", "0 0.9 20.0 20.0 10.0 10.0\n");
    const RunResult r = run_cli("eval " + preds.path.string() + " " + gts.path.string());
    CHECK(r.exit_code == 3);
}

TEST_CASE("stats reports mean and std") {
    TempDir dir("stats");
    write_pnm_file((dir.path / "const.pgm").string(), Image(8, 8, 1, 100));
    const RunResult r = run_cli("stats " + (dir.path / "const.pgm").string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("mean=100.00") != std::string::npos);
    CHECK(r.output.find("std=0.00") != std::string::npos);
}

TEST_CASE("stats on an unreadable file exits 2") {
    const RunResult r = run_cli("stats /nonexistent/file.pgm");
    CHECK(r.exit_code == 2);
}

TEST_CASE("anchors recovers synthetic clusters") {
    TempDir dir("anchors");
    // normalized boxes on a 100x100 frame: sizes near 10 and 40 pixels
    write_file(dir.path / "a.txt",
               "0 0.3 0.3 0.10 0.10\n0 0.7 0.7 0.11 0.10\n0 0.5 0.2 0.10 0.11\n"
               "0 0.2 0.6 0.40 0.40\n0 0.6 0.4 0.41 0.40\n0 0.8 0.2 0.40 0.41\n");
    write_pnm_file((dir.path / "a.pgm").string(), Image(100, 100, 1, 128));
    const RunResult r = run_cli("anchors " + dir.path.string() + " -k 2 --net-size 100");
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("anchors = 10,10,  40,40") != std::string::npos);
}

TEST_CASE("train with max_batches 0 writes only the initial checkpoint") {
    TempDir dir("train");
    std::string cfg(kTinyCfg);
    cfg.insert(cfg.find("[convolutional]"), "batch=2\nsubdivisions=1\nmax_batches=0\nburn_in=0\n");
    write_file(dir.path / "tiny.cfg", cfg);

    const auto scenes = synth::make_dataset(2, 64, 64, 1, 3, 42);
    std::string list;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const std::string stem = "img" + std::to_string(i);
        write_pnm_file((dir.path / (stem + ".pgm")).string(), scenes[i].image);
        std::string ann;
        for (const BBox& b : scenes[i].boxes) {
            char line[128];
            std::snprintf(line, sizeof(line), "0 %f %f %f %f\n", b.cx / 64.0, b.cy / 64.0, b.w / 64.0,
                          b.h / 64.0);
            ann += line;
        }
        write_file(dir.path / (stem + ".txt"), ann);
        list += (dir.path / (stem + ".pgm")).string() + "\n";
    }
    write_file(dir.path / "list.txt", list);

    const RunResult r = run_cli("--out-dir " + (dir.path / "ckpt").string() + " train " +
                                (dir.path / "tiny.cfg").string() + " " +
                                (dir.path / "list.txt").string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir.path / "ckpt" / "tiny_0.weights"));
    int weight_files = 0;
    for (const auto& entry : fs::directory_iterator(dir.path / "ckpt"))
        if (entry.path().extension() == ".weights") ++weight_files;
    CHECK(weight_files == 1);
}

TEST_CASE("augment preview identity configuration reproduces the image") {
    TempDir dir("augment");
    Rng rng(5);
    Image img(16, 16, 3);
    for (auto& px : img.pixels) px = static_cast<std::uint8_t>(rng.uniform_int(256));
    write_pnm_file((dir.path / "in.ppm").string(), img);
    const RunResult r = run_cli("augment " + (dir.path / "in.ppm").string() + " " +
                                (dir.path / "out.ppm").string() +
                                " --saturation 1 --exposure 1 --hue 0");
    CHECK(r.exit_code == 0);
    CHECK(read_pnm_file((dir.path / "out.ppm").string()).pixels == img.pixels);
}
