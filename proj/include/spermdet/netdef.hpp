#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "spermdet/config.hpp"

namespace spermdet {

enum class Activation { Linear, Leaky, Logistic };

struct ConvolutionalSpec {
    int filters = 1;
    int size = 1;
    int stride = 1;
    int pad = 0;  // pixels, already resolved from the cfg keys
    bool batch_normalize = false;
    Activation activation = Activation::Linear;
};

struct ShortcutSpec {
    int from = 0;  // absolute index of the joined earlier layer
    Activation activation = Activation::Linear;
};

struct DropoutSpec {
    float probability = 0.5f;
};

struct YoloSpec {
    std::vector<std::pair<float, float>> anchors;  // (w, h) in network-input pixels
    int classes = 0;
};

using LayerSpec = std::variant<ConvolutionalSpec, ShortcutSpec, DropoutSpec, YoloSpec>;

/// Parsed, index-ordered layer graph plus the network input geometry.
struct NetworkDef {
    int input_width = 0;
    int input_height = 0;
    int input_channels = 0;
    std::vector<LayerSpec> layers;
};

struct LayerShape {
    int c = 0, h = 0, w = 0;
    bool operator==(const LayerShape&) const = default;
};

/// Output shape after each layer, in layer order.
using ShapeTrace = std::vector<LayerShape>;

struct ParsedCfg {
    NetworkDef net;
    TrainConfig train;
    AugmentConfig augment;
};

/// Parse the text configuration grammar: `[section]` headers, `key=value`
/// lines, `#` comments. The first section must be [net]; the rest become
/// layers in file order. Throws CfgError.
ParsedCfg parse_cfg(std::string_view text);
ParsedCfg parse_cfg_file(const std::string& path);

/// Emit a configuration that parse_cfg maps back to the same values.
std::string print_cfg(const NetworkDef& def, const TrainConfig& train, const AugmentConfig& augment);

/// Per-layer (C, H, W) trace. Convolutions follow
/// out = floor((in + 2*pad - size)/stride) + 1; other layers preserve shape.
/// Throws ShapeError on shortcut mismatch or a non-positive dimension.
ShapeTrace infer_shapes(const NetworkDef& def);

/// Head depth per grid cell: B*(5+C) for B anchors and C classes.
int filters_per_cell(int anchor_count, int class_count);

struct ParamCount {
    std::int64_t total_floats = 0;
    std::int64_t serialized_bytes = 0;
};

/// Float and on-disk byte counts of all convolution parameters.
ParamCount param_count(const NetworkDef& def);

struct Violation {
    int layer;  // -1 for whole-network rules
    std::string rule;
};

/// Structural invariants plus the single-head profile constraints
/// (one trailing yolo layer, kernels in {1,3}). Violations are data.
std::vector<Violation> validate(const NetworkDef& def);

/// The bundled reference network: a reconstruction of the published
/// single-scale sperm detector, shipped in cfg/deepsperm.cfg.
const char* reference_cfg();

}  // namespace spermdet
