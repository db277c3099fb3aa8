#include "spermdet/netdef.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "spermdet/errors.hpp"

namespace spermdet {

namespace {

struct KeyValue {
    std::string key;
    std::string value;
    int line;
};

struct Section {
    std::string name;
    int line;
    std::vector<KeyValue> entries;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::vector<Section> tokenize(std::string_view text) {
    std::vector<Section> sections;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
        pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
        ++line_no;

        if (std::size_t hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;

        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw CfgError(CfgError::Kind::MalformedValue,
                               "line " + std::to_string(line_no) + ": malformed section header", line_no);
            sections.push_back({std::string(trim(line.substr(1, line.size() - 2))), line_no, {}});
            continue;
        }
        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos)
            throw CfgError(CfgError::Kind::MalformedValue,
                           "line " + std::to_string(line_no) + ": expected key=value", line_no);
        if (sections.empty())
            throw CfgError(CfgError::Kind::MalformedValue,
                           "line " + std::to_string(line_no) + ": key=value before any section", line_no);
        sections.back().entries.push_back({std::string(trim(line.substr(0, eq))),
                                           std::string(trim(line.substr(eq + 1))), line_no});
    }
    return sections;
}

[[noreturn]] void malformed(const KeyValue& kv) {
    throw CfgError(CfgError::Kind::MalformedValue,
                   "line " + std::to_string(kv.line) + ": malformed value for '" + kv.key + "': " + kv.value,
                   kv.line);
}

double parse_double(const KeyValue& kv, std::string_view token) {
    token = trim(token);
    if (token.empty()) malformed(kv);
    try {
        std::size_t used = 0;
        double v = std::stod(std::string(token), &used);
        if (used != token.size()) malformed(kv);
        return v;
    } catch (const std::logic_error&) {
        malformed(kv);
    }
}

double as_double(const KeyValue& kv) { return parse_double(kv, kv.value); }

int as_int(const KeyValue& kv) {
    int v = 0;
    std::string_view token = trim(std::string_view(kv.value));
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size()) malformed(kv);
    return v;
}

std::vector<double> as_double_list(const KeyValue& kv) {
    std::vector<double> values;
    std::stringstream ss{kv.value};
    std::string token;
    while (std::getline(ss, token, ',')) {
        if (trim(token).empty()) continue;
        values.push_back(parse_double(kv, token));
    }
    if (values.empty()) malformed(kv);
    return values;
}

Activation as_activation(const KeyValue& kv) {
    if (kv.value == "linear") return Activation::Linear;
    if (kv.value == "leaky") return Activation::Leaky;
    if (kv.value == "logistic") return Activation::Logistic;
    malformed(kv);
}

/// Keyed access into one section; unknown keys are ignored for forward
/// compatibility, so lookups never complain about extras.
class SectionReader {
public:
    explicit SectionReader(const Section& s) : section_(s) {}

    const KeyValue* find(std::string_view key) const {
        const KeyValue* found = nullptr;
        for (const auto& kv : section_.entries)
            if (kv.key == key) found = &kv;  // last occurrence wins
        return found;
    }

    const KeyValue& require(std::string_view key) const {
        const KeyValue* kv = find(key);
        if (!kv)
            throw CfgError(CfgError::Kind::MissingKey,
                           "section [" + section_.name + "] at line " + std::to_string(section_.line) +
                               ": missing required key '" + std::string(key) + "'");
        return *kv;
    }

    int get_int(std::string_view key, int fallback) const {
        const KeyValue* kv = find(key);
        return kv ? as_int(*kv) : fallback;
    }

    float get_float(std::string_view key, float fallback) const {
        const KeyValue* kv = find(key);
        return kv ? static_cast<float>(as_double(*kv)) : fallback;
    }

    const Section& section() const { return section_; }

private:
    const Section& section_;
};

ConvolutionalSpec parse_convolutional(const SectionReader& r) {
    ConvolutionalSpec conv;
    conv.filters = as_int(r.require("filters"));
    conv.size = as_int(r.require("size"));
    conv.stride = r.get_int("stride", 1);
    conv.batch_normalize = r.get_int("batch_normalize", 0) != 0;
    // `padding` gives explicit pixels; the `pad` flag asks for size/2,
    // matching the cfg dialect this grammar is a subset of.
    if (const KeyValue* padding = r.find("padding")) {
        conv.pad = as_int(*padding);
    } else if (r.get_int("pad", 0) != 0) {
        conv.pad = conv.size / 2;
    } else {
        conv.pad = 0;
    }
    if (const KeyValue* act = r.find("activation")) conv.activation = as_activation(*act);
    return conv;
}

ShortcutSpec parse_shortcut(const SectionReader& r, int layer_index) {
    ShortcutSpec sc;
    const KeyValue& from = r.require("from");
    int idx = as_int(from);
    sc.from = idx < 0 ? layer_index + idx : idx;
    if (sc.from < 0 || sc.from >= layer_index) malformed(from);
    if (const KeyValue* act = r.find("activation")) sc.activation = as_activation(*act);
    return sc;
}

DropoutSpec parse_dropout(const SectionReader& r) {
    DropoutSpec d;
    d.probability = r.get_float("probability", 0.5f);
    return d;
}

YoloSpec parse_yolo(const SectionReader& r, TrainConfig& train) {
    YoloSpec yolo;
    const KeyValue& anchors = r.require("anchors");
    std::vector<double> values = as_double_list(anchors);
    if (values.size() % 2 != 0) malformed(anchors);
    for (std::size_t i = 0; i < values.size(); i += 2)
        yolo.anchors.emplace_back(static_cast<float>(values[i]), static_cast<float>(values[i + 1]));
    yolo.classes = as_int(r.require("classes"));
    train.ignore_thresh = r.get_float("ignore_thresh", train.ignore_thresh);
    return yolo;
}

void parse_net_section(const SectionReader& r, ParsedCfg& out) {
    out.net.input_width = as_int(r.require("width"));
    out.net.input_height = as_int(r.require("height"));
    out.net.input_channels = as_int(r.require("channels"));

    TrainConfig& t = out.train;
    t.batch = r.get_int("batch", t.batch);
    t.subdivisions = r.get_int("subdivisions", t.subdivisions);
    t.momentum = r.get_float("momentum", t.momentum);
    t.decay = r.get_float("decay", t.decay);
    t.learning_rate = r.get_float("learning_rate", t.learning_rate);
    t.burn_in = r.get_int("burn_in", t.burn_in);
    t.max_batches = r.get_int("max_batches", t.max_batches);
    if (const KeyValue* steps = r.find("steps")) {
        t.steps.clear();
        for (double v : as_double_list(*steps)) t.steps.push_back(static_cast<int>(v));
    }
    if (const KeyValue* scales = r.find("scales")) {
        t.scales.clear();
        for (double v : as_double_list(*scales)) t.scales.push_back(static_cast<float>(v));
    }
    if (t.steps.size() != t.scales.size())
        throw CfgError(CfgError::Kind::MalformedValue,
                       "section [net]: steps and scales must have matching lengths", r.section().line);
    if (t.subdivisions < 1 || t.batch < 1 || t.batch % t.subdivisions != 0)
        throw CfgError(CfgError::Kind::MalformedValue,
                       "section [net]: batch must be divisible by subdivisions", r.section().line);

    AugmentConfig& a = out.augment;
    a.saturation = r.get_float("saturation", a.saturation);
    a.exposure = r.get_float("exposure", a.exposure);
    a.hue = r.get_float("hue", a.hue);
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::Leaky: return "leaky";
        case Activation::Logistic: return "logistic";
        default: return "linear";
    }
}

std::string format_float(float v) {
    // 9 significant digits round-trip any float32 exactly
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace

ParsedCfg parse_cfg(std::string_view text) {
    std::vector<Section> sections = tokenize(text);
    if (sections.empty()) throw CfgError(CfgError::Kind::EmptyNetwork, "configuration has no sections");
    if (sections.front().name != "net")
        throw CfgError(CfgError::Kind::MalformedValue, "first section must be [net]", sections.front().line);

    ParsedCfg out;
    parse_net_section(SectionReader(sections.front()), out);

    for (std::size_t i = 1; i < sections.size(); ++i) {
        SectionReader r(sections[i]);
        const std::string& name = sections[i].name;
        int layer_index = static_cast<int>(out.net.layers.size());
        if (name == "convolutional") {
            out.net.layers.emplace_back(parse_convolutional(r));
        } else if (name == "shortcut") {
            out.net.layers.emplace_back(parse_shortcut(r, layer_index));
        } else if (name == "dropout") {
            out.net.layers.emplace_back(parse_dropout(r));
        } else if (name == "yolo") {
            out.net.layers.emplace_back(parse_yolo(r, out.train));
        } else {
            throw CfgError(CfgError::Kind::UnknownSection,
                           "line " + std::to_string(sections[i].line) + ": unknown section [" + name + "]",
                           sections[i].line);
        }
    }
    if (out.net.layers.empty())
        throw CfgError(CfgError::Kind::EmptyNetwork, "configuration defines no layers");
    return out;
}

ParsedCfg parse_cfg_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open configuration file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_cfg(ss.str());
}

std::string print_cfg(const NetworkDef& def, const TrainConfig& train, const AugmentConfig& augment) {
    std::string out;
    auto put = [&out](const std::string& s) { out += s; out += '\n'; };

    put("[net]");
    put("width=" + std::to_string(def.input_width));
    put("height=" + std::to_string(def.input_height));
    put("channels=" + std::to_string(def.input_channels));
    put("batch=" + std::to_string(train.batch));
    put("subdivisions=" + std::to_string(train.subdivisions));
    put("momentum=" + format_float(train.momentum));
    put("decay=" + format_float(train.decay));
    put("learning_rate=" + format_float(train.learning_rate));
    put("burn_in=" + std::to_string(train.burn_in));
    put("max_batches=" + std::to_string(train.max_batches));
    std::string steps, scales;
    for (std::size_t i = 0; i < train.steps.size(); ++i) {
        if (i) { steps += ','; scales += ','; }
        steps += std::to_string(train.steps[i]);
        scales += format_float(train.scales[i]);
    }
    if (!train.steps.empty()) {
        put("steps=" + steps);
        put("scales=" + scales);
    }
    put("saturation=" + format_float(augment.saturation));
    put("exposure=" + format_float(augment.exposure));
    put("hue=" + format_float(augment.hue));

    for (const LayerSpec& layer : def.layers) {
        out += '\n';
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&layer)) {
            put("[convolutional]");
            if (conv->batch_normalize) put("batch_normalize=1");
            put("filters=" + std::to_string(conv->filters));
            put("size=" + std::to_string(conv->size));
            put("stride=" + std::to_string(conv->stride));
            put("padding=" + std::to_string(conv->pad));
            put(std::string("activation=") + activation_name(conv->activation));
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&layer)) {
            put("[shortcut]");
            put("from=" + std::to_string(sc->from));
            put(std::string("activation=") + activation_name(sc->activation));
        } else if (const auto* drop = std::get_if<DropoutSpec>(&layer)) {
            put("[dropout]");
            put("probability=" + format_float(drop->probability));
        } else if (const auto* yolo = std::get_if<YoloSpec>(&layer)) {
            put("[yolo]");
            std::string anchors;
            for (std::size_t i = 0; i < yolo->anchors.size(); ++i) {
                if (i) anchors += ", ";
                anchors += format_float(yolo->anchors[i].first) + "," + format_float(yolo->anchors[i].second);
            }
            put("anchors=" + anchors);
            put("classes=" + std::to_string(yolo->classes));
            put("ignore_thresh=" + format_float(train.ignore_thresh));
        }
    }
    return out;
}

ShapeTrace infer_shapes(const NetworkDef& def) {
    ShapeTrace trace;
    trace.reserve(def.layers.size());
    LayerShape current{def.input_channels, def.input_height, def.input_width};
    if (current.c < 1 || current.h < 1 || current.w < 1)
        throw ShapeError("network input dimensions must be positive");

    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        int layer = static_cast<int>(i);
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def.layers[i])) {
            const int span_h = current.h + 2 * conv->pad - conv->size;
            const int span_w = current.w + 2 * conv->pad - conv->size;
            LayerShape next;
            next.c = conv->filters;
            next.h = span_h < 0 ? 0 : span_h / conv->stride + 1;
            next.w = span_w < 0 ? 0 : span_w / conv->stride + 1;
            if (next.c < 1 || next.h < 1 || next.w < 1)
                throw ShapeError("layer " + std::to_string(layer) + ": non-positive output dimension", layer);
            current = next;
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&def.layers[i])) {
            if (sc->from < 0 || sc->from >= layer)
                throw ShapeError("layer " + std::to_string(layer) + ": shortcut source out of range", layer);
            if (!(trace[sc->from] == current))
                throw ShapeError("layer " + std::to_string(layer) + ": shortcut joins unequal shapes", layer);
        }
        // shortcut, dropout and yolo all preserve the incoming shape
        trace.push_back(current);
    }
    return trace;
}

int filters_per_cell(int anchor_count, int class_count) {
    return anchor_count * (5 + class_count);
}

ParamCount param_count(const NetworkDef& def) {
    ParamCount pc;
    // Only convolutions carry parameters or change the channel count.
    int channels = def.input_channels;
    for (const LayerSpec& layer : def.layers) {
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&layer)) {
            std::int64_t k = conv->size;
            std::int64_t weights = static_cast<std::int64_t>(conv->filters) * channels * k * k;
            std::int64_t stats = conv->batch_normalize ? 4LL * conv->filters : conv->filters;
            pc.total_floats += weights + stats;
            channels = conv->filters;
        }
    }
    pc.serialized_bytes = 20 + 4 * pc.total_floats;
    return pc;
}

std::vector<Violation> validate(const NetworkDef& def) {
    std::vector<Violation> violations;
    auto flag = [&violations](int layer, std::string rule) {
        violations.push_back({layer, std::move(rule)});
    };

    if (def.layers.empty()) {
        flag(-1, "network has no layers");
        return violations;
    }
    if (def.input_width < 1 || def.input_height < 1 || def.input_channels < 1)
        flag(-1, "input dimensions must be positive");

    int yolo_count = 0;
    int last_yolo = -1;
    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        int layer = static_cast<int>(i);
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def.layers[i])) {
            if (conv->filters < 1) flag(layer, "convolution filters must be >= 1");
            if (conv->size < 1) flag(layer, "convolution kernel size must be >= 1");
            if (conv->stride < 1) flag(layer, "convolution stride must be >= 1");
            if (conv->pad < 0) flag(layer, "convolution pad must be >= 0");
            if (conv->size != 1 && conv->size != 3)
                flag(layer, "kernel > 3 breaks the single-scale profile (kernels must be 1 or 3)");
        } else if (const auto* drop = std::get_if<DropoutSpec>(&def.layers[i])) {
            if (!(drop->probability >= 0.0f && drop->probability < 1.0f))
                flag(layer, "dropout probability must lie in [0, 1)");
        } else if (const auto* sc = std::get_if<ShortcutSpec>(&def.layers[i])) {
            if (sc->from < 0 || sc->from >= layer)
                flag(layer, "shortcut must reference a strictly earlier layer");
        } else if (const auto* yolo = std::get_if<YoloSpec>(&def.layers[i])) {
            ++yolo_count;
            last_yolo = layer;
            if (yolo->anchors.empty()) flag(layer, "yolo layer needs at least one anchor");
            if (yolo->classes < 0) flag(layer, "yolo class count must be >= 0");
            if (layer == 0 || !std::holds_alternative<ConvolutionalSpec>(def.layers[i - 1])) {
                flag(layer, "yolo layer must be fed by a convolution");
            } else {
                const auto& head = std::get<ConvolutionalSpec>(def.layers[i - 1]);
                int want = filters_per_cell(static_cast<int>(yolo->anchors.size()), yolo->classes);
                if (head.filters != want)
                    flag(layer, "head convolution must have " + std::to_string(want) + " filters, has " +
                                    std::to_string(head.filters));
                if (head.activation != Activation::Linear)
                    flag(layer, "head convolution must use linear activation");
            }
        }
    }
    if (yolo_count != 1)
        flag(last_yolo, "single-head profile requires exactly one yolo layer, found " + std::to_string(yolo_count));
    else if (last_yolo != static_cast<int>(def.layers.size()) - 1)
        flag(last_yolo, "yolo layer must be the last layer");

    // Shape consistency, reported as violations rather than exceptions.
    try {
        infer_shapes(def);
    } catch (const ShapeError& e) {
        flag(e.layer, e.what());
    }
    return violations;
}

}  // namespace spermdet
