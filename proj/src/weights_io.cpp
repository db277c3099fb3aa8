#include "spermdet/weights_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <variant>

#include "spermdet/errors.hpp"
#include "spermdet/trainer.hpp"

static_assert(std::endian::native == std::endian::little,
              "the weights wire format is little-endian; byte swapping is not implemented");

namespace spermdet {

namespace {

/// Kernel geometry of every convolution, paired with its layer index.
struct ConvSlot {
    int layer;
    int in_channels;
    int filters;
    int kernel;
    bool batch_normalize;

    std::size_t float_count() const {
        const std::size_t weights =
            static_cast<std::size_t>(filters) * in_channels * kernel * kernel;
        return weights + (batch_normalize ? 4u : 1u) * static_cast<std::size_t>(filters);
    }
};

std::vector<ConvSlot> conv_slots(const NetworkDef& def) {
    std::vector<ConvSlot> slots;
    int channels = def.input_channels;
    for (std::size_t i = 0; i < def.layers.size(); ++i) {
        if (const auto* conv = std::get_if<ConvolutionalSpec>(&def.layers[i])) {
            slots.push_back({static_cast<int>(i), channels, conv->filters, conv->size,
                             conv->batch_normalize});
            channels = conv->filters;
        }
    }
    return slots;
}

class Writer {
public:
    void put_i32(std::int32_t v) { append(&v, 4); }
    void put_u64(std::uint64_t v) { append(&v, 8); }
    void put_floats(const float* v, std::size_t count) { append(v, count * 4); }

    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    void append(const void* p, std::size_t count) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes_.insert(bytes_.end(), b, b + count);
    }
    std::vector<std::uint8_t> bytes_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    bool take(void* out, std::size_t count) {
        if (pos_ + count > bytes_.size()) return false;
        std::memcpy(out, bytes_.data() + pos_, count);
        pos_ += count;
        return true;
    }

    bool take_floats(std::vector<float>& out, std::size_t count) {
        out.resize(count);
        return take(out.data(), count * 4);
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

WeightsHeader read_header(Reader& r) {
    WeightsHeader h;
    if (!r.take(&h.major, 4) || !r.take(&h.minor, 4) || !r.take(&h.revision, 4) || !r.take(&h.seen, 8))
        throw WeightsError(WeightsError::Kind::Truncated, "weights stream shorter than the header");
    if (h.minor < 2)
        throw WeightsError(WeightsError::Kind::BadHeader,
                           "unsupported weights minor version " + std::to_string(h.minor) +
                               " (need >= 2)");
    return h;
}

ConvParams read_conv(Reader& r, const ConvSlot& slot, WeightsError::Kind truncation_kind) {
    ConvParams p;
    auto fail = [&] {
        throw WeightsError(truncation_kind,
                           "weights stream ends inside layer " + std::to_string(slot.layer),
                           slot.layer);
    };
    if (!r.take_floats(p.bias, slot.filters)) fail();
    if (slot.batch_normalize) {
        BatchNormParams bn;
        if (!r.take_floats(bn.gamma, slot.filters) || !r.take_floats(bn.rolling_mean, slot.filters) ||
            !r.take_floats(bn.rolling_var, slot.filters))
            fail();
        p.bn = std::move(bn);
    }
    p.weights = Tensor(slot.filters, slot.in_channels, slot.kernel, slot.kernel);
    if (!r.take(p.weights.data.data(), p.weights.size() * 4)) fail();
    return p;
}

}  // namespace

std::vector<std::uint8_t> write_weights(const NetworkDef& def, const std::vector<ConvParams>& params,
                                        const WeightsHeader& header) {
    const std::vector<ConvSlot> slots = conv_slots(def);
    if (params.size() != slots.size())
        throw ShapeError("write_weights: expected " + std::to_string(slots.size()) +
                         " convolution parameter sets, got " + std::to_string(params.size()));

    Writer w;
    w.put_i32(header.major);
    w.put_i32(header.minor);
    w.put_i32(header.revision);
    w.put_u64(header.seen);

    for (std::size_t i = 0; i < slots.size(); ++i) {
        const ConvSlot& slot = slots[i];
        const ConvParams& p = params[i];
        if (p.weights.n != slot.filters || p.weights.c != slot.in_channels ||
            p.weights.h != slot.kernel || p.weights.w != slot.kernel ||
            static_cast<int>(p.bias.size()) != slot.filters || p.bn.has_value() != slot.batch_normalize)
            throw ShapeError("write_weights: parameters for layer " + std::to_string(slot.layer) +
                                 " do not match the network definition",
                             slot.layer);
        w.put_floats(p.bias.data(), p.bias.size());
        if (p.bn) {
            w.put_floats(p.bn->gamma.data(), p.bn->gamma.size());
            w.put_floats(p.bn->rolling_mean.data(), p.bn->rolling_mean.size());
            w.put_floats(p.bn->rolling_var.data(), p.bn->rolling_var.size());
        }
        w.put_floats(p.weights.data.data(), p.weights.size());
    }
    return w.take();
}

LoadedWeights read_weights(std::span<const std::uint8_t> bytes, const NetworkDef& def) {
    Reader r(bytes);
    LoadedWeights loaded;
    loaded.header = read_header(r);
    for (const ConvSlot& slot : conv_slots(def))
        loaded.params.push_back(read_conv(r, slot, WeightsError::Kind::Truncated));
    if (r.remaining() != 0)
        throw WeightsError(WeightsError::Kind::TrailingBytes,
                           std::to_string(r.remaining()) + " trailing bytes after the last layer",
                           static_cast<long long>(r.remaining()));
    return loaded;
}

std::vector<ConvParams> load_partial(std::span<const std::uint8_t> bytes, const NetworkDef& def,
                                     int first_n_layers, std::uint64_t seed,
                                     WeightsHeader* header_out) {
    Reader r(bytes);
    const WeightsHeader header = read_header(r);
    if (header_out) *header_out = header;

    // Fresh parameters for everything, then overwrite the donor prefix so
    // partial loads stay seed-reproducible for the untouched layers.
    std::vector<ConvParams> params = init_params(def, seed);
    const std::vector<ConvSlot> slots = conv_slots(def);
    for (std::size_t i = 0; i < slots.size(); ++i) {
        if (slots[i].layer >= first_n_layers) break;
        params[i] = read_conv(r, slots[i], WeightsError::Kind::PrefixShapeMismatch);
    }
    return params;
}

LoadedWeights read_weights_file(const std::string& path, const NetworkDef& def) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open weights file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_weights(bytes, def);
}

void write_weights_file(const std::string& path, const NetworkDef& def,
                        const std::vector<ConvParams>& params, const WeightsHeader& header) {
    const std::vector<std::uint8_t> bytes = write_weights(def, params, header);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot create weights file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing weights file: " + path);
}

}  // namespace spermdet
