#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spermdet/netdef.hpp"
#include "spermdet/tensor.hpp"

namespace spermdet {

/// 20-byte little-endian preamble of the binary weights format.
struct WeightsHeader {
    std::int32_t major = 0;
    std::int32_t minor = 2;
    std::int32_t revision = 0;
    std::uint64_t seen = 0;  // images seen during training
};

/// Serialize: header, then per convolution in layer order: biases; if
/// batch-normalized: gamma, rolling_mean, rolling_var; then weights in
/// (out, in, k, k) row-major order. All values little-endian float32.
std::vector<std::uint8_t> write_weights(const NetworkDef& def, const std::vector<ConvParams>& params,
                                        const WeightsHeader& header);

struct LoadedWeights {
    WeightsHeader header;
    std::vector<ConvParams> params;  // one per convolutional layer
};

/// Inverse of write_weights. Truncation mid-layer and trailing bytes are
/// both errors; minor versions below 2 are rejected.
LoadedWeights read_weights(std::span<const std::uint8_t> bytes, const NetworkDef& def);

/// Transfer-learning style prefix load: convolutions in layers
/// [0, first_n_layers) take their parameters bit-for-bit from the donor
/// stream; the rest receive the trainer's fresh initialization for `seed`.
/// Donor bytes beyond the prefix are ignored.
std::vector<ConvParams> load_partial(std::span<const std::uint8_t> bytes, const NetworkDef& def,
                                     int first_n_layers, std::uint64_t seed,
                                     WeightsHeader* header_out = nullptr);

LoadedWeights read_weights_file(const std::string& path, const NetworkDef& def);
void write_weights_file(const std::string& path, const NetworkDef& def,
                        const std::vector<ConvParams>& params, const WeightsHeader& header);

}  // namespace spermdet
