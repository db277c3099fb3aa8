#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace spermdet {

/// Interleaved 8-bit raster, 1 (gray) or 3 (RGB) channels.
struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, std::uint8_t fill = 0)
        : width(w), height(h), channels(c),
          pixels(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t index(int x, int y, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }

    std::uint8_t& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }
    std::uint8_t at(int x, int y, int c = 0) const { return pixels[index(x, y, c)]; }
};

/// Decode binary PNM: P5 (gray) or P6 (RGB), maxval 255.
Image read_pnm(std::span<const std::uint8_t> bytes);
/// Encode as P5 for 1 channel, P6 for 3. Lossless round trip with read_pnm.
std::vector<std::uint8_t> write_pnm(const Image& image);

Image read_pnm_file(const std::string& path);
void write_pnm_file(const std::string& path, const Image& image);

Image to_rgb(const Image& image);

struct ImageStats {
    double mean = 0.0;
    double stddev = 0.0;  // population
    std::array<std::int64_t, 256> histogram{};
};

/// Gray-level statistics; RGB collapses via 0.299R + 0.587G + 0.114B
/// rounded to the nearest integer. Mean/std are derived from the histogram
/// so the two agree exactly.
ImageStats grayscale_stats(const Image& image);

}  // namespace spermdet
