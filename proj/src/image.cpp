#include "spermdet/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "spermdet/errors.hpp"

namespace spermdet {

namespace {

class PnmScanner {
public:
    explicit PnmScanner(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    /// Next whitespace-delimited header token, skipping '#' comments.
    std::string token() {
        skip_space_and_comments();
        std::string t;
        while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) t += static_cast<char>(bytes_[pos_++]);
        return t;
    }

    /// Header ends with exactly one whitespace byte before the raster.
    std::span<const std::uint8_t> raster() {
        if (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
        return bytes_.subspan(pos_);
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

int header_int(PnmScanner& scanner, const char* what) {
    const std::string t = scanner.token();
    if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos)
        throw ImageError(ImageError::Kind::BadDimensions, std::string("bad PNM ") + what + ": '" + t + "'");
    long v = std::strtol(t.c_str(), nullptr, 10);
    if (v <= 0 || v > 1 << 20)
        throw ImageError(ImageError::Kind::BadDimensions, std::string("PNM ") + what + " out of range");
    return static_cast<int>(v);
}

}  // namespace

Image read_pnm(std::span<const std::uint8_t> bytes) {
    PnmScanner scanner(bytes);
    const std::string magic = scanner.token();
    int channels;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else throw ImageError(ImageError::Kind::BadMagic, "unsupported PNM magic '" + magic + "' (need binary P5/P6)");

    const int width = header_int(scanner, "width");
    const int height = header_int(scanner, "height");
    const std::string maxval = scanner.token();
    if (maxval != "255")
        throw ImageError(ImageError::Kind::BadDimensions, "unsupported PNM maxval '" + maxval + "' (need 255)");
    if (static_cast<std::int64_t>(width) * height * channels > (1 << 28))
        throw ImageError(ImageError::Kind::BadDimensions, "PNM raster too large");

    Image img(width, height, channels);
    const std::span<const std::uint8_t> raster = scanner.raster();
    if (raster.size() < img.pixels.size())
        throw ImageError(ImageError::Kind::Truncated,
                         "PNM raster has " + std::to_string(raster.size()) + " bytes, needs " +
                             std::to_string(img.pixels.size()));
    std::memcpy(img.pixels.data(), raster.data(), img.pixels.size());
    return img;
}

std::vector<std::uint8_t> write_pnm(const Image& image) {
    if (image.channels != 1 && image.channels != 3)
        throw ImageError(ImageError::Kind::BadDimensions, "write_pnm needs a 1- or 3-channel image");
    std::string header = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                         std::to_string(image.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

Image read_pnm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open image file: " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return read_pnm(bytes);
}

void write_pnm_file(const std::string& path, const Image& image) {
    const std::vector<std::uint8_t> bytes = write_pnm(image);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot create image file: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing image file: " + path);
}

Image to_rgb(const Image& image) {
    if (image.channels == 3) return image;
    Image rgb(image.width, image.height, 3);
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        rgb.pixels[3 * i] = image.pixels[i];
        rgb.pixels[3 * i + 1] = image.pixels[i];
        rgb.pixels[3 * i + 2] = image.pixels[i];
    }
    return rgb;
}

ImageStats grayscale_stats(const Image& image) {
    ImageStats stats;
    const std::size_t count = static_cast<std::size_t>(image.width) * image.height;
    for (std::size_t i = 0; i < count; ++i) {
        int gray;
        if (image.channels == 1) {
            gray = image.pixels[i];
        } else {
            const std::uint8_t* px = image.pixels.data() + 3 * i;
            gray = static_cast<int>(std::lround(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]));
        }
        ++stats.histogram[std::clamp(gray, 0, 255)];
    }

    double sum = 0.0, sum_sq = 0.0;
    for (int g = 0; g < 256; ++g) {
        sum += static_cast<double>(g) * stats.histogram[g];
        sum_sq += static_cast<double>(g) * g * stats.histogram[g];
    }
    const double n = static_cast<double>(count);
    stats.mean = sum / n;
    stats.stddev = std::sqrt(std::max(0.0, sum_sq / n - stats.mean * stats.mean));
    return stats;
}

}  // namespace spermdet
