#include "spermdet/augment.hpp"

#include <algorithm>
#include <cmath>

namespace spermdet {

Hsv rgb_to_hsv(float r, float g, float b) {
    const float max = std::max({r, g, b});
    const float min = std::min({r, g, b});
    const float delta = max - min;

    Hsv out;
    out.v = max;
    out.s = max > 0.0f ? delta / max : 0.0f;
    if (delta <= 0.0f) return out;  // gray: hue stays 0

    float h;
    if (max == r) h = (g - b) / delta;
    else if (max == g) h = 2.0f + (b - r) / delta;
    else h = 4.0f + (r - g) / delta;
    h /= 6.0f;
    if (h < 0.0f) h += 1.0f;
    out.h = h;
    return out;
}

void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b) {
    if (hsv.s <= 0.0f) {
        r = g = b = hsv.v;
        return;
    }
    float h = hsv.h * 6.0f;
    if (h >= 6.0f) h -= 6.0f;
    const int sector = static_cast<int>(h);
    const float f = h - sector;
    const float p = hsv.v * (1.0f - hsv.s);
    const float q = hsv.v * (1.0f - hsv.s * f);
    const float t = hsv.v * (1.0f - hsv.s * (1.0f - f));
    switch (sector) {
        case 0: r = hsv.v; g = t; b = p; break;
        case 1: r = q; g = hsv.v; b = p; break;
        case 2: r = p; g = hsv.v; b = t; break;
        case 3: r = p; g = q; b = hsv.v; break;
        case 4: r = t; g = p; b = hsv.v; break;
        default: r = hsv.v; g = p; b = q; break;
    }
}

float sample_scale(float max_factor, Rng& rng) {
    const float u = rng.uniform(1.0f, max_factor);
    return rng.uniform() < 0.5f ? u : 1.0f / u;
}

void jitter_pixel(float& r, float& g, float& b, float hue_shift, float sat_scale, float val_scale) {
    Hsv hsv = rgb_to_hsv(r, g, b);
    hsv.h = hsv.h + hue_shift;
    hsv.h -= std::floor(hsv.h);  // wrap to [0, 1)
    hsv.s = std::clamp(hsv.s * sat_scale, 0.0f, 1.0f);
    hsv.v = std::clamp(hsv.v * val_scale, 0.0f, 1.0f);
    hsv_to_rgb(hsv, r, g, b);
}

Image jitter(const Image& image, const AugmentConfig& cfg, Rng& rng) {
    const float hue_shift = rng.uniform(-cfg.hue, cfg.hue);
    const float sat_scale = sample_scale(cfg.saturation, rng);
    const float val_scale = sample_scale(cfg.exposure, rng);

    Image out = to_rgb(image);
    const std::size_t count = static_cast<std::size_t>(out.width) * out.height;
    for (std::size_t i = 0; i < count; ++i) {
        std::uint8_t* px = out.pixels.data() + 3 * i;
        float r = px[0] / 255.0f, g = px[1] / 255.0f, b = px[2] / 255.0f;
        jitter_pixel(r, g, b, hue_shift, sat_scale, val_scale);
        px[0] = static_cast<std::uint8_t>(std::lround(std::clamp(r, 0.0f, 1.0f) * 255.0f));
        px[1] = static_cast<std::uint8_t>(std::lround(std::clamp(g, 0.0f, 1.0f) * 255.0f));
        px[2] = static_cast<std::uint8_t>(std::lround(std::clamp(b, 0.0f, 1.0f) * 255.0f));
    }
    return out;
}

}  // namespace spermdet
