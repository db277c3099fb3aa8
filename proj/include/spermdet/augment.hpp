#pragma once

#include "spermdet/config.hpp"
#include "spermdet/image.hpp"
#include "spermdet/rng.hpp"

namespace spermdet {

struct Hsv {
    float h = 0;  // [0, 1)
    float s = 0;  // [0, 1]
    float v = 0;  // [0, 1]
};

/// Hexcone conversion; rgb components in [0, 1]. Gray pixels get h = 0, s = 0.
Hsv rgb_to_hsv(float r, float g, float b);
void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b);

/// A scale in [1/max_factor, max_factor]: draw u uniform in [1, max_factor],
/// return u or 1/u with equal probability. max_factor must be >= 1.
float sample_scale(float max_factor, Rng& rng);

/// One random photometric triple applied to a whole pixel: hue shifted
/// (mod 1), saturation and value scaled then clamped to [0, 1].
void jitter_pixel(float& r, float& g, float& b, float hue_shift, float sat_scale, float val_scale);

/// Per-image photometric jitter: draws hue shift, saturation scale and
/// exposure scale (in that order) from `rng` and applies them to every
/// pixel. Box annotations are untouched; the transform is purely photometric.
Image jitter(const Image& image, const AugmentConfig& cfg, Rng& rng);

}  // namespace spermdet
