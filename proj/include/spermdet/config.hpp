#pragma once

#include <vector>

namespace spermdet {

/// Training hyperparameters with their published defaults.
struct TrainConfig {
    int batch = 64;
    int subdivisions = 16;
    float momentum = 0.9f;
    float decay = 0.0005f;
    float learning_rate = 0.001f;
    int burn_in = 250;
    int max_batches = 4000;
    std::vector<int> steps = {1000};
    std::vector<float> scales = {0.1f};
    float ignore_thresh = 0.7f;
};

/// Photometric augmentation limits: max scale factors for saturation and
/// exposure, max shift for hue as a fraction of the full hue circle.
struct AugmentConfig {
    float saturation = 1.5f;
    float exposure = 1.5f;
    float hue = 0.1f;
};

}  // namespace spermdet
