#pragma once

// Seeded synthetic scenes: dark elliptical blobs on a light noisy
// background, echoing the low-contrast microscopy frames the detector
// targets. Used by the trainer tests and the acceptance suite.

#include <vector>

#include "spermdet/detector.hpp"
#include "spermdet/image.hpp"
#include "spermdet/rng.hpp"

namespace synth {

struct BlobScene {
    spermdet::Image image;            // grayscale
    std::vector<spermdet::BBox> boxes;  // tight axis-aligned boxes, image pixels
};

/// Blob count uniform in [min_blobs, max_blobs]; centers kept far enough
/// apart that each lands in its own stride-8 grid cell.
BlobScene make_blob_scene(int width, int height, int min_blobs, int max_blobs, spermdet::Rng& rng);

std::vector<BlobScene> make_dataset(int count, int width, int height, int min_blobs, int max_blobs,
                                    std::uint64_t seed);

}  // namespace synth
