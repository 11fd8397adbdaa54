#pragma once

#include "nucleo/pipeline.hpp"

namespace nucleo {

// Seeded generators for small self-contained datasets. Each sample is fully
// determined by its seed, so repeated generation is byte-identical.

struct LabeledImage {
    Image image;
    int label = 0;
};

// 32x32-style RGB texture patches, one of four oriented/speckled families
// matched to kClassNames order.
LabeledImage make_texture_sample(int size, int label, std::uint64_t seed);
std::vector<LabeledImage> make_texture_set(int n, int size, std::uint64_t seed);

struct BlobSample {
    Image image;  // grayscale
    Image mask;   // 0 or 255
};

// Bright soft-edged blobs on a dark noisy background with the exact
// foreground mask.
BlobSample make_blob_sample(int h, int w, std::uint64_t seed);

struct DotSample {
    Image image;  // grayscale
    std::vector<Dot> dots;
};

// Point objects rendered as small Gaussian bumps, centers separated by at
// least min_sep pixels (Chebyshev) and kept away from the border.
DotSample make_dot_sample(int h, int w, int n_dots, int min_sep, std::uint64_t seed);

}  // namespace nucleo
