#pragma once

#include <optional>
#include <utility>

#include "nucleo/image.hpp"
#include "nucleo/rng.hpp"
#include "nucleo/tensor.hpp"

namespace nucleo {

struct Dot {
    int x = 0, y = 0;  // origin top-left, x = column

    bool operator==(const Dot&) const = default;
};

enum class PadMode { none, reflect };

struct GridLayout {
    int rows = 0, cols = 0, size = 0;
    int src_h = 0, src_w = 0;
    PadMode pad = PadMode::none;
};

struct PatchSet {
    std::vector<Image> patches;
    std::vector<std::pair<int, int>> offsets;  // (x, y) into the (padded) source
    std::optional<GridLayout> layout;          // present for grid sets
};

// Per-pixel Gaussian superposition; integral approximates the dot count.
struct DensitySurface {
    int h = 0, w = 0;
    double sigma = 2.0;
    std::vector<double> map;

    double at(int y, int x) const { return map[static_cast<std::size_t>(y) * w + x]; }
};

// n patches at uniformly random in-bounds offsets, reproducible from seed.
PatchSet extract_random_patches(const Image& img, int n, int size, std::uint64_t seed);

GridLayout make_grid_layout(int h, int w, int size, PadMode pad);
PatchSet extract_grid_patches(const Image& img, int size, PadMode pad);
Image stitch_patches(const PatchSet& ps);

// Grid extraction/stitching for density targets, same layout conventions.
std::vector<std::vector<double>> extract_grid_planes(const std::vector<double>& plane, int h,
                                                     int w, const GridLayout& layout);
std::vector<double> stitch_planes(const std::vector<std::vector<double>>& patches,
                                  const GridLayout& layout);

// Unit-integral Gaussians (amplitude 1/(2 pi sigma^2)) truncated at 4 sigma.
DensitySurface dots_to_density(const std::vector<Dot>& dots, int h, int w, double sigma = 2.0);

// Scales 8-bit to [0,1]; `to_luma` collapses RGB to 0.299R + 0.587G + 0.114B.
// Result is 1 x C x H x W.
Tensor normalize(const Image& img, bool to_luma);

// Seeded shuffle then prefix split; train gets floor(frac * n) items.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n,
                                                                            double frac,
                                                                            std::uint64_t seed);

std::vector<Dot> read_dots_csv(const std::string& path);
void write_dots_csv(const std::string& path, const std::vector<Dot>& dots);

// Density target file: "NUCD", u32 h, u32 w, f64 sigma, then h*w f64 values,
// all little-endian.
DensitySurface read_density(const std::string& path);
void write_density(const std::string& path, const DensitySurface& d);

struct ManifestEntry {
    std::string image;
    std::string mask;     // segmentation
    std::string dots;     // detection (CSV)
    std::string density;  // detection target (prepared stores)
    int label = -1;       // classification class id
};

struct Manifest {
    std::string task;
    std::vector<ManifestEntry> entries;
};

Manifest read_manifest(const std::string& path);

extern const std::vector<std::string> kClassNames;  // colon-cancer nucleus classes
int class_id_from_name(const std::string& name);

}  // namespace nucleo
