#include "nucleo/synthetic.hpp"

#include <algorithm>
#include <cmath>

namespace nucleo {

namespace {

std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

}  // namespace

LabeledImage make_texture_sample(int size, int label, std::uint64_t seed) {
    if (label < 0 || label > 3) throw DataError("texture label must be in [0,3]");
    Rng rng(seed);
    const double phase = rng.next_double() * 2.0 * M_PI;
    const double period = 4.0 + rng.next_double() * 4.0;
    // per-class tint keeps the channels informative, not just the pattern
    static const double tint[4][3] = {
        {1.0, 0.6, 0.6}, {0.6, 1.0, 0.6}, {0.6, 0.6, 1.0}, {0.9, 0.9, 0.6}};
    LabeledImage s;
    s.label = label;
    s.image = Image::make(size, size, 3);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double base;
            switch (label) {
                case 0: base = std::sin(2.0 * M_PI * y / period + phase); break;
                case 1: base = std::sin(2.0 * M_PI * x / period + phase); break;
                case 2: base = std::sin(2.0 * M_PI * (x + y) / period + phase); break;
                default:
                    base = std::sin(2.0 * M_PI * x / period + phase) *
                           std::sin(2.0 * M_PI * y / period + phase);
            }
            const double lum = 128.0 + 90.0 * base + 20.0 * (rng.next_double() - 0.5);
            for (int ch = 0; ch < 3; ++ch)
                s.image.at(y, x, ch) = clamp_u8(lum * tint[label][ch]);
        }
    return s;
}

std::vector<LabeledImage> make_texture_set(int n, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledImage> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(make_texture_sample(size, i % 4, rng.next_u64()));
    return out;
}

BlobSample make_blob_sample(int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    const int n_blobs = 3 + static_cast<int>(rng.next_below(4));
    struct Blob {
        double cy, cx, r;
    };
    std::vector<Blob> blobs;
    for (int k = 0; k < n_blobs; ++k) {
        const double r = 4.0 + rng.next_double() * (std::min(h, w) / 6.0);
        blobs.push_back({r + rng.next_double() * (h - 2.0 * r),
                         r + rng.next_double() * (w - 2.0 * r), r});
    }
    BlobSample s;
    s.image = Image::make(h, w, 1);
    s.mask = Image::make(h, w, 1);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 30.0 + 15.0 * rng.next_double();  // noisy background
            bool inside = false;
            for (const Blob& b : blobs) {
                const double d = std::hypot(y - b.cy, x - b.cx);
                if (d <= b.r) inside = true;
                // soft shoulder of two pixels so edges are not a step function
                v = std::max(v, 200.0 * std::clamp((b.r + 2.0 - d) / 2.0, 0.0, 1.0));
            }
            s.image.at(y, x) = clamp_u8(v);
            s.mask.at(y, x) = inside ? 255 : 0;
        }
    return s;
}

DotSample make_dot_sample(int h, int w, int n_dots, int min_sep, std::uint64_t seed) {
    Rng rng(seed);
    const int margin = std::max(min_sep, 4);
    if (h <= 2 * margin || w <= 2 * margin)
        throw DataError("make_dot_sample: image too small for the requested separation");
    DotSample s;
    int attempts = 0;
    while (static_cast<int>(s.dots.size()) < n_dots) {
        if (++attempts > 1000 * n_dots)
            throw DataError("make_dot_sample: cannot place dots with the requested separation");
        Dot d{margin + static_cast<int>(rng.next_below(w - 2 * margin)),
              margin + static_cast<int>(rng.next_below(h - 2 * margin))};
        bool ok = true;
        for (const Dot& e : s.dots)
            if (std::abs(e.x - d.x) <= min_sep && std::abs(e.y - d.y) <= min_sep) {
                ok = false;
                break;
            }
        if (ok) s.dots.push_back(d);
    }
    s.image = Image::make(h, w, 1);
    const double sig = 2.5;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double v = 20.0 + 10.0 * rng.next_double();
            for (const Dot& d : s.dots) {
                const double r2 = static_cast<double>(x - d.x) * (x - d.x) +
                                  static_cast<double>(y - d.y) * (y - d.y);
                v += 215.0 * std::exp(-r2 / (2.0 * sig * sig));
            }
            s.image.at(y, x) = clamp_u8(v);
        }
    return s;
}

}  // namespace nucleo
