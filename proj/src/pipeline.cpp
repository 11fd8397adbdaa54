#include "nucleo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace nucleo {

const std::vector<std::string> kClassNames = {"Epithelial", "Fibroblast", "Inflammatory",
                                              "Miscellaneous"};

int class_id_from_name(const std::string& name) {
    for (std::size_t i = 0; i < kClassNames.size(); ++i)
        if (kClassNames[i] == name) return static_cast<int>(i);
    throw DataError("unknown class name: " + name);
}

PatchSet extract_random_patches(const Image& img, int n, int size, std::uint64_t seed) {
    if (img.h < size || img.w < size)
        throw DataError("image " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                        " smaller than patch size " + std::to_string(size));
    Rng rng(seed);
    PatchSet ps;
    ps.patches.reserve(n);
    ps.offsets.reserve(n);
    for (int k = 0; k < n; ++k) {
        const int x = static_cast<int>(rng.next_below(img.w - size + 1));
        const int y = static_cast<int>(rng.next_below(img.h - size + 1));
        Image p = Image::make(size, size, img.c);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j)
                for (int ch = 0; ch < img.c; ++ch) p.at(i, j, ch) = img.at(y + i, x + j, ch);
        ps.patches.push_back(std::move(p));
        ps.offsets.emplace_back(x, y);
    }
    return ps;
}

namespace {

// symmetric reflection for coordinates past the source extent
int reflect_index(int v, int extent) {
    if (v < extent) return v;
    const int r = 2 * extent - 1 - v;
    return std::max(0, r);
}

}  // namespace

GridLayout make_grid_layout(int h, int w, int size, PadMode pad) {
    if (size < 1) throw DataError("grid patch size must be >= 1");
    GridLayout g;
    g.size = size;
    g.src_h = h;
    g.src_w = w;
    g.pad = pad;
    if (pad == PadMode::none) {
        g.rows = h / size;
        g.cols = w / size;
    } else {
        g.rows = (h + size - 1) / size;
        g.cols = (w + size - 1) / size;
    }
    return g;
}

PatchSet extract_grid_patches(const Image& img, int size, PadMode pad) {
    const GridLayout g = make_grid_layout(img.h, img.w, size, pad);
    PatchSet ps;
    ps.layout = g;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            Image p = Image::make(size, size, img.c);
            for (int i = 0; i < size; ++i) {
                const int y = reflect_index(r * size + i, img.h);
                for (int j = 0; j < size; ++j) {
                    const int x = reflect_index(c * size + j, img.w);
                    for (int ch = 0; ch < img.c; ++ch) p.at(i, j, ch) = img.at(y, x, ch);
                }
            }
            ps.patches.push_back(std::move(p));
            ps.offsets.emplace_back(c * size, r * size);
        }
    return ps;
}

Image stitch_patches(const PatchSet& ps) {
    if (!ps.layout) throw DataError("stitch: patch set has no grid layout");
    const GridLayout& g = *ps.layout;
    if (ps.patches.size() != static_cast<std::size_t>(g.rows) * g.cols)
        throw DataError("stitch: patch count does not match grid layout");
    const int c = ps.patches.empty() ? 1 : ps.patches[0].c;
    Image canvas = Image::make(g.rows * g.size, g.cols * g.size, c);
    for (std::size_t k = 0; k < ps.patches.size(); ++k) {
        const auto [x, y] = ps.offsets[k];
        const Image& p = ps.patches[k];
        for (int i = 0; i < g.size; ++i)
            for (int j = 0; j < g.size; ++j)
                for (int ch = 0; ch < c; ++ch) canvas.at(y + i, x + j, ch) = p.at(i, j, ch);
    }
    if (g.pad == PadMode::none) return canvas;
    Image out = Image::make(g.src_h, g.src_w, c);
    for (int i = 0; i < g.src_h; ++i)
        for (int j = 0; j < g.src_w; ++j)
            for (int ch = 0; ch < c; ++ch) out.at(i, j, ch) = canvas.at(i, j, ch);
    return out;
}

std::vector<std::vector<double>> extract_grid_planes(const std::vector<double>& plane, int h,
                                                     int w, const GridLayout& g) {
    if (plane.size() != static_cast<std::size_t>(h) * w)
        throw DataError("extract_grid_planes: plane size mismatch");
    std::vector<std::vector<double>> out;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            std::vector<double> p(static_cast<std::size_t>(g.size) * g.size);
            for (int i = 0; i < g.size; ++i) {
                const int y = reflect_index(r * g.size + i, h);
                for (int j = 0; j < g.size; ++j)
                    p[static_cast<std::size_t>(i) * g.size + j] =
                        plane[static_cast<std::size_t>(y) * w + reflect_index(c * g.size + j, w)];
            }
            out.push_back(std::move(p));
        }
    return out;
}

std::vector<double> stitch_planes(const std::vector<std::vector<double>>& patches,
                                  const GridLayout& g) {
    if (patches.size() != static_cast<std::size_t>(g.rows) * g.cols)
        throw DataError("stitch_planes: patch count does not match layout");
    std::vector<double> canvas(static_cast<std::size_t>(g.rows) * g.size * g.cols * g.size);
    const int cw = g.cols * g.size;
    for (int r = 0; r < g.rows; ++r)
        for (int c = 0; c < g.cols; ++c) {
            const auto& p = patches[static_cast<std::size_t>(r) * g.cols + c];
            for (int i = 0; i < g.size; ++i)
                for (int j = 0; j < g.size; ++j)
                    canvas[static_cast<std::size_t>(r * g.size + i) * cw + c * g.size + j] =
                        p[static_cast<std::size_t>(i) * g.size + j];
        }
    if (g.pad == PadMode::none) return canvas;
    std::vector<double> out(static_cast<std::size_t>(g.src_h) * g.src_w);
    for (int i = 0; i < g.src_h; ++i)
        for (int j = 0; j < g.src_w; ++j)
            out[static_cast<std::size_t>(i) * g.src_w + j] =
                canvas[static_cast<std::size_t>(i) * cw + j];
    return out;
}

DensitySurface dots_to_density(const std::vector<Dot>& dots, int h, int w, double sigma) {
    if (sigma <= 0.0) throw DataError("dots_to_density: sigma must be > 0");
    DensitySurface d;
    d.h = h;
    d.w = w;
    d.sigma = sigma;
    d.map.assign(static_cast<std::size_t>(h) * w, 0.0);
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    const double amp = 1.0 / (2.0 * M_PI * sigma * sigma);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double r2max = 16.0 * sigma * sigma;
    for (const Dot& dot : dots) {
        if (dot.x < 0 || dot.y < 0 || dot.x >= w || dot.y >= h)
            throw DataError("dot (" + std::to_string(dot.x) + "," + std::to_string(dot.y) +
                            ") outside " + std::to_string(w) + "x" + std::to_string(h) +
                            " image");
        for (int dy = -radius; dy <= radius; ++dy) {
            const int y = dot.y + dy;
            if (y < 0 || y >= h) continue;
            for (int dx = -radius; dx <= radius; ++dx) {
                const int x = dot.x + dx;
                if (x < 0 || x >= w) continue;
                const double r2 = static_cast<double>(dx) * dx + static_cast<double>(dy) * dy;
                if (r2 > r2max) continue;
                d.map[static_cast<std::size_t>(y) * w + x] += amp * std::exp(-r2 * inv2s2);
            }
        }
    }
    return d;
}

Tensor normalize(const Image& img, bool to_luma) {
    const std::size_t h = img.h, w = img.w;
    if (to_luma) {
        std::vector<double> data(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            if (img.c == 1) {
                data[i] = img.px[i] / 255.0;
            } else {
                data[i] = (0.299 * img.px[3 * i] + 0.587 * img.px[3 * i + 1] +
                           0.114 * img.px[3 * i + 2]) /
                          255.0;
            }
        }
        return Tensor({1, 1, h, w}, std::move(data));
    }
    std::vector<double> data(static_cast<std::size_t>(img.c) * h * w);
    for (int ch = 0; ch < img.c; ++ch)
        for (std::size_t i = 0; i < h * w; ++i)
            data[static_cast<std::size_t>(ch) * h * w + i] = img.px[i * img.c + ch] / 255.0;
    return Tensor({1, static_cast<std::size_t>(img.c), h, w}, std::move(data));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_dataset(std::size_t n,
                                                                            double frac,
                                                                            std::uint64_t seed) {
    if (n == 0) throw DataError("split_dataset: empty dataset");
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng(seed);
    for (std::size_t i = n; i-- > 1;)  // Fisher-Yates
        std::swap(idx[i], idx[rng.next_below(i + 1)]);
    const auto cut = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n)));
    return {std::vector<std::size_t>(idx.begin(), idx.begin() + cut),
            std::vector<std::size_t>(idx.begin() + cut, idx.end())};
}

std::vector<Dot> read_dots_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open dot list: " + path);
    std::vector<Dot> dots;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        Dot d;
        char comma = 0;
        if (!(ss >> d.x >> comma >> d.y) || comma != ',')
            throw DataError("malformed dot line in " + path + ": " + line);
        dots.push_back(d);
    }
    return dots;
}

void write_dots_csv(const std::string& path, const std::vector<Dot>& dots) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write dot list: " + path);
    for (const Dot& d : dots) f << d.x << "," << d.y << "\n";
}

DensitySurface read_density(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open density file: " + path);
    char magic[4];
    std::uint32_t h = 0, w = 0;
    double sigma = 0.0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&sigma), 8);
    if (!f || std::string(magic, 4) != "NUCD")
        throw DataError("malformed density file: " + path);
    DensitySurface d;
    d.h = static_cast<int>(h);
    d.w = static_cast<int>(w);
    d.sigma = sigma;
    d.map.resize(static_cast<std::size_t>(h) * w);
    f.read(reinterpret_cast<char*>(d.map.data()), static_cast<std::streamsize>(8 * d.map.size()));
    if (!f) throw DataError("truncated density file: " + path);
    return d;
}

void write_density(const std::string& path, const DensitySurface& d) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write density file: " + path);
    const std::uint32_t h = static_cast<std::uint32_t>(d.h), w = static_cast<std::uint32_t>(d.w);
    f.write("NUCD", 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&d.sigma), 8);
    f.write(reinterpret_cast<const char*>(d.map.data()),
            static_cast<std::streamsize>(8 * d.map.size()));
}

Manifest read_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open manifest: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    Manifest m;
    try {
        m.task = j.at("task").get<std::string>();
        for (const auto& e : j.at("samples")) {
            ManifestEntry me;
            me.image = e.at("image").get<std::string>();
            if (e.contains("mask")) me.mask = e["mask"].get<std::string>();
            if (e.contains("dots")) me.dots = e["dots"].get<std::string>();
            if (e.contains("density")) me.density = e["density"].get<std::string>();
            if (e.contains("label")) {
                if (e["label"].is_string())
                    me.label = class_id_from_name(e["label"].get<std::string>());
                else
                    me.label = e["label"].get<int>();
            }
            m.entries.push_back(std::move(me));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path + ": " + e.what());
    }
    if (m.entries.empty()) throw DataError("manifest has no samples: " + path);
    return m;
}

}  // namespace nucleo
