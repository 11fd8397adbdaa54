#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nucleo {

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit raster, H x W x C interleaved, C in {1, 3}.
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> px;

    std::uint8_t at(int y, int x, int ch = 0) const { return px[(y * w + x) * c + ch]; }
    std::uint8_t& at(int y, int x, int ch = 0) { return px[(y * w + x) * c + ch]; }
    static Image make(int h, int w, int c, std::uint8_t fill = 0) {
        return Image{h, w, c, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * c, fill)};
    }
};

Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);

}  // namespace nucleo
