#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tha {

// 8-bit RGB raster, row-major, origin at the top-left corner. Pixel (x, y)
// covers the unit square [x, x+1) x [y, y+1); its center is (x+0.5, y+0.5).
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;  // 3 * width * height bytes

    Image() = default;
    Image(int w, int h, std::uint8_t fill = 0);

    std::uint8_t& at(int x, int y, int c) { return pixels[3 * (std::size_t(y) * width + x) + c]; }
    std::uint8_t at(int x, int y, int c) const { return pixels[3 * (std::size_t(y) * width + x) + c]; }

    void validate() const;  // positive dims, buffer size matches
};

// Reads any libpng-supported file and converts to 8-bit RGB (palette and
// grayscale expanded, 16-bit narrowed, alpha stripped).
Image read_png(const std::string& path);

// Writes 8-bit RGB with a fixed compression level so identical images
// produce byte-identical files.
void write_png(const std::string& path, const Image& image);

}  // namespace tha
