#pragma once

// Binary PPM (P6) rasters and PGM (P5) grayscale dumps.

#include "bare/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bare {

struct RasterU8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

    std::uint8_t* pixel(std::size_t x, std::size_t y) { return rgb.data() + 3 * (y * width + x); }
    const std::uint8_t* pixel(std::size_t x, std::size_t y) const {
        return rgb.data() + 3 * (y * width + x);
    }
};

void write_ppm(const std::string& path, const RasterU8& img);
RasterU8 read_ppm(const std::string& path);

void write_pgm(const std::string& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& gray);

}  // namespace bare
