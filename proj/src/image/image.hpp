#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace oseg {

// 8-bit RGB raster, row-major, interleaved.
struct RasterImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> pixels; // width * height * 3

    std::uint8_t at(std::int64_t y, std::int64_t x, int c) const {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
    std::uint8_t& at(std::int64_t y, std::int64_t x, int c) {
        return pixels[static_cast<std::size_t>((y * width + x) * 3 + c)];
    }
};

// Single-channel 8-bit class-index mask; 255 is the ignore value.
struct MaskImage {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::uint8_t> values; // width * height

    std::uint8_t at(std::int64_t y, std::int64_t x) const {
        return values[static_cast<std::size_t>(y * width + x)];
    }
    std::uint8_t& at(std::int64_t y, std::int64_t x) {
        return values[static_cast<std::size_t>(y * width + x)];
    }
};

constexpr int kMaskIgnore = 255;

RasterImage make_image(std::int64_t width, std::int64_t height);
MaskImage make_mask(std::int64_t width, std::int64_t height);

// PNG, 8-bit, non-interlaced. Images are color type 2 (truecolor RGB),
// masks color type 0 (grayscale); anything else is rejected.
RasterImage load_image(const std::string& path);
void save_image(const std::string& path, const RasterImage& img);
MaskImage load_mask(const std::string& path);
void save_mask(const std::string& path, const MaskImage& mask);

// In-memory encodings of the same streams, for hashing and tests.
std::vector<std::uint8_t> encode_image_png(const RasterImage& img);
std::vector<std::uint8_t> encode_mask_png(const MaskImage& mask);

} // namespace oseg
