#pragma once

#include <vector>

#include "core/tensor.hpp"
#include "image/image.hpp"

namespace oseg {

// Chip origin in (possibly padded) parent coordinates.
struct ChipSpec {
    std::int64_t row = 0;
    std::int64_t col = 0;
    std::int64_t size = 0;
};

// Reflect-101 index (edge sample not repeated). Valid while the overshoot
// stays under the extent, which plan_chips guarantees.
std::int64_t reflect_index(std::int64_t i, std::int64_t n);

// Chip origins at stride = chip - overlap covering height x width; the last
// row/column of chips may overhang into reflected padding.
std::vector<ChipSpec> plan_chips(std::int64_t height, std::int64_t width,
                                 std::int64_t chip, std::int64_t overlap);

RasterImage extract_chip(const RasterImage& img, const ChipSpec& spec);
MaskImage extract_chip(const MaskImage& mask, const ChipSpec& spec);

// Averages overlapping logit chips of shape (1, K, size, size) and crops to
// (1, K, height, width). Chips must jointly cover the crop region.
Tensor stitch_logits(const std::vector<ChipSpec>& specs,
                     const std::vector<Tensor>& chips, std::int64_t height,
                     std::int64_t width);

} // namespace oseg
