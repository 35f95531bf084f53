#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "image/image.hpp"

namespace oseg {

using Palette = std::vector<std::array<std::uint8_t, 3>>;

// Alpha-blends class colors over the image: class 0 and ignore pixels keep
// the original value, everything else becomes
// round((1 - opacity) * pixel + opacity * palette[class]) per channel.
// Errors if dims differ, opacity is outside [0, 1], or the mask holds a
// class the palette has no color for.
RasterImage render_overlay(const RasterImage& image, const MaskImage& mask,
                           const Palette& palette, double opacity);

} // namespace oseg
