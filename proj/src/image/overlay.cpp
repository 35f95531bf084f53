#include "image/overlay.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"

namespace oseg {

RasterImage render_overlay(const RasterImage& image, const MaskImage& mask,
                           const Palette& palette, double opacity) {
    if (image.width != mask.width || image.height != mask.height) {
        throw_invalid("overlay: image is " + std::to_string(image.width) +
                      "x" + std::to_string(image.height) + " but mask is " +
                      std::to_string(mask.width) + "x" +
                      std::to_string(mask.height));
    }
    if (!(opacity >= 0.0 && opacity <= 1.0)) {
        throw_invalid("overlay: opacity must be in [0, 1], got " +
                      std::to_string(opacity));
    }
    RasterImage out = image;
    for (std::int64_t y = 0; y < image.height; ++y) {
        for (std::int64_t x = 0; x < image.width; ++x) {
            const int cls = mask.at(y, x);
            if (cls == 0 || cls == kMaskIgnore) continue;
            if (cls >= static_cast<int>(palette.size())) {
                throw_invalid("overlay: mask holds class " +
                              std::to_string(cls) + " but the palette has " +
                              std::to_string(palette.size()) + " colors");
            }
            const auto& color = palette[static_cast<std::size_t>(cls)];
            for (int c = 0; c < 3; ++c) {
                const double blended = (1.0 - opacity) * image.at(y, x, c) +
                                       opacity * color[static_cast<std::size_t>(c)];
                out.at(y, x, c) =
                    static_cast<std::uint8_t>(std::floor(blended + 0.5));
            }
        }
    }
    return out;
}

} // namespace oseg
