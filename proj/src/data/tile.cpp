#include "data/tile.hpp"

#include "core/error.hpp"

namespace oseg {

std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
    if (n == 1) {
        return 0;
    }
    if (i < 0) {
        i = -i;
    }
    if (i >= n) {
        i = 2 * (n - 1) - i;
    }
    if (i < 0 || i >= n) {
        throw_invalid("reflect_index: overshoot beyond a single reflection");
    }
    return i;
}

std::vector<ChipSpec> plan_chips(std::int64_t height, std::int64_t width,
                                 std::int64_t chip, std::int64_t overlap) {
    if (chip <= 0 || chip % 16 != 0) {
        throw_invalid("tile: chip size must be a positive multiple of 16, got " +
                      std::to_string(chip));
    }
    if (overlap < 0 || overlap >= chip) {
        throw_invalid("tile: overlap must satisfy 0 <= overlap < chip");
    }
    if (height <= 0 || width <= 0) {
        throw_invalid("tile: empty image");
    }
    // A single reflection can pad at most dim-1 beyond each edge.
    if (chip > 2 * height - 1 || chip > 2 * width - 1) {
        throw_invalid("tile: chip size " + std::to_string(chip) +
                      " exceeds the padded extent of " + std::to_string(width) +
                      "x" + std::to_string(height));
    }
    const std::int64_t stride = chip - overlap;
    auto steps = [&](std::int64_t dim) {
        if (dim <= chip) {
            return static_cast<std::int64_t>(1);
        }
        return (dim - chip + stride - 1) / stride + 1;
    };
    const std::int64_t rows = steps(height);
    const std::int64_t cols = steps(width);
    std::vector<ChipSpec> out;
    out.reserve(static_cast<std::size_t>(rows * cols));
    for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t c = 0; c < cols; ++c) {
            out.push_back(ChipSpec{r * stride, c * stride, chip});
        }
    }
    return out;
}

RasterImage extract_chip(const RasterImage& img, const ChipSpec& spec) {
    RasterImage out = make_image(spec.size, spec.size);
    for (std::int64_t y = 0; y < spec.size; ++y) {
        const std::int64_t sy = reflect_index(spec.row + y, img.height);
        for (std::int64_t x = 0; x < spec.size; ++x) {
            const std::int64_t sx = reflect_index(spec.col + x, img.width);
            for (int c = 0; c < 3; ++c) {
                out.at(y, x, c) = img.at(sy, sx, c);
            }
        }
    }
    return out;
}

MaskImage extract_chip(const MaskImage& mask, const ChipSpec& spec) {
    MaskImage out = make_mask(spec.size, spec.size);
    for (std::int64_t y = 0; y < spec.size; ++y) {
        const std::int64_t sy = reflect_index(spec.row + y, mask.height);
        for (std::int64_t x = 0; x < spec.size; ++x) {
            out.at(y, x) = mask.at(sy, reflect_index(spec.col + x, mask.width));
        }
    }
    return out;
}

Tensor stitch_logits(const std::vector<ChipSpec>& specs,
                     const std::vector<Tensor>& chips, std::int64_t height,
                     std::int64_t width) {
    if (specs.size() != chips.size() || specs.empty()) {
        throw_invalid("stitch: chip list mismatch or empty");
    }
    const std::int64_t k = chips.front().shape().c;
    std::int64_t pad_h = height, pad_w = width;
    for (const auto& s : specs) {
        pad_h = std::max(pad_h, s.row + s.size);
        pad_w = std::max(pad_w, s.col + s.size);
    }

    Tensor sum = Tensor::zeros(Shape{1, k, pad_h, pad_w});
    std::vector<std::int32_t> count(static_cast<std::size_t>(pad_h * pad_w), 0);
    auto& sd = sum.data();
    for (std::size_t i = 0; i < specs.size(); ++i) {
        const ChipSpec& s = specs[i];
        const Shape& cs = chips[i].shape();
        if (cs.n != 1 || cs.c != k || cs.h != s.size || cs.w != s.size) {
            throw_invalid("stitch: chip " + std::to_string(i) + " has shape " +
                          cs.str() + ", expected (1," + std::to_string(k) + "," +
                          std::to_string(s.size) + "," + std::to_string(s.size) +
                          ")");
        }
        const auto& cd = chips[i].data();
        for (std::int64_t c = 0; c < k; ++c) {
            for (std::int64_t y = 0; y < s.size; ++y) {
                for (std::int64_t x = 0; x < s.size; ++x) {
                    sd[static_cast<std::size_t>((c * pad_h + s.row + y) * pad_w +
                                                s.col + x)] +=
                        cd[static_cast<std::size_t>((c * s.size + y) * s.size + x)];
                }
            }
        }
        for (std::int64_t y = 0; y < s.size; ++y) {
            for (std::int64_t x = 0; x < s.size; ++x) {
                ++count[static_cast<std::size_t>((s.row + y) * pad_w + s.col + x)];
            }
        }
    }

    Tensor out = Tensor::zeros(Shape{1, k, height, width});
    auto& od = out.data();
    for (std::int64_t y = 0; y < height; ++y) {
        for (std::int64_t x = 0; x < width; ++x) {
            const std::int32_t n = count[static_cast<std::size_t>(y * pad_w + x)];
            if (n == 0) {
                throw_invalid("stitch: coverage gap at (" + std::to_string(y) +
                              "," + std::to_string(x) + ")");
            }
            for (std::int64_t c = 0; c < k; ++c) {
                od[static_cast<std::size_t>((c * height + y) * width + x)] =
                    sd[static_cast<std::size_t>((c * pad_h + y) * pad_w + x)] /
                    static_cast<double>(n);
            }
        }
    }
    return out;
}

} // namespace oseg
