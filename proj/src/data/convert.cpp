#include "data/convert.hpp"

#include <cmath>

#include "core/error.hpp"

namespace oseg {

Tensor image_to_tensor(const RasterImage& img) {
    if (img.width <= 0 || img.height <= 0) {
        throw_invalid("image_to_tensor: empty image");
    }
    Tensor t = Tensor::zeros(Shape{1, 3, img.height, img.width});
    auto& d = t.data();
    const std::int64_t hw = img.height * img.width;
    for (std::int64_t y = 0; y < img.height; ++y) {
        for (std::int64_t x = 0; x < img.width; ++x) {
            const std::int64_t px = y * img.width + x;
            for (int c = 0; c < 3; ++c) {
                d[static_cast<std::size_t>(c * hw + px)] =
                    static_cast<double>(img.pixels[static_cast<std::size_t>(px * 3 + c)]);
            }
        }
    }
    return t;
}

RasterImage tensor_to_image(const Tensor& t) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != 3) {
        throw_invalid("tensor_to_image: expected shape (1,3,H,W), got " + s.str());
    }
    RasterImage img = make_image(s.w, s.h);
    const auto& d = t.data();
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t px = 0; px < hw; ++px) {
        for (int c = 0; c < 3; ++c) {
            double v = std::floor(d[static_cast<std::size_t>(c * hw + px)] + 0.5);
            if (v < 0.0) {
                v = 0.0;
            }
            if (v > 255.0) {
                v = 255.0;
            }
            img.pixels[static_cast<std::size_t>(px * 3 + c)] =
                static_cast<std::uint8_t>(v);
        }
    }
    return img;
}

Tensor normalize_image_tensor(const Tensor& raw) {
    return scalar_add(scalar_mul(raw, 1.0 / 127.5), -1.0);
}

Tensor denormalize_image_tensor(const Tensor& norm) {
    return scalar_mul(scalar_add(norm, 1.0), 127.5);
}

LabelMap mask_to_labels(const MaskImage& m, int ignore_index) {
    LabelMap out;
    out.n = 1;
    out.h = m.height;
    out.w = m.width;
    out.values.resize(m.values.size());
    for (std::size_t i = 0; i < m.values.size(); ++i) {
        out.values[i] = m.values[i] == kMaskIgnore ? ignore_index
                                                   : static_cast<int>(m.values[i]);
    }
    return out;
}

MaskImage logits_to_mask(const Tensor& logits) {
    const Shape& s = logits.shape();
    if (s.n != 1 || s.c < 1) {
        throw_invalid("logits_to_mask: expected shape (1,K,H,W), got " + s.str());
    }
    if (s.c > 255) {
        throw_invalid("logits_to_mask: more than 255 classes");
    }
    MaskImage m = make_mask(s.w, s.h);
    const auto& d = logits.data();
    const std::int64_t hw = s.h * s.w;
    for (std::int64_t px = 0; px < hw; ++px) {
        int best = 0;
        double best_v = d[static_cast<std::size_t>(px)];
        for (int c = 1; c < s.c; ++c) {
            const double v = d[static_cast<std::size_t>(c * hw + px)];
            if (v > best_v) {
                best_v = v;
                best = c;
            }
        }
        m.values[static_cast<std::size_t>(px)] = static_cast<std::uint8_t>(best);
    }
    return m;
}

} // namespace oseg
