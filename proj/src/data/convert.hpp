#pragma once

#include "core/tensor.hpp"
#include "image/image.hpp"

namespace oseg {

// Raw sample values 0..255 as doubles, shape (1, 3, H, W).
Tensor image_to_tensor(const RasterImage& img);

// Rounds half up and clamps to [0, 255].
RasterImage tensor_to_image(const Tensor& t);

// Network inputs live in [-1, 1]: x / 127.5 - 1.
Tensor normalize_image_tensor(const Tensor& raw);
Tensor denormalize_image_tensor(const Tensor& norm);

// Mask value 255 becomes ignore_index.
LabelMap mask_to_labels(const MaskImage& m, int ignore_index = -1);

// Per-pixel argmax over channels of (1, K, H, W) logits; first index wins
// ties.
MaskImage logits_to_mask(const Tensor& logits);

} // namespace oseg
