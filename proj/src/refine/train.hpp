#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/optim.hpp"
#include "data/dataset.hpp"
#include "metrics/metrics.hpp"
#include "refine/refine.hpp"

namespace oseg {

struct TrainedSegmenter {
    Segmenter model;
    std::vector<double> losses; // one entry per step
};

// Builds a fresh segmenter from the config and fits it on the manifest's
// train split with softmax cross entropy. Initialization and batch sampling
// both derive from the seed, so the result is fully deterministic. All train
// images must share one size with dims divisible by 16 (chip first if not).
TrainedSegmenter train_segmenter(const DatasetManifest& manifest,
                                 const RefineConfig& cfg, std::uint64_t seed,
                                 const OptimConfig& opt = OptimConfig{});

// Full-resolution logits for a raw 0..255 image tensor of shape (N,3,H,W);
// no gradients are recorded and BN runs on its running statistics.
Tensor predict_logits(Segmenter& model, const Tensor& raw_image);

// Argmax mask for one image whose dims are divisible by 16.
MaskImage predict(Segmenter& model, const RasterImage& image);

// Chips the image, predicts per chip, and stitches the averaged logits, so
// any image size works as long as the chip plan is valid.
MaskImage predict_tiled(Segmenter& model, const RasterImage& image, int chip,
                        int overlap);

// Confusion over every item of a split; images with dims divisible by 16 go
// through whole, anything else is tiled with 64/32 chips.
ConfusionMatrix evaluate_segmenter(Segmenter& model,
                                   const DatasetManifest& manifest,
                                   const std::string& split);

} // namespace oseg
