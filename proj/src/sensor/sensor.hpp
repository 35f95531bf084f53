#pragma once

#include <string>

#include "image/image.hpp"

namespace oseg {

enum class SensorVariant { Grayscale, BrgType1, BrgType2 };

struct SensorModel {
    SensorVariant variant = SensorVariant::Grayscale;
    // BT.601 luma weights (grayscale variant).
    double luma_r = 0.299;
    double luma_g = 0.587;
    double luma_b = 0.114;
    // Per-axis decimation strides by source channel (brg2 variant; brg1
    // uses 2 for all three).
    int stride_blue = 8;
    int stride_red = 2;
    int stride_green = 4;
};

// L = round(0.299 R + 0.587 G + 0.114 B), half away from zero, replicated
// into all three channels.
RasterImage simulate_grayscale(const RasterImage& img, const SensorModel& m = {});

// Channel order becomes (B, R, G); every channel is decimated with stride 2
// per axis keeping even indices, then each kept sample fills its block.
RasterImage simulate_brg_type1(const RasterImage& img);

// Same permutation; per-axis strides blue 8, red 2, green 4, keeping
// index-0 samples, block refill per channel.
RasterImage simulate_brg_type2(const RasterImage& img, const SensorModel& m = {});

RasterImage apply_sensor(const RasterImage& img, const SensorModel& m);

// Accepts "grayscale", "brg1", "brg2".
SensorModel sensor_from_name(const std::string& name);
const char* sensor_name(SensorVariant v);

} // namespace oseg
