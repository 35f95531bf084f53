#pragma once

#include <cstdint>
#include <string>

#include "data/dataset.hpp"
#include "image/image.hpp"

namespace oseg {

struct SceneSpec {
    std::uint64_t seed = 0;
    std::int64_t size = 64; // divisible by 16
    int buildings = 6;
    int vehicles = 4;
    int road_width = 4;
    double vegetation_density = 0.25;
    int noise_amplitude = 8;
};

struct SyntheticScene {
    RasterImage image;
    MaskImage mask;
};

// Deterministic per seed. Buildings are painted last as axis-aligned
// rectangles with at least a 2-pixel gap between instances, so their
// 8-connected component count equals spec.buildings.
SyntheticScene generate_synthetic_scene(const SceneSpec& spec);

struct DatasetGenConfig {
    std::uint64_t seed = 0;
    int count = 16;
    std::string out_dir;
    SceneSpec scene; // seed field is overridden per scene
};

// Writes scene_%04d_image.png / scene_%04d_mask.png plus manifest.json.
// Every fourth scene goes to the test split (the last one if the count is
// too small to hit that rule).
DatasetManifest generate_synthetic_dataset(const DatasetGenConfig& cfg);

} // namespace oseg
