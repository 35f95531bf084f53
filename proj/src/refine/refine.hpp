#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/layers.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"

namespace oseg {

enum class UpsampleMode { ZeroPad, DirectCopy };

struct RefineConfig {
    int levels = 4;
    int filters = 256;
    UpsampleMode upsample_mode = UpsampleMode::DirectCopy;
    int scale = 2; // upsample factor per level
    int pool_kernel = 5;
    int num_classes = 6;
    bool fuse_skips = false;
    int steps = 1000;    // training only
    int batch_size = 4;  // training only
};

void validate_refine_config(const RefineConfig& cfg);

// One Conv + BN parameter pair; the forward functions decide where the ReLU
// sits relative to it.
struct UnitParams {
    ConvWeights conv;
    BatchNormState bn;
};

// A residual body R_i: three ReLU-Conv-BN units with 1x1 / 3x3 / 1x1 kernels.
struct ResidualParams {
    UnitParams u1;
    UnitParams u2;
    UnitParams u3;
};

struct ResidualBlockParams {
    ResidualParams r1;
    ResidualParams r2;
};

struct UpscalerParams {
    UnitParams pre;
    UnitParams post;
};

struct ChainedPoolParams {
    UnitParams c1; // pool -> conv3x3 -> BN
    UnitParams c2;
    ResidualBlockParams block;
};

struct LevelParams {
    ResidualBlockParams block;
    UpscalerParams up;
    ChainedPoolParams pool;
    bool has_skip = false;
    ConvWeights skip_proj; // 1x1 projection, present only with skip fusion
};

struct BackboneFeatures {
    Tensor main; // stride scale^levels
    // Strides scale^(levels-1) down to scale, coarsest first.
    std::vector<Tensor> skips;
};

// Parameter structs alias the tensors inside the store, so optimizer updates
// through the store are visible to the forward functions and vice versa.
struct Segmenter {
    RefineConfig config;
    ParamStore store;
    std::vector<UnitParams> backbone; // four stride-2 stages
    std::vector<LevelParams> levels;
    ConvWeights classifier;
};

UnitParams register_unit(ParamStore& ps, const std::string& prefix,
                         std::int64_t out_ch, std::int64_t in_ch, int kernel,
                         Rng& rng);
ResidualParams register_residual(ParamStore& ps, const std::string& prefix,
                                 std::int64_t filters, Rng& rng);
ResidualBlockParams register_residual_block(ParamStore& ps,
                                            const std::string& prefix,
                                            std::int64_t filters, Rng& rng);
UpscalerParams register_upscaler(ParamStore& ps, const std::string& prefix,
                                 std::int64_t filters, Rng& rng);
ChainedPoolParams register_chained_pool(ParamStore& ps,
                                        const std::string& prefix,
                                        std::int64_t filters, Rng& rng);
// skip_channels == 0 builds the level without a fusion projection.
LevelParams register_level(ParamStore& ps, const std::string& prefix,
                           std::int64_t filters, std::int64_t skip_channels,
                           Rng& rng);

// Builds and initializes every parameter for the config. The toy backbone is
// four stride-2 stages, so scale^levels must equal 16, and skip fusion is
// only wired up for the default scale 2 / 4 levels layout.
Segmenter build_segmenter(const RefineConfig& cfg, Rng& rng);
Segmenter build_segmenter(const RefineConfig& cfg, std::uint64_t seed);

void save_segmenter(const std::string& path, const Segmenter& s);
Segmenter load_segmenter(const std::string& path);

// R_i(x): ReLU-Conv1x1-BN -> ReLU-Conv3x3-BN -> ReLU-Conv1x1-BN.
Tensor residual_unit_forward(const Tensor& x, ResidualParams& p, BnMode mode);
// y1 = R2(x + R1(x)) + x + R1(x).
Tensor residual_block_forward(const Tensor& x, ResidualBlockParams& p,
                              BnMode mode);
// ReLU-Conv-BN -> upsample(n) -> ReLU-Conv-BN; spatial dims grow by n.
Tensor upscaler_forward(const Tensor& y1, UpscalerParams& p, UpsampleMode up,
                        int n, BnMode mode);
// Two pool5x5(stride 1, same) -> Conv3x3 -> BN chains summed into the input,
// then one final residual block.
Tensor chained_residual_pool_forward(const Tensor& y2, ChainedPoolParams& p,
                                     int pool_kernel, BnMode mode);

BackboneFeatures toy_backbone_forward(const Tensor& image, Segmenter& s,
                                      BnMode mode);
Tensor refine_stack_forward(const BackboneFeatures& features, Segmenter& s,
                            BnMode mode);
// Backbone + refinement + 1x1 classifier; input is a normalized image batch.
Tensor segmenter_forward(const Tensor& image, Segmenter& s, BnMode mode);

} // namespace oseg
