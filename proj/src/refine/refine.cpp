#include "refine/refine.hpp"

#include <map>

#include "core/error.hpp"

namespace oseg {

namespace {

Tensor relu_conv_bn(const Tensor& x, UnitParams& p, int pad, BnMode mode) {
    return batch_norm(conv2d(relu(x), p.conv, 1, pad), p.bn, mode);
}

} // namespace

void validate_refine_config(const RefineConfig& cfg) {
    if (cfg.levels < 1) {
        throw_invalid("refine config needs at least one level");
    }
    if (cfg.filters < 1) {
        throw_invalid("refine config needs a positive filter count");
    }
    if (cfg.scale < 1) {
        throw_invalid("upsample factor must be at least 1");
    }
    if (cfg.pool_kernel < 1 || cfg.pool_kernel % 2 == 0) {
        throw_invalid("pool kernel must be odd so stride-1 pooling preserves dims");
    }
    if (cfg.num_classes < 2) {
        throw_invalid("refine config needs at least two classes");
    }
    if (cfg.steps < 0 || cfg.batch_size < 1) {
        throw_invalid("steps must be non-negative and batch size positive");
    }
}

UnitParams register_unit(ParamStore& ps, const std::string& prefix,
                         std::int64_t out_ch, std::int64_t in_ch, int kernel,
                         Rng& rng) {
    UnitParams u;
    u.conv = register_conv(ps, prefix + ".conv", out_ch, in_ch, kernel, rng);
    u.bn = register_bn(ps, prefix + ".bn", out_ch);
    return u;
}

ResidualParams register_residual(ParamStore& ps, const std::string& prefix,
                                 std::int64_t filters, Rng& rng) {
    ResidualParams r;
    r.u1 = register_unit(ps, prefix + ".u1", filters, filters, 1, rng);
    r.u2 = register_unit(ps, prefix + ".u2", filters, filters, 3, rng);
    r.u3 = register_unit(ps, prefix + ".u3", filters, filters, 1, rng);
    return r;
}

ResidualBlockParams register_residual_block(ParamStore& ps,
                                            const std::string& prefix,
                                            std::int64_t filters, Rng& rng) {
    ResidualBlockParams b;
    b.r1 = register_residual(ps, prefix + ".r1", filters, rng);
    b.r2 = register_residual(ps, prefix + ".r2", filters, rng);
    return b;
}

UpscalerParams register_upscaler(ParamStore& ps, const std::string& prefix,
                                 std::int64_t filters, Rng& rng) {
    UpscalerParams u;
    u.pre = register_unit(ps, prefix + ".pre", filters, filters, 3, rng);
    u.post = register_unit(ps, prefix + ".post", filters, filters, 3, rng);
    return u;
}

ChainedPoolParams register_chained_pool(ParamStore& ps,
                                        const std::string& prefix,
                                        std::int64_t filters, Rng& rng) {
    ChainedPoolParams c;
    c.c1 = register_unit(ps, prefix + ".c1", filters, filters, 3, rng);
    c.c2 = register_unit(ps, prefix + ".c2", filters, filters, 3, rng);
    c.block = register_residual_block(ps, prefix + ".block", filters, rng);
    return c;
}

LevelParams register_level(ParamStore& ps, const std::string& prefix,
                           std::int64_t filters, std::int64_t skip_channels,
                           Rng& rng) {
    LevelParams lv;
    lv.block = register_residual_block(ps, prefix + ".block", filters, rng);
    lv.up = register_upscaler(ps, prefix + ".up", filters, rng);
    lv.pool = register_chained_pool(ps, prefix + ".pool", filters, rng);
    if (skip_channels > 0) {
        lv.has_skip = true;
        lv.skip_proj = register_conv(ps, prefix + ".skip", filters, skip_channels, 1, rng);
    }
    return lv;
}

Segmenter build_segmenter(const RefineConfig& cfg, Rng& rng) {
    validate_refine_config(cfg);
    std::int64_t stride = 1;
    for (int i = 0; i < cfg.levels; ++i) {
        stride *= cfg.scale;
        if (stride > 16) {
            break;
        }
    }
    if (stride != 16) {
        throw_invalid("scale^levels must equal the backbone stride of 16");
    }
    if (cfg.fuse_skips && !(cfg.scale == 2 && cfg.levels == 4)) {
        throw_invalid("skip fusion needs scale 2 with 4 levels to line up with "
                      "the backbone skip strides");
    }

    Segmenter s;
    s.config = cfg;
    const std::int64_t widths[4] = {32, 64, 128, cfg.filters};
    std::int64_t in_ch = 3;
    for (int i = 0; i < 4; ++i) {
        s.backbone.push_back(register_unit(
            s.store, "backbone.stage" + std::to_string(i), widths[i], in_ch, 3, rng));
        in_ch = widths[i];
    }
    for (int i = 0; i < cfg.levels; ++i) {
        std::int64_t skip_ch = 0;
        if (cfg.fuse_skips && i > 0) {
            skip_ch = widths[cfg.levels - 1 - i];
        }
        s.levels.push_back(register_level(s.store, "levels." + std::to_string(i),
                                          cfg.filters, skip_ch, rng));
    }
    s.classifier =
        register_conv(s.store, "classifier", cfg.num_classes, cfg.filters, 1, rng);
    return s;
}

Segmenter build_segmenter(const RefineConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    return build_segmenter(cfg, rng);
}

void save_segmenter(const std::string& path, const Segmenter& s) {
    std::map<std::string, double> cfg;
    cfg["arch"] = 1.0;
    cfg["levels"] = s.config.levels;
    cfg["filters"] = s.config.filters;
    cfg["upsample_mode"] = s.config.upsample_mode == UpsampleMode::ZeroPad ? 0.0 : 1.0;
    cfg["scale"] = s.config.scale;
    cfg["pool_kernel"] = s.config.pool_kernel;
    cfg["num_classes"] = s.config.num_classes;
    cfg["fuse_skips"] = s.config.fuse_skips ? 1.0 : 0.0;
    save_weights(path, s.store, cfg);
}

Segmenter load_segmenter(const std::string& path) {
    const WeightFile wf = load_weights(path);
    const auto need = [&](const std::string& key) {
        const auto it = wf.config.find(key);
        if (it == wf.config.end()) {
            throw_io("weight file is missing config entry '" + key + "'");
        }
        return it->second;
    };
    if (need("arch") != 1.0) {
        throw_io("weight file does not hold a segmenter");
    }
    RefineConfig cfg;
    cfg.levels = static_cast<int>(need("levels"));
    cfg.filters = static_cast<int>(need("filters"));
    cfg.upsample_mode = need("upsample_mode") == 0.0 ? UpsampleMode::ZeroPad
                                                     : UpsampleMode::DirectCopy;
    cfg.scale = static_cast<int>(need("scale"));
    cfg.pool_kernel = static_cast<int>(need("pool_kernel"));
    cfg.num_classes = static_cast<int>(need("num_classes"));
    cfg.fuse_skips = need("fuse_skips") != 0.0;
    Segmenter s = build_segmenter(cfg, std::uint64_t{0});
    fill_params(s.store, wf);
    return s;
}

Tensor residual_unit_forward(const Tensor& x, ResidualParams& p, BnMode mode) {
    Tensor t = relu_conv_bn(x, p.u1, 0, mode);
    t = relu_conv_bn(t, p.u2, 1, mode);
    return relu_conv_bn(t, p.u3, 0, mode);
}

Tensor residual_block_forward(const Tensor& x, ResidualBlockParams& p,
                              BnMode mode) {
    const Tensor t = add(x, residual_unit_forward(x, p.r1, mode));
    return add(residual_unit_forward(t, p.r2, mode), t);
}

Tensor upscaler_forward(const Tensor& y1, UpscalerParams& p, UpsampleMode up,
                        int n, BnMode mode) {
    if (n < 1) {
        throw_invalid("upsample factor must be at least 1");
    }
    Tensor t = relu_conv_bn(y1, p.pre, 1, mode);
    t = up == UpsampleMode::ZeroPad ? upsample_zero_pad(t, n)
                                    : upsample_direct_copy(t, n);
    return relu_conv_bn(t, p.post, 1, mode);
}

Tensor chained_residual_pool_forward(const Tensor& y2, ChainedPoolParams& p,
                                     int pool_kernel, BnMode mode) {
    if (pool_kernel < 1 || pool_kernel % 2 == 0) {
        throw_invalid("pool kernel must be odd so stride-1 pooling preserves dims");
    }
    const int pad = pool_kernel / 2;
    const Tensor c1 = batch_norm(
        conv2d(max_pool(y2, pool_kernel, 1, pad), p.c1.conv, 1, 1), p.c1.bn, mode);
    const Tensor c2 = batch_norm(
        conv2d(max_pool(c1, pool_kernel, 1, pad), p.c2.conv, 1, 1), p.c2.bn, mode);
    const Tensor s = add(add(y2, c1), c2);
    return residual_block_forward(s, p.block, mode);
}

BackboneFeatures toy_backbone_forward(const Tensor& image, Segmenter& s,
                                      BnMode mode) {
    const Shape sh = image.shape();
    if (sh.c != 3) {
        throw_invalid("backbone expects a 3-channel image batch");
    }
    if (sh.h < 16 || sh.w < 16 || sh.h % 16 != 0 || sh.w % 16 != 0) {
        throw_invalid("backbone input dims must be positive multiples of 16, got " +
                      std::to_string(sh.h) + "x" + std::to_string(sh.w));
    }
    std::vector<Tensor> stage_outs;
    Tensor x = image;
    for (auto& stage : s.backbone) {
        x = relu(batch_norm(conv2d(x, stage.conv, 2, 1), stage.bn, mode));
        stage_outs.push_back(x);
    }
    BackboneFeatures f;
    f.main = stage_outs.back();
    for (std::size_t i = stage_outs.size() - 1; i > 0; --i) {
        f.skips.push_back(stage_outs[i - 1]);
    }
    return f;
}

Tensor refine_stack_forward(const BackboneFeatures& features, Segmenter& s,
                            BnMode mode) {
    const RefineConfig& cfg = s.config;
    if (!features.main.defined()) {
        throw_invalid("refine stack needs main backbone features");
    }
    if (features.main.shape().c != cfg.filters) {
        throw_invalid("channel mismatch: main features carry " +
                      std::to_string(features.main.shape().c) + " channels, config wants " +
                      std::to_string(cfg.filters));
    }
    if (static_cast<int>(s.levels.size()) != cfg.levels) {
        throw_invalid("level parameter count does not match the config");
    }
    if (cfg.fuse_skips &&
        static_cast<int>(features.skips.size()) < cfg.levels - 1) {
        throw_invalid("stride/level mismatch: fusion needs one skip per level "
                      "past the first");
    }

    Tensor x = features.main;
    for (int i = 0; i < cfg.levels; ++i) {
        LevelParams& lv = s.levels[i];
        if (cfg.fuse_skips && i > 0) {
            if (!lv.has_skip) {
                throw_invalid("level " + std::to_string(i) +
                              " was built without a skip projection");
            }
            const Tensor& skip = features.skips[static_cast<std::size_t>(i - 1)];
            if (skip.shape().n != x.shape().n || skip.shape().h != x.shape().h ||
                skip.shape().w != x.shape().w) {
                throw_invalid("stride/level mismatch: skip " + std::to_string(i - 1) +
                              " dims do not match the level input");
            }
            x = add(x, conv2d(skip, lv.skip_proj, 1, 0));
        }
        x = residual_block_forward(x, lv.block, mode);
        x = upscaler_forward(x, lv.up, cfg.upsample_mode, cfg.scale, mode);
        x = chained_residual_pool_forward(x, lv.pool, cfg.pool_kernel, mode);
    }
    return conv2d(x, s.classifier, 1, 0);
}

Tensor segmenter_forward(const Tensor& image, Segmenter& s, BnMode mode) {
    const BackboneFeatures f = toy_backbone_forward(image, s, mode);
    return refine_stack_forward(f, s, mode);
}

} // namespace oseg
