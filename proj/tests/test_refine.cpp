#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"
#include "core/threads.hpp"
#include "data/convert.hpp"
#include "data/synth.hpp"
#include "gradcheck.hpp"
#include "metrics/metrics.hpp"
#include "refine/refine.hpp"
#include "refine/train.hpp"

using namespace oseg;

namespace {

namespace fs = std::filesystem;

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("oseg_refine_" + tag);
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str(const std::string& leaf = "") const {
        return leaf.empty() ? path.string() : (path / leaf).string();
    }
};

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0,
                     double hi = 2.0) {
    Tensor t = Tensor::zeros(shape);
    for (auto& v : t.data()) {
        v = rng.uniform(lo, hi);
    }
    return t;
}

// Kernels come out of registration already random; this perturbs the batch
// norm state and biases so Infer-mode oracles exercise every term.
void randomize_aux(ParamStore& ps, Rng& rng) {
    for (auto& [name, entry] : ps.entries()) {
        double lo = 0.0;
        double hi = 0.0;
        if (ends_with(name, ".gamma") || ends_with(name, ".running_var")) {
            lo = 0.5;
            hi = 1.5;
        } else if (ends_with(name, ".beta") || ends_with(name, ".running_mean")) {
            lo = -0.5;
            hi = 0.5;
        } else if (ends_with(name, ".bias")) {
            lo = -0.3;
            hi = 0.3;
        } else {
            continue;
        }
        for (auto& v : entry.tensor.data()) {
            v = rng.uniform(lo, hi);
        }
    }
}

void zero_kernels_except_upscalers(ParamStore& ps) {
    for (auto& [name, entry] : ps.entries()) {
        if (ends_with(name, ".kernel") && name.find(".up.") == std::string::npos &&
            name != "classifier.kernel") {
            for (auto& v : entry.tensor.data()) {
                v = 0.0;
            }
        }
    }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.numel() == b.numel());
    double m = 0.0;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    }
    return m;
}

// Stack-only model without a backbone, for feeding features directly.
Segmenter make_stack(int levels, int filters, int num_classes, int pool_kernel,
                     Rng& rng) {
    Segmenter s;
    s.config.levels = levels;
    s.config.filters = filters;
    s.config.scale = 2;
    s.config.pool_kernel = pool_kernel;
    s.config.num_classes = num_classes;
    for (int i = 0; i < levels; ++i) {
        s.levels.push_back(
            register_level(s.store, "levels." + std::to_string(i), filters, 0, rng));
    }
    s.classifier = register_conv(s.store, "classifier", num_classes, filters, 1, rng);
    return s;
}

} // namespace

TEST_CASE("zero kernels make the residual block an exact identity") {
    Rng rng(3001);
    ParamStore ps;
    ResidualBlockParams block = register_residual_block(ps, "b", 5, rng);
    for (auto& [name, entry] : ps.entries()) {
        if (ends_with(name, ".kernel")) {
            for (auto& v : entry.tensor.data()) {
                v = 0.0;
            }
        }
    }
    const Tensor x = random_tensor({2, 5, 6, 6}, rng);
    for (const BnMode mode : {BnMode::Train, BnMode::Infer}) {
        const Tensor y = residual_block_forward(x, block, mode);
        CHECK(y.data() == x.data());
    }
}

TEST_CASE("residual block preserves the documented shape") {
    Rng rng(3002);
    ParamStore ps;
    ResidualBlockParams block = register_residual_block(ps, "b", 256, rng);
    const Tensor x = random_tensor({1, 256, 8, 8}, rng);
    const Tensor y = residual_block_forward(x, block, BnMode::Infer);
    CHECK(y.shape().n == 1);
    CHECK(y.shape().c == 256);
    CHECK(y.shape().h == 8);
    CHECK(y.shape().w == 8);

    const Tensor bad = random_tensor({1, 7, 8, 8}, rng);
    CHECK_THROWS_AS(residual_block_forward(bad, block, BnMode::Infer), Error);
}

TEST_CASE("residual block matches the assembled formula") {
    Rng rng(3003);
    for (int draw = 0; draw < 100; ++draw) {
        ParamStore ps;
        ResidualBlockParams p = register_residual_block(ps, "b", 4, rng);
        randomize_aux(ps, rng);
        const Tensor x = random_tensor({1, 4, 5, 5}, rng);
        const Tensor got = residual_block_forward(x, p, BnMode::Infer);

        // y1 = R2(x + R1(x)) + x + R1(x), assembled unit by unit.
        const auto unit = [&](const Tensor& in, UnitParams& u, int pad) {
            return batch_norm(conv2d(relu(in), u.conv, 1, pad), u.bn, BnMode::Infer);
        };
        const auto body = [&](const Tensor& in, ResidualParams& r) {
            return unit(unit(unit(in, r.u1, 0), r.u2, 1), r.u3, 0);
        };
        const Tensor r1 = body(x, p.r1);
        const Tensor inner = add(x, r1);
        const Tensor r2 = body(inner, p.r2);
        const Tensor want = add(add(r2, x), r1);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("upscaler doubles spatial dims") {
    Rng rng(3004);
    ParamStore ps;
    UpscalerParams up = register_upscaler(ps, "u", 256, rng);
    const Tensor y1 = random_tensor({1, 256, 4, 4}, rng);
    const Tensor y2 = upscaler_forward(y1, up, UpsampleMode::DirectCopy, 2,
                                       BnMode::Infer);
    CHECK(y2.shape().c == 256);
    CHECK(y2.shape().h == 8);
    CHECK(y2.shape().w == 8);
    CHECK_THROWS_AS(
        upscaler_forward(y1, up, UpsampleMode::DirectCopy, 0, BnMode::Infer),
        Error);
}

TEST_CASE("zero second unit turns the upscaler into a constant map") {
    Rng rng(3005);
    ParamStore ps;
    UpscalerParams up = register_upscaler(ps, "u", 3, rng);
    for (auto& v : up.post.conv.kernel.data()) {
        v = 0.0;
    }
    for (auto& v : up.post.bn.beta.data()) {
        v = 0.7;
    }
    const Tensor y1 = random_tensor({1, 3, 4, 4}, rng);
    const Tensor y2 =
        upscaler_forward(y1, up, UpsampleMode::ZeroPad, 2, BnMode::Train);
    for (const double v : y2.data()) {
        CHECK(v == 0.7);
    }
}

TEST_CASE("upsample modes differ unless the first unit is silent") {
    Rng rng(3006);
    ParamStore ps;
    UpscalerParams up = register_upscaler(ps, "u", 3, rng);
    const Tensor y1 = random_tensor({1, 3, 4, 4}, rng);
    const Tensor zp =
        upscaler_forward(y1, up, UpsampleMode::ZeroPad, 2, BnMode::Infer);
    const Tensor dc =
        upscaler_forward(y1, up, UpsampleMode::DirectCopy, 2, BnMode::Infer);
    CHECK(max_abs_diff(zp, dc) > 1e-6);

    // A zero first unit feeds all zeros to the upsample, where both modes
    // agree.
    for (auto& v : up.pre.conv.kernel.data()) {
        v = 0.0;
    }
    const Tensor zp0 =
        upscaler_forward(y1, up, UpsampleMode::ZeroPad, 2, BnMode::Infer);
    const Tensor dc0 =
        upscaler_forward(y1, up, UpsampleMode::DirectCopy, 2, BnMode::Infer);
    CHECK(zp0.data() == dc0.data());
}

TEST_CASE("zero chained pool passes its input through") {
    Rng rng(3007);
    ParamStore ps;
    ChainedPoolParams pool = register_chained_pool(ps, "p", 4, rng);
    for (auto& [name, entry] : ps.entries()) {
        if (ends_with(name, ".kernel")) {
            for (auto& v : entry.tensor.data()) {
                v = 0.0;
            }
        }
    }
    const Tensor y2 = random_tensor({1, 4, 6, 6}, rng);
    const Tensor y3 = chained_residual_pool_forward(y2, pool, 5, BnMode::Train);
    CHECK(y3.data() == y2.data());
}

TEST_CASE("chained pool keeps shape") {
    Rng rng(3008);
    ParamStore ps;
    ChainedPoolParams pool = register_chained_pool(ps, "p", 256, rng);
    const Tensor y2 = random_tensor({1, 256, 8, 8}, rng);
    const Tensor y3 = chained_residual_pool_forward(y2, pool, 5, BnMode::Infer);
    CHECK(y3.shape().c == 256);
    CHECK(y3.shape().h == 8);
    CHECK(y3.shape().w == 8);
    CHECK_THROWS_AS(chained_residual_pool_forward(y2, pool, 4, BnMode::Infer),
                    Error);
}

TEST_CASE("chained pool matches a stage-by-stage oracle") {
    Rng rng(3009);
    for (int draw = 0; draw < 25; ++draw) {
        ParamStore ps;
        ChainedPoolParams p = register_chained_pool(ps, "p", 4, rng);
        randomize_aux(ps, rng);
        const Tensor y2 = random_tensor({1, 4, 6, 6}, rng);
        const Tensor got = chained_residual_pool_forward(y2, p, 5, BnMode::Infer);

        const Tensor c1 = batch_norm(conv2d(max_pool(y2, 5, 1, 2), p.c1.conv, 1, 1),
                                     p.c1.bn, BnMode::Infer);
        const Tensor c2 = batch_norm(conv2d(max_pool(c1, 5, 1, 2), p.c2.conv, 1, 1),
                                     p.c2.bn, BnMode::Infer);
        const Tensor s = add(add(y2, c1), c2);
        const Tensor want = residual_block_forward(s, p.block, BnMode::Infer);
        CHECK(max_abs_diff(got, want) < 1e-12);
    }
}

TEST_CASE("backbone emits the documented pyramid") {
    RefineConfig cfg;
    cfg.filters = 256;
    cfg.num_classes = 6;
    Segmenter s = build_segmenter(cfg, 41);
    Rng rng(3010);
    const Tensor img = random_tensor({1, 3, 64, 64}, rng, -1.0, 1.0);
    const BackboneFeatures f = toy_backbone_forward(img, s, BnMode::Infer);
    CHECK(f.main.shape().c == 256);
    CHECK(f.main.shape().h == 4);
    CHECK(f.main.shape().w == 4);
    REQUIRE(f.skips.size() == 3);
    CHECK(f.skips[0].shape().h == 8);
    CHECK(f.skips[0].shape().c == 128);
    CHECK(f.skips[1].shape().h == 16);
    CHECK(f.skips[1].shape().c == 64);
    CHECK(f.skips[2].shape().h == 32);
    CHECK(f.skips[2].shape().c == 32);

    const Tensor bad = random_tensor({1, 3, 60, 64}, rng);
    CHECK_THROWS_AS(toy_backbone_forward(bad, s, BnMode::Infer), Error);
}

TEST_CASE("backbone is deterministic and zero maps to zero") {
    RefineConfig cfg;
    cfg.filters = 16;
    Segmenter a = build_segmenter(cfg, 7);
    Segmenter b = build_segmenter(cfg, 7);
    Rng rng(3011);
    const Tensor img = random_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
    const BackboneFeatures fa = toy_backbone_forward(img, a, BnMode::Infer);
    const BackboneFeatures fb = toy_backbone_forward(img, b, BnMode::Infer);
    CHECK(fa.main.data() == fb.main.data());

    const Tensor zero = Tensor::zeros({1, 3, 32, 32});
    const BackboneFeatures fz = toy_backbone_forward(zero, a, BnMode::Train);
    for (const double v : fz.main.data()) {
        REQUIRE(v == 0.0);
    }
    for (const auto& skip : fz.skips) {
        for (const double v : skip.data()) {
            REQUIRE(v == 0.0);
        }
    }
}

TEST_CASE("four levels from stride 16 restore full resolution") {
    for (const std::int64_t dim : {std::int64_t{64}, std::int64_t{128}}) {
        RefineConfig cfg;
        cfg.filters = 8;
        cfg.num_classes = 6;
        Segmenter s = build_segmenter(cfg, 13);
        Rng rng(3012);
        const Tensor img = random_tensor({1, 3, dim, dim}, rng, -1.0, 1.0);
        const Tensor logits = segmenter_forward(img, s, BnMode::Infer);
        CHECK(logits.shape().n == 1);
        CHECK(logits.shape().c == 6);
        CHECK(logits.shape().h == dim);
        CHECK(logits.shape().w == dim);
    }
}

TEST_CASE("single level stack doubles its feature resolution") {
    Rng rng(3013);
    Segmenter s = make_stack(1, 4, 3, 3, rng);
    const Tensor feat = random_tensor({2, 4, 8, 8}, rng);
    const BackboneFeatures f{feat, {}};
    const Tensor logits = refine_stack_forward(f, s, BnMode::Infer);
    CHECK(logits.shape().n == 2);
    CHECK(logits.shape().c == 3);
    CHECK(logits.shape().h == 16);
    CHECK(logits.shape().w == 16);

    const BackboneFeatures wrong{random_tensor({1, 5, 8, 8}, rng), {}};
    CHECK_THROWS_AS(refine_stack_forward(wrong, s, BnMode::Infer), Error);
}

TEST_CASE("zero residual and chain kernels reduce levels to their upscalers") {
    Rng rng(3014);
    Segmenter s = make_stack(4, 4, 3, 3, rng);
    zero_kernels_except_upscalers(s.store);
    const Tensor feat = random_tensor({1, 4, 2, 2}, rng);
    const Tensor got = refine_stack_forward({feat, {}}, s, BnMode::Infer);

    Tensor x = feat;
    for (int i = 0; i < 4; ++i) {
        x = upscaler_forward(x, s.levels[static_cast<std::size_t>(i)].up,
                             s.config.upsample_mode, 2, BnMode::Infer);
    }
    const Tensor want = conv2d(x, s.classifier, 1, 0);
    CHECK(got.data() == want.data());
}

TEST_CASE("skip fusion wires the backbone pyramid into the levels") {
    RefineConfig cfg;
    cfg.filters = 8;
    cfg.fuse_skips = true;
    Segmenter s = build_segmenter(cfg, 21);
    CHECK(s.store.contains("levels.1.skip.kernel"));
    CHECK(s.store.contains("levels.3.skip.kernel"));
    CHECK_FALSE(s.store.contains("levels.0.skip.kernel"));
    CHECK(s.store.get("levels.1.skip.kernel").shape().c == 128);
    CHECK(s.store.get("levels.3.skip.kernel").shape().c == 32);

    Rng rng(3015);
    const Tensor img = random_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
    const Tensor logits = segmenter_forward(img, s, BnMode::Infer);
    CHECK(logits.shape().h == 32);

    // Dropping the skips must be detected.
    const BackboneFeatures bare{toy_backbone_forward(img, s, BnMode::Infer).main, {}};
    CHECK_THROWS_AS(refine_stack_forward(bare, s, BnMode::Infer), Error);

    RefineConfig bad = cfg;
    bad.levels = 2;
    CHECK_THROWS_AS(build_segmenter(bad, 1), Error);
}

TEST_CASE("config validation") {
    RefineConfig cfg;
    cfg.levels = 0;
    CHECK_THROWS_AS(build_segmenter(cfg, 1), Error);
    cfg.levels = 3;
    CHECK_THROWS_AS(build_segmenter(cfg, 1), Error); // 2^3 != 16
    cfg.levels = 4;
    cfg.num_classes = 1;
    CHECK_THROWS_AS(build_segmenter(cfg, 1), Error);
    cfg.num_classes = 2;
    cfg.pool_kernel = 4;
    CHECK_THROWS_AS(build_segmenter(cfg, 1), Error);
    cfg.pool_kernel = 5;
    cfg.scale = 4;
    cfg.levels = 2;
    CHECK_NOTHROW(build_segmenter(cfg, 1)); // 4^2 == 16
}

TEST_CASE("infer mode keeps batch items independent") {
    RefineConfig cfg;
    cfg.filters = 8;
    Segmenter s = build_segmenter(cfg, 33);
    Rng rng(3016);
    const Tensor a = random_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
    const Tensor b = random_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
    Tensor ab = Tensor::zeros({2, 3, 32, 32});
    Tensor ba = Tensor::zeros({2, 3, 32, 32});
    const std::int64_t plane = 3 * 32 * 32;
    std::copy(a.data().begin(), a.data().end(), ab.data().begin());
    std::copy(b.data().begin(), b.data().end(), ab.data().begin() + plane);
    std::copy(b.data().begin(), b.data().end(), ba.data().begin());
    std::copy(a.data().begin(), a.data().end(), ba.data().begin() + plane);

    const Tensor out_ab = segmenter_forward(ab, s, BnMode::Infer);
    const Tensor out_ba = segmenter_forward(ba, s, BnMode::Infer);
    const std::int64_t logit_plane = out_ab.shape().c * 32 * 32;
    for (std::int64_t i = 0; i < logit_plane; ++i) {
        REQUIRE(out_ab.data()[static_cast<std::size_t>(i)] ==
                out_ba.data()[static_cast<std::size_t>(logit_plane + i)]);
        REQUIRE(out_ab.data()[static_cast<std::size_t>(logit_plane + i)] ==
                out_ba.data()[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("composed blocks pass finite difference checks") {
    Rng rng(3017);
    testing::GradCheck gc;

    SUBCASE("residual block") {
        ParamStore ps;
        ResidualBlockParams p = register_residual_block(ps, "b", 3, rng);
        std::vector<Tensor> inputs{random_tensor({1, 3, 4, 4}, rng)};
        for (auto& [name, entry] : ps.entries()) {
            if (entry.trainable) {
                inputs.push_back(entry.tensor);
            }
        }
        const auto forward = [&](std::vector<Tensor>& in) {
            return mean_all(residual_block_forward(in[0], p, BnMode::Train));
        };
        CHECK(gc.run(forward, inputs) < 1e-4);
    }

    SUBCASE("upscaler") {
        ParamStore ps;
        UpscalerParams p = register_upscaler(ps, "u", 3, rng);
        std::vector<Tensor> inputs{random_tensor({1, 3, 3, 3}, rng)};
        for (auto& [name, entry] : ps.entries()) {
            if (entry.trainable) {
                inputs.push_back(entry.tensor);
            }
        }
        const auto forward = [&](std::vector<Tensor>& in) {
            return mean_all(upscaler_forward(in[0], p, UpsampleMode::DirectCopy, 2,
                                             BnMode::Train));
        };
        CHECK(gc.run(forward, inputs) < 1e-4);
    }

    SUBCASE("chained pool") {
        ParamStore ps;
        ChainedPoolParams p = register_chained_pool(ps, "p", 3, rng);
        std::vector<Tensor> inputs{random_tensor({1, 3, 4, 4}, rng)};
        for (auto& [name, entry] : ps.entries()) {
            if (entry.trainable) {
                inputs.push_back(entry.tensor);
            }
        }
        const auto forward = [&](std::vector<Tensor>& in) {
            return mean_all(chained_residual_pool_forward(in[0], p, 3, BnMode::Train));
        };
        CHECK(gc.run(forward, inputs) < 1e-4);
    }

    SUBCASE("one level stack") {
        Segmenter s = make_stack(1, 3, 2, 3, rng);
        std::vector<Tensor> inputs{random_tensor({1, 3, 3, 3}, rng)};
        inputs.push_back(s.store.get("levels.0.up.pre.conv.kernel"));
        inputs.push_back(s.store.get("levels.0.block.r1.u2.conv.kernel"));
        inputs.push_back(s.store.get("classifier.kernel"));
        const auto forward = [&](std::vector<Tensor>& in) {
            return mean_all(refine_stack_forward({in[0], {}}, s, BnMode::Train));
        };
        CHECK(gc.run(forward, inputs) < 1e-4);
    }

    SUBCASE("backbone weight through the full model") {
        RefineConfig cfg;
        cfg.filters = 4;
        cfg.num_classes = 2;
        cfg.pool_kernel = 3;
        Segmenter s = build_segmenter(cfg, 51);
        const Tensor img = random_tensor({1, 3, 16, 16}, rng, -1.0, 1.0);
        std::vector<Tensor> inputs{s.store.get("backbone.stage0.conv.bias")};
        inputs.push_back(s.store.get("backbone.stage3.bn.gamma"));
        const auto forward = [&](std::vector<Tensor>&) {
            return mean_all(segmenter_forward(img, s, BnMode::Train));
        };
        CHECK(gc.run(forward, inputs) < 1e-4);
    }
}

TEST_CASE("weight files round trip the whole model") {
    TempDir dir("weights");
    RefineConfig cfg;
    cfg.filters = 8;
    cfg.fuse_skips = true;
    cfg.upsample_mode = UpsampleMode::ZeroPad;
    Segmenter s = build_segmenter(cfg, 5);
    // Make running stats non-default so their serialization is visible.
    Rng rng(3018);
    randomize_aux(s.store, rng);
    save_segmenter(dir.str("seg.bin"), s);

    Segmenter back = load_segmenter(dir.str("seg.bin"));
    CHECK(back.config.filters == 8);
    CHECK(back.config.fuse_skips);
    CHECK(back.config.upsample_mode == UpsampleMode::ZeroPad);
    REQUIRE(back.store.size() == s.store.size());
    for (const auto& [name, entry] : s.store.entries()) {
        REQUIRE(back.store.contains(name));
        CHECK(back.store.get(name).data() == entry.tensor.data());
    }

    const Tensor img = random_tensor({1, 3, 32, 32}, rng, -1.0, 1.0);
    const Tensor la = segmenter_forward(img, s, BnMode::Infer);
    const Tensor lb = segmenter_forward(img, back, BnMode::Infer);
    CHECK(la.data() == lb.data());

    // A weight file with a foreign arch tag is rejected.
    save_weights(dir.str("other.bin"), s.store, {{"arch", 2.0}});
    CHECK_THROWS_AS(load_segmenter(dir.str("other.bin")), Error);
}

TEST_CASE("training is seeded and reduces the loss") {
    TempDir dir("train");
    DatasetGenConfig gen;
    gen.seed = 404;
    gen.count = 4;
    gen.out_dir = dir.str();
    gen.scene.size = 32;
    const DatasetManifest manifest = generate_synthetic_dataset(gen);

    RefineConfig cfg;
    cfg.filters = 8;
    cfg.num_classes = manifest.class_count();
    cfg.steps = 50;
    cfg.batch_size = 2;
    OptimConfig opt;
    opt.lr = 3e-3;

    TrainedSegmenter a = train_segmenter(manifest, cfg, 11, opt);
    REQUIRE(a.losses.size() == 50);
    for (const double v : a.losses) {
        REQUIRE(std::isfinite(v));
    }
    const double head = a.losses.front();
    const double tail = a.losses.back();
    CHECK(tail < 0.8 * head);

    TrainedSegmenter b = train_segmenter(manifest, cfg, 11, opt);
    CHECK(a.losses == b.losses);

    // Trained model beats the untrained baseline on the train split.
    Segmenter init = build_segmenter(cfg, 11);
    const double miou_init = mean_iou(evaluate_segmenter(init, manifest, "train"));
    const double miou_trained =
        mean_iou(evaluate_segmenter(a.model, manifest, "train"));
    CHECK(miou_trained > miou_init);
}

TEST_CASE("zero steps returns the initialization") {
    TempDir dir("zerostep");
    DatasetGenConfig gen;
    gen.seed = 8;
    gen.count = 2;
    gen.out_dir = dir.str();
    gen.scene.size = 16;
    const DatasetManifest manifest = generate_synthetic_dataset(gen);

    RefineConfig cfg;
    cfg.filters = 4;
    cfg.num_classes = 6;
    cfg.steps = 0;
    cfg.batch_size = 1;
    TrainedSegmenter t = train_segmenter(manifest, cfg, 99);
    CHECK(t.losses.empty());

    Segmenter fresh = build_segmenter(cfg, 99);
    for (const auto& [name, entry] : fresh.store.entries()) {
        CHECK(t.model.store.get(name).data() == entry.tensor.data());
    }
}

TEST_CASE("diverging training reports the failing step") {
    TempDir dir("blowup");
    DatasetGenConfig gen;
    gen.seed = 15;
    gen.count = 2;
    gen.out_dir = dir.str();
    gen.scene.size = 16;
    const DatasetManifest manifest = generate_synthetic_dataset(gen);

    RefineConfig cfg;
    cfg.filters = 4;
    cfg.num_classes = 6;
    cfg.steps = 8;
    cfg.batch_size = 1;
    OptimConfig opt;
    opt.kind = OptKind::Sgd;
    opt.lr = 1e300;
    CHECK_THROWS_WITH_AS(train_segmenter(manifest, cfg, 3, opt),
                         doctest::Contains("step"), Error);
}

TEST_CASE("prediction follows the classifier argmax") {
    RefineConfig cfg;
    cfg.filters = 4;
    cfg.num_classes = 2;
    Segmenter s = build_segmenter(cfg, 2);
    for (auto& v : s.classifier.kernel.data()) {
        v = 0.0;
    }
    s.classifier.bias.at(0, 0, 0, 0) = 0.0;
    s.classifier.bias.at(0, 1, 0, 0) = 5.0;

    RasterImage img = make_image(32, 32);
    Rng rng(3019);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    const MaskImage mask = predict(s, img);
    for (const auto v : mask.values) {
        REQUIRE(v == 1);
    }

    RasterImage odd = make_image(60, 32);
    CHECK_THROWS_AS(predict(s, odd), Error);
}

TEST_CASE("tiled prediction agrees with whole image prediction on one chip") {
    RefineConfig cfg;
    cfg.filters = 8;
    cfg.num_classes = 6;
    Segmenter s = build_segmenter(cfg, 17);
    Rng rng(3020);
    RasterImage img = make_image(64, 64);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    const MaskImage whole = predict(s, img);
    const MaskImage tiled = predict_tiled(s, img, 64, 0);
    CHECK(whole.values == tiled.values);

    RasterImage odd = make_image(80, 48);
    for (auto& p : odd.pixels) {
        p = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    const MaskImage m = predict_tiled(s, odd, 32, 16);
    CHECK(m.width == 80);
    CHECK(m.height == 48);
    for (const auto v : m.values) {
        REQUIRE(v < 6);
    }
}

TEST_CASE("a full training batch runs forward and backward quickly") {
    set_threads(1);
    RefineConfig cfg;
    cfg.filters = 32;
    cfg.num_classes = 6;
    Segmenter s = build_segmenter(cfg, 1);
    Rng rng(3021);
    const Tensor img = random_tensor({4, 3, 64, 64}, rng, -1.0, 1.0);
    LabelMap labels;
    labels.n = 4;
    labels.h = 64;
    labels.w = 64;
    labels.values.resize(4 * 64 * 64);
    for (auto& v : labels.values) {
        v = static_cast<int>(rng.uniform_index(6));
    }

    const auto t0 = std::chrono::steady_clock::now();
    const Tensor loss =
        softmax_cross_entropy(segmenter_forward(img, s, BnMode::Train), labels, -1);
    backward(loss);
    const auto t1 = std::chrono::steady_clock::now();
    set_threads(0);
    const double seconds = std::chrono::duration<double>(t1 - t0).count();
    CHECK(seconds < 10.0);
}
