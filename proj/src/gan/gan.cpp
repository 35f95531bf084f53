#include "gan/gan.hpp"

#include <cmath>
#include <map>
#include <string>

#include "core/error.hpp"
#include "data/convert.hpp"

namespace oseg {

void validate_gan_weights(const GanLossWeights& w) {
    if (!(w.lambda >= 0.0)) {
        throw_invalid("gan weights: lambda must be >= 0");
    }
    if (!(w.beta >= 0.0 && w.beta <= 1.0)) {
        throw_invalid("gan weights: beta must lie in [0, 1]");
    }
}

namespace {

Tensor clamped_prob(const Tensor& p) {
    return clamp(p, kProbEps, 1.0 - kProbEps);
}

Tensor one_minus(const Tensor& p) {
    return scalar_add(scalar_mul(p, -1.0), 1.0);
}

void require_scores(const Tensor& t, const char* who) {
    if (!t.defined() || t.numel() == 0) {
        throw_invalid(std::string(who) + ": empty input");
    }
}

} // namespace

Tensor adversarial_loss_generator(const Tensor& d_fake) {
    require_scores(d_fake, "adversarial_loss_generator");
    return mean_all(log_op(one_minus(clamped_prob(d_fake))));
}

Tensor adversarial_loss_discriminator(const Tensor& d_real,
                                      const Tensor& d_fake) {
    require_scores(d_real, "adversarial_loss_discriminator");
    require_scores(d_fake, "adversarial_loss_discriminator");
    Tensor real_term = mean_all(log_op(clamped_prob(d_real)));
    Tensor fake_term = mean_all(log_op(one_minus(clamped_prob(d_fake))));
    return scalar_mul(add(real_term, fake_term), -1.0);
}

Tensor cycle_loss(const Tensor& z, const Tensor& fgz, const Tensor& x,
                  const Tensor& gfx) {
    return add(mean_abs_diff(fgz, z), mean_abs_diff(gfx, x));
}

double combined_objective(const GanLossWeights& w, double adv, double cycle,
                          double fm) {
    validate_gan_weights(w);
    return w.alpha * adv + w.lambda * (w.beta * cycle + (1.0 - w.beta) * fm);
}

Tensor combined_objective(const GanLossWeights& w, const Tensor& adv,
                          const Tensor& cycle, const Tensor& fm) {
    validate_gan_weights(w);
    Tensor content = add(scalar_mul(cycle, w.beta), scalar_mul(fm, 1.0 - w.beta));
    return add(scalar_mul(adv, w.alpha), scalar_mul(content, w.lambda));
}

namespace {

constexpr std::uint64_t kToyFeatureSeed = 0xFEA7;

void freeze_store(ParamStore& ps) {
    for (auto& [name, entry] : ps.entries()) {
        entry.trainable = false;
        entry.tensor.set_requires_grad(false);
    }
}

} // namespace

namespace {

// Zeroes every kernel tap that would connect different bands, turning a dense
// conv into a grouped one with `groups` independent channel blocks. Surviving
// taps are rescaled so the init variance matches the reduced fan-in.
void restrict_to_groups(ConvWeights& w, std::int64_t groups) {
    const Shape& ks = w.kernel.shape();
    const std::int64_t out_per = ks.n / groups;
    const std::int64_t in_per = ks.c / groups;
    const std::int64_t taps = ks.h * ks.w;
    const double gain = std::sqrt(static_cast<double>(groups));
    for (std::int64_t o = 0; o < ks.n; ++o) {
        for (std::int64_t i = 0; i < ks.c; ++i) {
            const bool same_band = (o / out_per == i / in_per);
            for (std::int64_t t = 0; t < taps; ++t) {
                double& tap = w.kernel.data()[(o * ks.c + i) * taps + t];
                tap = same_band ? tap * gain : 0.0;
            }
        }
    }
}

} // namespace

FeatureExtractor make_toy_feature_extractor() {
    FeatureExtractor fx;
    fx.kind = FeatureExtractorKind::ToyFixedSeed;
    Rng rng(kToyFeatureSeed);
    // A per-band texture pyramid: the channel graph is block-diagonal, so each
    // input band keeps its own feature stack all the way to the output tensor.
    // The sensors being matched differ band by band, and a generic extractor
    // that mixes bands washes that signal out of the matching loss.
    const std::int64_t chans[4] = {3, 6, 12, 12};
    const int strides[3] = {1, 2, 2};
    for (int i = 0; i < 3; ++i) {
        ConvWeights w = register_conv(fx.store, "feat." + std::to_string(i),
                                      chans[i + 1], chans[i], 3, rng);
        restrict_to_groups(w, 3);
        fx.layers.push_back(w);
        fx.strides.push_back(strides[i]);
    }
    freeze_store(fx.store);
    return fx;
}

void save_feature_extractor(const std::string& path,
                            const FeatureExtractor& fx) {
    if (fx.layers.empty() || fx.layers.size() != fx.strides.size()) {
        throw_invalid("feature extractor has no usable layers");
    }
    std::map<std::string, double> config;
    config["arch"] = 4.0;
    config["layers"] = static_cast<double>(fx.layers.size());
    for (std::size_t i = 0; i < fx.strides.size(); ++i) {
        config["stride." + std::to_string(i)] =
            static_cast<double>(fx.strides[i]);
    }
    save_weights(path, fx.store, config);
}

FeatureExtractor load_feature_extractor(const std::string& path) {
    WeightFile file = load_weights(path);
    const auto need = [&](const std::string& key) {
        auto it = file.config.find(key);
        if (it == file.config.end()) {
            throw_io("feature extractor weights: missing config key '" + key +
                     "'");
        }
        return it->second;
    };
    if (need("arch") != 4.0) {
        throw_io("not a feature extractor weight file");
    }
    const double layers = need("layers");
    if (layers < 1.0 || layers != std::floor(layers)) {
        throw_io("feature extractor weights: bad layer count");
    }
    const int n = static_cast<int>(layers);

    FeatureExtractor fx;
    fx.kind = FeatureExtractorKind::External;
    for (int i = 0; i < n; ++i) {
        const std::string prefix = "feat." + std::to_string(i);
        auto kt = file.tensors.find(prefix + ".kernel");
        auto bt = file.tensors.find(prefix + ".bias");
        if (kt == file.tensors.end() || bt == file.tensors.end()) {
            throw_io("feature extractor weights: missing tensors for '" +
                     prefix + "'");
        }
        ConvWeights w;
        w.kernel = fx.store.add(prefix + ".kernel", kt->second, false);
        w.bias = fx.store.add(prefix + ".bias", bt->second, false);
        const double s = need("stride." + std::to_string(i));
        if (s < 1.0 || s != std::floor(s)) {
            throw_io("feature extractor weights: bad stride for layer " +
                     std::to_string(i));
        }
        fx.layers.push_back(w);
        fx.strides.push_back(static_cast<int>(s));
    }
    if (file.tensors.size() != static_cast<std::size_t>(2 * n)) {
        throw_io("feature extractor weights: unexpected extra tensors");
    }
    if (fx.layers.front().kernel.shape().c != 3) {
        throw_io("feature extractor weights: first layer must take 3 channels");
    }
    for (int i = 1; i < n; ++i) {
        if (fx.layers[i].kernel.shape().c != fx.layers[i - 1].kernel.shape().n) {
            throw_io("feature extractor weights: channel chain mismatch at "
                     "layer " +
                     std::to_string(i));
        }
    }
    return fx;
}

Tensor extract_features(const FeatureExtractor& fx, const Tensor& image_norm) {
    if (fx.layers.empty() || fx.layers.size() != fx.strides.size()) {
        throw_invalid("feature extractor has no usable layers");
    }
    if (!image_norm.defined()) {
        throw_invalid("extract_features: undefined input");
    }
    Tensor h = image_norm;
    for (std::size_t i = 0; i < fx.layers.size(); ++i) {
        const Shape& ks = fx.layers[i].kernel.shape();
        h = conv2d(h, fx.layers[i], fx.strides[i],
                   static_cast<int>((ks.h - 1) / 2));
        if (i + 1 < fx.layers.size()) {
            h = relu(h);
        }
    }
    return h;
}

Tensor feature_match_loss(const FeatureExtractor& fx, const Tensor& target_norm,
                          const Tensor& generated_norm) {
    if (!target_norm.defined() || !generated_norm.defined()) {
        throw_invalid("feature_match_loss: undefined input");
    }
    if (target_norm.shape() != generated_norm.shape()) {
        throw_invalid("feature_match_loss: image dims differ: " +
                      target_norm.shape().str() + " vs " +
                      generated_norm.shape().str());
    }
    return mean_abs_diff(extract_features(fx, target_norm),
                         extract_features(fx, generated_norm));
}

double feature_match_loss(const FeatureExtractor& fx, const RasterImage& target,
                          const RasterImage& generated) {
    NoGradGuard guard;
    Tensor t = normalize_image_tensor(image_to_tensor(target));
    Tensor g = normalize_image_tensor(image_to_tensor(generated));
    return feature_match_loss(fx, t, g).item();
}

namespace {

GeneratorNet register_generator(ParamStore& ps, const std::string& prefix,
                                std::int64_t base, bool identity_init,
                                Rng& rng) {
    GeneratorNet g;
    g.enc1 = register_conv(ps, prefix + ".enc1", base, 3, 3, rng);
    g.enc2 = register_conv(ps, prefix + ".enc2", 2 * base, base, 3, rng);
    g.res1a = register_conv(ps, prefix + ".res1a", 2 * base, 2 * base, 3, rng);
    g.res1b = register_conv(ps, prefix + ".res1b", 2 * base, 2 * base, 3, rng);
    g.res2a = register_conv(ps, prefix + ".res2a", 2 * base, 2 * base, 3, rng);
    g.res2b = register_conv(ps, prefix + ".res2b", 2 * base, 2 * base, 3, rng);
    g.dec1 = register_conv(ps, prefix + ".dec1", base, 2 * base, 3, rng);
    g.dec2 = register_conv(ps, prefix + ".dec2", base, base, 3, rng);
    g.out = identity_init
                ? register_conv_zero(ps, prefix + ".out", 3, base, 3)
                : register_conv(ps, prefix + ".out", 3, base, 3, rng);
    g.mix = register_conv_zero(ps, prefix + ".mix", 3, 3, 1);
    for (int c = 0; c < 3; ++c) {
        g.mix.kernel.data()[c * 3 + c] = 1.0;
    }
    return g;
}

DiscriminatorNet register_discriminator(ParamStore& ps,
                                        const std::string& prefix,
                                        std::int64_t base, Rng& rng) {
    DiscriminatorNet d;
    d.c1 = register_conv(ps, prefix + ".c1", base, 3, 3, rng);
    d.c2 = register_conv(ps, prefix + ".c2", 2 * base, base, 3, rng);
    d.c3 = register_conv(ps, prefix + ".c3", 4 * base, 2 * base, 3, rng);
    d.head = register_conv(ps, prefix + ".head", 1, 4 * base, 1, rng);
    return d;
}

ParamStore merged_store(const TranslatorParams& p) {
    ParamStore m;
    for (const auto& [name, entry] : p.gen_store.entries()) {
        m.add(name, entry.tensor, entry.trainable);
    }
    for (const auto& [name, entry] : p.disc_store.entries()) {
        m.add(name, entry.tensor, entry.trainable);
    }
    return m;
}

} // namespace

TranslatorParams build_translator(std::int64_t base_filters, bool identity_init,
                                  Rng& rng) {
    if (base_filters < 1) {
        throw_invalid("translator: base_filters must be >= 1");
    }
    TranslatorParams p;
    p.base_filters = base_filters;
    p.g = register_generator(p.gen_store, "g", base_filters, identity_init, rng);
    p.f = register_generator(p.gen_store, "f", base_filters, identity_init, rng);
    p.d_target =
        register_discriminator(p.disc_store, "d_target", base_filters, rng);
    p.d_source =
        register_discriminator(p.disc_store, "d_source", base_filters, rng);
    return p;
}

TranslatorParams build_translator(std::int64_t base_filters, bool identity_init,
                                  std::uint64_t seed) {
    Rng rng(seed);
    return build_translator(base_filters, identity_init, rng);
}

void save_translator(const std::string& path, const TranslatorParams& params) {
    std::map<std::string, double> config;
    config["arch"] = 3.0;
    config["base_filters"] = static_cast<double>(params.base_filters);
    ParamStore merged = merged_store(params);
    save_weights(path, merged, config);
}

TranslatorParams load_translator(const std::string& path) {
    WeightFile file = load_weights(path);
    auto arch = file.config.find("arch");
    if (arch == file.config.end() || arch->second != 3.0) {
        throw_io("not a translator weight file");
    }
    auto bf = file.config.find("base_filters");
    if (bf == file.config.end() || bf->second < 1.0 ||
        bf->second != std::floor(bf->second)) {
        throw_io("translator weights: bad base_filters");
    }
    TranslatorParams p = build_translator(
        static_cast<std::int64_t>(bf->second), false, std::uint64_t{0});
    ParamStore merged = merged_store(p);
    fill_params(merged, file);
    return p;
}

Tensor generator_forward(const Tensor& x, const GeneratorNet& g) {
    if (!x.defined()) {
        throw_invalid("generator_forward: undefined input");
    }
    const Shape& s = x.shape();
    if (s.h % 4 != 0 || s.w % 4 != 0) {
        throw_invalid("generator input dims must be divisible by 4, got " +
                      s.str());
    }
    Tensor h1 = relu(conv2d(x, g.enc1, 2, 1));
    Tensor h2 = relu(conv2d(h1, g.enc2, 2, 1));
    Tensor h3 = add(h2, conv2d(relu(conv2d(h2, g.res1a, 1, 1)), g.res1b, 1, 1));
    Tensor h4 = add(h3, conv2d(relu(conv2d(h3, g.res2a, 1, 1)), g.res2b, 1, 1));
    Tensor d1 = relu(conv2d(upsample_direct_copy(h4, 2), g.dec1, 1, 1));
    Tensor d2 = relu(conv2d(upsample_direct_copy(d1, 2), g.dec2, 1, 1));
    Tensor delta = conv2d(d2, g.out, 1, 1);
    return clamp(conv2d(add(x, delta), g.mix, 1, 0), -1.0, 1.0);
}

Tensor discriminator_forward(const Tensor& x, const DiscriminatorNet& d) {
    if (!x.defined()) {
        throw_invalid("discriminator_forward: undefined input");
    }
    Tensor h = leaky_relu(conv2d(x, d.c1, 2, 1), 0.2);
    h = leaky_relu(conv2d(h, d.c2, 2, 1), 0.2);
    h = leaky_relu(conv2d(h, d.c3, 2, 1), 0.2);
    return sigmoid(conv2d(h, d.head, 1, 0));
}

RasterImage translate(const RasterImage& img, const TranslatorParams& params,
                      Direction direction) {
    if (img.width <= 0 || img.height <= 0) {
        throw_invalid("translate: empty image");
    }
    if (img.width % 4 != 0 || img.height % 4 != 0) {
        throw_invalid("translate: image dims must be divisible by 4");
    }
    NoGradGuard guard;
    Tensor x = normalize_image_tensor(image_to_tensor(img));
    const GeneratorNet& gnet =
        direction == Direction::SourceToTarget ? params.g : params.f;
    return tensor_to_image(denormalize_image_tensor(generator_forward(x, gnet)));
}

} // namespace oseg
