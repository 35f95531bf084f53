#include "gan/train.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "core/error.hpp"
#include "data/convert.hpp"

namespace oseg {

namespace {

std::vector<Tensor> normalize_set(const std::vector<RasterImage>& images,
                                  const char* which) {
    if (images.empty()) {
        throw_invalid(std::string("train_translator: ") + which +
                      " set is empty");
    }
    std::vector<Tensor> out;
    out.reserve(images.size());
    for (const auto& img : images) {
        if (img.width != images.front().width ||
            img.height != images.front().height) {
            throw_invalid(std::string("train_translator: ") + which +
                          " chips must share one size");
        }
        out.push_back(normalize_image_tensor(image_to_tensor(img)));
    }
    return out;
}

Tensor gather_at(const std::vector<Tensor>& items,
                 const std::vector<std::size_t>& picks) {
    const Shape& s = items.front().shape();
    const auto batch = static_cast<std::int64_t>(picks.size());
    Tensor b = Tensor::zeros({batch, s.c, s.h, s.w});
    const std::int64_t plane = s.c * s.h * s.w;
    for (std::int64_t i = 0; i < batch; ++i) {
        const auto& src = items[picks[std::size_t(i)] % items.size()].data();
        std::copy(src.begin(), src.end(), b.data().begin() + i * plane);
    }
    return b;
}

// One index draw steers both sets. When the caller passes corresponding sets
// (sensor-simulation experiments translate the very scenes the target set was
// derived from), row i of the source batch and row i of the target batch
// describe the same scene, so the Eq. 4 term compares each generated image
// with its corresponding target exemplar. For unrelated sets the shared index
// is just an arbitrary pairing.
std::vector<std::size_t> pick_rows(std::size_t span, int batch, Rng& rng) {
    std::vector<std::size_t> picks(static_cast<std::size_t>(batch));
    for (auto& p : picks) {
        p = rng.uniform_index(span);
    }
    return picks;
}

double finite_or_throw(const Tensor& loss, const char* which, int epoch) {
    const double v = loss.item();
    if (!std::isfinite(v)) {
        throw_runtime(std::string("train_translator: non-finite ") + which +
                      " loss at epoch " + std::to_string(epoch));
    }
    return v;
}

// The output clamp can keep every loss finite while gradients overflow, so
} // namespace

TrainedTranslator train_translator(const std::vector<RasterImage>& source,
                                   const std::vector<RasterImage>& target,
                                   const GanLossWeights& w, int epochs,
                                   std::uint64_t seed,
                                   const TranslatorTrainOptions& opt) {
    validate_gan_weights(w);
    if (epochs < 0) {
        throw_invalid("train_translator: epochs must be >= 0");
    }
    if (opt.batch_size < 1) {
        throw_invalid("train_translator: batch size must be >= 1");
    }
    std::vector<Tensor> src = normalize_set(source, "source");
    std::vector<Tensor> tgt = normalize_set(target, "target");
    if (src.front().shape() != tgt.front().shape()) {
        throw_invalid(
            "train_translator: source and target chips must share one size");
    }

    TrainedTranslator result;
    Rng rng(seed);
    result.params = build_translator(opt.base_filters, false, rng);
    TranslatorParams& p = result.params;
    FeatureExtractor fx = make_toy_feature_extractor();
    Optimizer gen_optim(p.gen_store, opt.gen_opt);
    Optimizer disc_optim(p.disc_store, opt.disc_opt);

    const std::size_t per_epoch = std::max(src.size(), tgt.size());
    const int steps = static_cast<int>(
        (per_epoch + static_cast<std::size_t>(opt.batch_size) - 1) /
        static_cast<std::size_t>(opt.batch_size));

    for (int epoch = 1; epoch <= epochs; ++epoch) {
        double sum_g = 0.0, sum_d = 0.0, sum_cycle = 0.0, sum_fm = 0.0;
        for (int step = 0; step < steps; ++step) {
            std::vector<std::size_t> picks =
                pick_rows(per_epoch, opt.batch_size, rng);
            Tensor zs = gather_at(src, picks);
            Tensor xs = gather_at(tgt, picks);

            // Runaway weights can blow up anywhere in the step: the loss
            // guards catch non-finite totals, but an exploding forward can
            // throw from deep inside the tensor engine first. Either way the
            // caller gets the epoch index.
            try {
                Tensor fake_t_frozen, fake_s_frozen;
                {
                    NoGradGuard guard;
                    fake_t_frozen = generator_forward(zs, p.g);
                    fake_s_frozen = generator_forward(xs, p.f);
                }
                Tensor d_loss = scalar_mul(
                    add(adversarial_loss_discriminator(
                            discriminator_forward(xs, p.d_target),
                            discriminator_forward(fake_t_frozen, p.d_target)),
                        adversarial_loss_discriminator(
                            discriminator_forward(zs, p.d_source),
                            discriminator_forward(fake_s_frozen, p.d_source))),
                    0.5);
                sum_d += finite_or_throw(d_loss, "discriminator", epoch);
                backward(d_loss);
                disc_optim.step();
                p.disc_store.zero_grads();

                Tensor fake_t = generator_forward(zs, p.g);
                Tensor fake_s = generator_forward(xs, p.f);
                Tensor adv = scalar_mul(
                    add(adversarial_loss_generator(
                            discriminator_forward(fake_t, p.d_target)),
                        adversarial_loss_generator(
                            discriminator_forward(fake_s, p.d_source))),
                    0.5);
                Tensor cyc = cycle_loss(zs, generator_forward(fake_t, p.f), xs,
                                        generator_forward(fake_s, p.g));
                Tensor fm = scalar_mul(add(feature_match_loss(fx, xs, fake_t),
                                           feature_match_loss(fx, zs, fake_s)),
                                       0.5);
                Tensor g_loss = combined_objective(w, adv, cyc, fm);
                sum_cycle += finite_or_throw(cyc, "cycle", epoch);
                sum_fm += fm.item();
                sum_g += finite_or_throw(g_loss, "generator", epoch);
                backward(g_loss);
                gen_optim.step();
                p.gen_store.zero_grads();
                p.disc_store.zero_grads();
            } catch (const Error& e) {
                const std::string what = e.what();
                if (what.find(" at epoch ") != std::string::npos) throw;
                throw Error(e.kind(),
                            what + " at epoch " + std::to_string(epoch));
            }
        }
        const double inv = 1.0 / static_cast<double>(steps);
        result.log.push_back({epoch, sum_g * inv, sum_d * inv, sum_cycle * inv,
                              sum_fm * inv});
    }
    return result;
}

} // namespace oseg
