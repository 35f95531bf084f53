#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/layers.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "image/image.hpp"

namespace oseg {

struct GanLossWeights {
    double alpha = 1.0;
    double lambda = 10.0;
    double beta = 0.9; // share of the content budget spent on cycle loss
};

void validate_gan_weights(const GanLossWeights& w);

// Probabilities are clamped to [kProbEps, 1 - kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

// mean log(1 - d_fake) over every patch score.
Tensor adversarial_loss_generator(const Tensor& d_fake);

// -mean(log d_real) - mean(log(1 - d_fake)).
Tensor adversarial_loss_discriminator(const Tensor& d_real,
                                      const Tensor& d_fake);

// mean|fgz - z| + mean|gfx - x|; both reconstruction pairs must be
// shape-matched.
Tensor cycle_loss(const Tensor& z, const Tensor& fgz, const Tensor& x,
                  const Tensor& gfx);

// alpha * adv + lambda * (beta * cycle + (1 - beta) * fm), in exactly that
// association. The tensor overload builds the same value on the graph.
double combined_objective(const GanLossWeights& w, double adv, double cycle,
                          double fm);
Tensor combined_objective(const GanLossWeights& w, const Tensor& adv,
                          const Tensor& cycle, const Tensor& fm);

enum class FeatureExtractorKind { ToyFixedSeed, External };

// Frozen conv stack mapping a normalized image tensor to a feature tensor.
// ReLU sits between layers; the last layer stays linear. Weights never take
// gradient steps, but input gradients flow through.
struct FeatureExtractor {
    FeatureExtractorKind kind = FeatureExtractorKind::ToyFixedSeed;
    ParamStore store;
    std::vector<ConvWeights> layers;
    std::vector<int> strides;
};

// Three grouped 3x3 layers (3->6->12->12, strides 1/2/2) drawn from a fixed
// seed, so every build extracts identical features. Grouping keeps a separate
// feature stack per input band; see the definition for why.
FeatureExtractor make_toy_feature_extractor();

void save_feature_extractor(const std::string& path,
                            const FeatureExtractor& fx);
FeatureExtractor load_feature_extractor(const std::string& path);

Tensor extract_features(const FeatureExtractor& fx, const Tensor& image_norm);

// mean absolute feature difference between two same-sized images.
Tensor feature_match_loss(const FeatureExtractor& fx, const Tensor& target_norm,
                          const Tensor& generated_norm);
double feature_match_loss(const FeatureExtractor& fx, const RasterImage& target,
                          const RasterImage& generated);

// Translator generator: two stride-2 encoder convs, two residual blocks, two
// upsample-conv decoder stages, then a 3x3 head whose output is added back to
// the input. A final 1x1 channel-mixing conv (identity at init) sits between
// the residual sum and the [-1, 1] clamp, so global color maps like channel
// swaps or grayscale collapse live in nine dedicated weights instead of being
// spread across the texture stack. No normalization layers anywhere.
struct GeneratorNet {
    ConvWeights enc1, enc2;
    ConvWeights res1a, res1b, res2a, res2b;
    ConvWeights dec1, dec2;
    ConvWeights out;
    ConvWeights mix;
};

// Patch discriminator: three stride-2 convs with leaky ReLU and a 1x1 head
// squashed to (0, 1) per patch.
struct DiscriminatorNet {
    ConvWeights c1, c2, c3, head;
};

enum class Direction { SourceToTarget, TargetToSource };

// G translates source->target, F target->source; each domain gets its own
// discriminator. Generators live in gen_store, discriminators in disc_store,
// so the two training phases can step disjoint optimizers.
struct TranslatorParams {
    std::int64_t base_filters = 64;
    ParamStore gen_store;
    ParamStore disc_store;
    GeneratorNet g;
    GeneratorNet f;
    DiscriminatorNet d_target;
    DiscriminatorNet d_source;
};

// identity_init zeroes the output convs of G and F, which makes the untrained
// translator an exact identity on normalized inputs.
TranslatorParams build_translator(std::int64_t base_filters, bool identity_init,
                                  Rng& rng);
TranslatorParams build_translator(std::int64_t base_filters, bool identity_init,
                                  std::uint64_t seed);

void save_translator(const std::string& path, const TranslatorParams& params);
TranslatorParams load_translator(const std::string& path);

// Inputs are normalized (N,3,H,W) tensors with H and W divisible by 4.
Tensor generator_forward(const Tensor& x, const GeneratorNet& g);
Tensor discriminator_forward(const Tensor& x, const DiscriminatorNet& d);

RasterImage translate(const RasterImage& img, const TranslatorParams& params,
                      Direction direction);

} // namespace oseg
