#pragma once

#include <cstdint>
#include <vector>

#include "core/optim.hpp"
#include "gan/gan.hpp"

namespace oseg {

struct TranslatorTrainOptions {
    std::int64_t base_filters = 64;
    int batch_size = 4;
    OptimConfig gen_opt{OptKind::Adam, 2e-4, 0.5};
    OptimConfig disc_opt{OptKind::Adam, 2e-4, 0.5};
};

struct TranslatorEpochLog {
    int epoch = 0; // 1-based
    double loss_g = 0.0;
    double loss_d = 0.0;
    double loss_cycle = 0.0;
    double loss_fm = 0.0;
};

struct TrainedTranslator {
    TranslatorParams params;
    std::vector<TranslatorEpochLog> log; // one entry per epoch
};

// Cycle-consistent adversarial training. Every batch first steps both
// discriminators on frozen generator output, then steps G and F jointly on
// the combined objective. All chips across both sets must share one size
// with dims divisible by 4. Deterministic given the seed; epochs=0 returns
// the freshly initialized translator.
TrainedTranslator train_translator(const std::vector<RasterImage>& source,
                                   const std::vector<RasterImage>& target,
                                   const GanLossWeights& w, int epochs,
                                   std::uint64_t seed,
                                   const TranslatorTrainOptions& opt = {});

} // namespace oseg
