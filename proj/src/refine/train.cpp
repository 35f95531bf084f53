#include "refine/train.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"
#include "data/convert.hpp"
#include "data/tile.hpp"

namespace oseg {

namespace {

struct TrainItem {
    Tensor image; // normalized, (1,3,H,W)
    LabelMap labels;
};

std::vector<TrainItem> load_train_items(const DatasetManifest& manifest) {
    const auto idx = manifest.split_indices("train");
    std::vector<TrainItem> items;
    items.reserve(idx.size());
    std::int64_t h = -1;
    std::int64_t w = -1;
    for (const std::size_t i : idx) {
        const RasterImage img = load_image(manifest.image_path(manifest.items[i]));
        const MaskImage mask = load_mask(manifest.mask_path(manifest.items[i]));
        if (mask.width != img.width || mask.height != img.height) {
            throw_invalid("image and mask dims differ for '" +
                          manifest.items[i].image + "'");
        }
        if (h < 0) {
            h = img.height;
            w = img.width;
            if (h % 16 != 0 || w % 16 != 0) {
                throw_invalid("training images must have dims divisible by 16");
            }
        } else if (img.height != h || img.width != w) {
            throw_invalid("training images must share one size; chip them first");
        }
        TrainItem item;
        item.image = normalize_image_tensor(image_to_tensor(img));
        item.labels = mask_to_labels(mask);
        items.push_back(item);
    }
    return items;
}

} // namespace

TrainedSegmenter train_segmenter(const DatasetManifest& manifest,
                                 const RefineConfig& cfg, std::uint64_t seed,
                                 const OptimConfig& opt) {
    validate_refine_config(cfg);
    const std::vector<TrainItem> items = load_train_items(manifest);
    const std::int64_t h = items.front().image.shape().h;
    const std::int64_t w = items.front().image.shape().w;
    const std::int64_t b = cfg.batch_size;
    const std::int64_t plane = 3 * h * w;

    Rng rng(seed);
    TrainedSegmenter out{build_segmenter(cfg, rng), {}};
    Optimizer optimizer(out.model.store, opt);
    out.losses.reserve(static_cast<std::size_t>(cfg.steps));

    for (int step = 0; step < cfg.steps; ++step) {
        Tensor batch = Tensor::zeros({b, 3, h, w});
        LabelMap labels;
        labels.n = b;
        labels.h = h;
        labels.w = w;
        labels.values.resize(static_cast<std::size_t>(b * h * w));
        for (std::int64_t slot = 0; slot < b; ++slot) {
            const auto& item = items[rng.uniform_index(items.size())];
            std::copy(item.image.data().begin(), item.image.data().end(),
                      batch.data().begin() + slot * plane);
            std::copy(item.labels.values.begin(), item.labels.values.end(),
                      labels.values.begin() + slot * h * w);
        }

        const Tensor logits = segmenter_forward(batch, out.model, BnMode::Train);
        const Tensor loss = softmax_cross_entropy(logits, labels, -1);
        const double value = loss.item();
        if (!std::isfinite(value)) {
            throw_runtime("non-finite loss at step " + std::to_string(step));
        }
        backward(loss);
        optimizer.step();
        optimizer.zero_grads();
        out.losses.push_back(value);
    }
    return out;
}

Tensor predict_logits(Segmenter& model, const Tensor& raw_image) {
    NoGradGuard guard;
    const Tensor norm = normalize_image_tensor(raw_image);
    return segmenter_forward(norm, model, BnMode::Infer);
}

MaskImage predict(Segmenter& model, const RasterImage& image) {
    const Tensor logits = predict_logits(model, image_to_tensor(image));
    return logits_to_mask(logits);
}

MaskImage predict_tiled(Segmenter& model, const RasterImage& image, int chip,
                        int overlap) {
    NoGradGuard guard;
    const auto specs = plan_chips(image.height, image.width, chip, overlap);
    std::vector<Tensor> logits;
    logits.reserve(specs.size());
    for (const auto& spec : specs) {
        const RasterImage piece = extract_chip(image, spec);
        logits.push_back(predict_logits(model, image_to_tensor(piece)));
    }
    const Tensor full = stitch_logits(specs, logits, image.height, image.width);
    return logits_to_mask(full);
}

ConfusionMatrix evaluate_segmenter(Segmenter& model,
                                   const DatasetManifest& manifest,
                                   const std::string& split) {
    const auto idx = manifest.split_indices(split);
    ConfusionMatrix cm(manifest.class_count());
    for (const std::size_t i : idx) {
        const RasterImage img = load_image(manifest.image_path(manifest.items[i]));
        const MaskImage truth = load_mask(manifest.mask_path(manifest.items[i]));
        const MaskImage pred =
            img.height % 16 == 0 && img.width % 16 == 0
                ? predict(model, img)
                : predict_tiled(model, img, 64, 32);
        cm.merge(accumulate_confusion(pred, truth, manifest.class_count()));
    }
    return cm;
}

} // namespace oseg
