#pragma once

#include <cstdint>
#include <vector>

#include "image/image.hpp"

namespace oseg {

// counts[truth * k + pred]; pixels whose truth equals the ignore value are
// tallied only in `ignored`.
struct ConfusionMatrix {
    int k = 0;
    std::vector<std::int64_t> counts;
    std::int64_t ignored = 0;

    explicit ConfusionMatrix(int classes = 0)
        : k(classes),
          counts(static_cast<std::size_t>(classes) * classes, 0) {}

    std::int64_t at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * k + pred];
    }
    std::int64_t& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * k + pred];
    }
    std::int64_t total() const;
    void merge(const ConfusionMatrix& other);
};

ConfusionMatrix accumulate_confusion(const MaskImage& pred,
                                     const MaskImage& truth, int k,
                                     int ignore_index = kMaskIgnore);

// IoU_c = TP / (TP + FP + FN); classes with an empty union get NaN in the
// per-class vector and are excluded from the mean.
std::vector<double> iou_per_class(const ConfusionMatrix& cm);
double mean_iou(const ConfusionMatrix& cm);

// F1_c = 2TP / (2TP + FP + FN), zero when the denominator is zero. The macro
// mean runs over classes present in truth.
std::vector<double> f1_scores(const ConfusionMatrix& cm);
double macro_f1(const ConfusionMatrix& cm);

enum class Connectivity { Four, Eight };

struct ComponentLabeling {
    std::int64_t width = 0;
    std::int64_t height = 0;
    std::vector<std::int32_t> labels; // 0 = background, components from 1
    std::int32_t count = 0;
    std::vector<std::int64_t> areas; // indexed by label - 1
};

// Any nonzero mask value is foreground. Components smaller than min_area are
// dropped and the rest relabeled contiguously in first-encounter order.
ComponentLabeling label_components(const MaskImage& binary, Connectivity conn,
                                   std::int64_t min_area = 0);

// Extracts class_index pixels as a binary mask.
MaskImage binarize(const MaskImage& mask, int class_index);

struct BuildingCountReport {
    std::int64_t pred_count = 0;
    std::int64_t truth_count = 0;
    std::int64_t difference = 0; // pred - truth, signed
};

BuildingCountReport building_count_report(const MaskImage& pred_binary,
                                          const MaskImage& truth_binary,
                                          Connectivity conn,
                                          std::int64_t min_area = 0);

} // namespace oseg
