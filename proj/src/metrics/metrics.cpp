#include "metrics/metrics.hpp"

#include <cmath>
#include <limits>

#include "core/error.hpp"

namespace oseg {

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (std::int64_t v : counts) {
        t += v;
    }
    return t;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k != k) {
        throw_invalid("confusion: cannot merge matrices with k=" +
                      std::to_string(k) + " and k=" + std::to_string(other.k));
    }
    for (std::size_t i = 0; i < counts.size(); ++i) {
        counts[i] += other.counts[i];
    }
    ignored += other.ignored;
}

ConfusionMatrix accumulate_confusion(const MaskImage& pred,
                                     const MaskImage& truth, int k,
                                     int ignore_index) {
    if (pred.width != truth.width || pred.height != truth.height) {
        throw_invalid("confusion: mask dimensions differ: " +
                      std::to_string(pred.width) + "x" +
                      std::to_string(pred.height) + " vs " +
                      std::to_string(truth.width) + "x" +
                      std::to_string(truth.height));
    }
    if (k <= 0) {
        throw_invalid("confusion: class count must be positive");
    }
    ConfusionMatrix cm(k);
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        const int t = truth.values[i];
        const int p = pred.values[i];
        if (t == ignore_index) {
            ++cm.ignored;
            continue;
        }
        if (t >= k) {
            throw_invalid("confusion: truth value " + std::to_string(t) +
                          " out of range for k=" + std::to_string(k));
        }
        if (p >= k) {
            throw_invalid("confusion: predicted value " + std::to_string(p) +
                          " out of range for k=" + std::to_string(k));
        }
        ++cm.at(t, p);
    }
    return cm;
}

namespace {

struct ClassTallies {
    std::int64_t tp = 0, fp = 0, fn = 0;
};

std::vector<ClassTallies> tallies(const ConfusionMatrix& cm) {
    std::vector<ClassTallies> out(static_cast<std::size_t>(cm.k));
    for (int c = 0; c < cm.k; ++c) {
        auto& t = out[static_cast<std::size_t>(c)];
        t.tp = cm.at(c, c);
        for (int j = 0; j < cm.k; ++j) {
            if (j != c) {
                t.fn += cm.at(c, j);
                t.fp += cm.at(j, c);
            }
        }
    }
    return out;
}

} // namespace

std::vector<double> iou_per_class(const ConfusionMatrix& cm) {
    std::vector<double> out(static_cast<std::size_t>(cm.k));
    const auto ts = tallies(cm);
    for (int c = 0; c < cm.k; ++c) {
        const auto& t = ts[static_cast<std::size_t>(c)];
        const std::int64_t uni = t.tp + t.fp + t.fn;
        out[static_cast<std::size_t>(c)] =
            uni == 0 ? std::numeric_limits<double>::quiet_NaN()
                     : static_cast<double>(t.tp) / static_cast<double>(uni);
    }
    return out;
}

double mean_iou(const ConfusionMatrix& cm) {
    const auto ious = iou_per_class(cm);
    double sum = 0.0;
    int n = 0;
    for (double v : ious) {
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    }
    if (n == 0) {
        throw_invalid("mean_iou: every class union is empty");
    }
    return sum / n;
}

std::vector<double> f1_scores(const ConfusionMatrix& cm) {
    std::vector<double> out(static_cast<std::size_t>(cm.k));
    const auto ts = tallies(cm);
    for (int c = 0; c < cm.k; ++c) {
        const auto& t = ts[static_cast<std::size_t>(c)];
        const std::int64_t denom = 2 * t.tp + t.fp + t.fn;
        out[static_cast<std::size_t>(c)] =
            denom == 0 ? 0.0
                       : 2.0 * static_cast<double>(t.tp) /
                             static_cast<double>(denom);
    }
    return out;
}

double macro_f1(const ConfusionMatrix& cm) {
    const auto f1 = f1_scores(cm);
    double sum = 0.0;
    int n = 0;
    for (int c = 0; c < cm.k; ++c) {
        std::int64_t truth_pixels = 0;
        for (int j = 0; j < cm.k; ++j) {
            truth_pixels += cm.at(c, j);
        }
        if (truth_pixels > 0) {
            sum += f1[static_cast<std::size_t>(c)];
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / n;
}

ComponentLabeling label_components(const MaskImage& binary, Connectivity conn,
                                   std::int64_t min_area) {
    if (min_area < 0) {
        throw_invalid("components: min_area must be >= 0");
    }
    const std::int64_t w = binary.width;
    const std::int64_t h = binary.height;
    ComponentLabeling out;
    out.width = w;
    out.height = h;
    out.labels.assign(static_cast<std::size_t>(w * h), 0);

    static constexpr std::int64_t kDy8[8] = {-1, -1, -1, 0, 0, 1, 1, 1};
    static constexpr std::int64_t kDx8[8] = {-1, 0, 1, -1, 1, -1, 0, 1};
    static constexpr std::int64_t kDy4[4] = {-1, 0, 0, 1};
    static constexpr std::int64_t kDx4[4] = {0, -1, 1, 0};
    const std::int64_t* dy = conn == Connectivity::Eight ? kDy8 : kDy4;
    const std::int64_t* dx = conn == Connectivity::Eight ? kDx8 : kDx4;
    const int ndirs = conn == Connectivity::Eight ? 8 : 4;

    std::vector<std::int64_t> stack;
    std::vector<std::int64_t> raw_areas;
    std::int32_t next = 0;
    for (std::int64_t start = 0; start < w * h; ++start) {
        if (binary.values[static_cast<std::size_t>(start)] == 0 ||
            out.labels[static_cast<std::size_t>(start)] != 0) {
            continue;
        }
        ++next;
        std::int64_t area = 0;
        stack.clear();
        stack.push_back(start);
        out.labels[static_cast<std::size_t>(start)] = next;
        while (!stack.empty()) {
            const std::int64_t p = stack.back();
            stack.pop_back();
            ++area;
            const std::int64_t py = p / w;
            const std::int64_t px = p % w;
            for (int d = 0; d < ndirs; ++d) {
                const std::int64_t ny = py + dy[d];
                const std::int64_t nx = px + dx[d];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
                    continue;
                }
                const std::int64_t np = ny * w + nx;
                if (binary.values[static_cast<std::size_t>(np)] != 0 &&
                    out.labels[static_cast<std::size_t>(np)] == 0) {
                    out.labels[static_cast<std::size_t>(np)] = next;
                    stack.push_back(np);
                }
            }
        }
        raw_areas.push_back(area);
    }

    // Drop small components and compact the label range.
    std::vector<std::int32_t> remap(raw_areas.size() + 1, 0);
    std::int32_t kept = 0;
    for (std::size_t l = 1; l <= raw_areas.size(); ++l) {
        if (raw_areas[l - 1] >= min_area) {
            remap[l] = ++kept;
            out.areas.push_back(raw_areas[l - 1]);
        }
    }
    if (kept != next) {
        for (auto& l : out.labels) {
            l = remap[static_cast<std::size_t>(l)];
        }
    }
    out.count = kept;
    return out;
}

MaskImage binarize(const MaskImage& mask, int class_index) {
    MaskImage out = make_mask(mask.width, mask.height);
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        out.values[i] = mask.values[i] == class_index ? 1 : 0;
    }
    return out;
}

BuildingCountReport building_count_report(const MaskImage& pred_binary,
                                          const MaskImage& truth_binary,
                                          Connectivity conn,
                                          std::int64_t min_area) {
    if (pred_binary.width != truth_binary.width ||
        pred_binary.height != truth_binary.height) {
        throw_invalid("building count: mask dimensions differ");
    }
    BuildingCountReport r;
    r.pred_count = label_components(pred_binary, conn, min_area).count;
    r.truth_count = label_components(truth_binary, conn, min_area).count;
    r.difference = r.pred_count - r.truth_count;
    return r;
}

} // namespace oseg
