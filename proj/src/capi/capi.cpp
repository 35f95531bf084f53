#include "oseg/oseg.h"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/error.hpp"
#include "core/threads.hpp"
#include "data/dataset.hpp"
#include "data/synth.hpp"
#include "experiment/experiment.hpp"
#include "gan/gan.hpp"
#include "gan/train.hpp"
#include "image/image.hpp"
#include "image/overlay.hpp"
#include "metrics/metrics.hpp"
#include "refine/refine.hpp"
#include "refine/train.hpp"
#include "sensor/sensor.hpp"

using nlohmann::json;

struct oseg_segmenter {
    oseg::Segmenter model;
};

struct oseg_translator {
    oseg::TranslatorParams params;
};

namespace {

thread_local std::string t_error;

oseg_status from_kind(oseg::ErrorKind kind) {
    switch (kind) {
        case oseg::ErrorKind::InvalidArgument:
            return OSEG_ERR_INVALID_ARGUMENT;
        case oseg::ErrorKind::Io:
            return OSEG_ERR_IO;
        default:
            return OSEG_ERR_RUNTIME;
    }
}

template <class F>
oseg_status guard(F&& body) {
    try {
        body();
        t_error.clear();
        return OSEG_OK;
    } catch (const oseg::Error& e) {
        t_error = e.what();
        return from_kind(e.kind());
    } catch (const json::exception& e) {
        t_error = e.what();
        return OSEG_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        t_error = e.what();
        return OSEG_ERR_RUNTIME;
    }
}

oseg_status fail_invalid(const std::string& msg) {
    t_error = msg;
    return OSEG_ERR_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out) std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void emit(char** result_json, const json& j) {
    if (result_json) *result_json = dup_string(j.dump(2) + "\n");
}

// Parses a subcommand option string by wrapping it into the experiment
// config schema, so option keys and defaults stay in one place.
oseg::SaExperimentConfig wrap_options(const char* options_json,
                                      const char* section) {
    json wrapped = json::object();
    if (options_json && *options_json) {
        wrapped[section] = json::parse(options_json);
    }
    return oseg::sa_config_from_json(wrapped);
}

void write_json_lines(const std::string& path,
                      const std::vector<json>& lines) {
    std::ofstream f(path, std::ios::binary);
    if (!f) oseg::throw_io("cannot open '" + path + "' for writing");
    for (const json& line : lines) f << line.dump() << "\n";
    f.flush();
    if (!f) oseg::throw_io("failed writing '" + path + "'");
}

std::vector<oseg::RasterImage> train_split_images(const std::string& path) {
    oseg::DatasetManifest m = oseg::load_manifest(path);
    std::vector<oseg::RasterImage> out;
    for (std::size_t idx : m.split_indices("train")) {
        out.push_back(oseg::load_image(m.image_path(m.items[idx])));
    }
    return out;
}

json number_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

} // namespace

extern "C" {

const char* oseg_version(void) { return OSEG_VERSION; }

const char* oseg_last_error(void) { return t_error.c_str(); }

void oseg_set_threads(int n) { oseg::set_threads(n); }

void oseg_string_free(char* s) { std::free(s); }

oseg_status oseg_simulate_sensor(const char* image_in, const char* sensor,
                                 const char* image_out) {
    if (!image_in || !sensor || !image_out) {
        return fail_invalid("simulate_sensor: null argument");
    }
    return guard([&] {
        oseg::SensorModel model = oseg::sensor_from_name(sensor);
        oseg::RasterImage img = oseg::load_image(image_in);
        oseg::save_image(image_out, oseg::apply_sensor(img, model));
    });
}

oseg_status oseg_generate_synthetic(const char* out_dir, int count, int size,
                                    unsigned long long seed,
                                    char** result_json) {
    if (!out_dir) return fail_invalid("generate_synthetic: null out_dir");
    return guard([&] {
        oseg::DatasetGenConfig cfg;
        cfg.seed = seed;
        cfg.count = count;
        cfg.out_dir = out_dir;
        cfg.scene.size = size;
        oseg::DatasetManifest m = oseg::generate_synthetic_dataset(cfg);
        int train = 0, test = 0;
        for (const auto& item : m.items) {
            (item.split == "train" ? train : test) += 1;
        }
        emit(result_json,
             json{{"manifest", std::string(out_dir) + "/manifest.json"},
                  {"count", count},
                  {"size", size},
                  {"seed", seed},
                  {"train_items", train},
                  {"test_items", test}});
    });
}

oseg_status oseg_render_overlay(const char* image_in, const char* mask_in,
                                double opacity, const char* image_out) {
    if (!image_in || !mask_in || !image_out) {
        return fail_invalid("render_overlay: null argument");
    }
    return guard([&] {
        oseg::RasterImage img = oseg::load_image(image_in);
        oseg::MaskImage mask = oseg::load_mask(mask_in);
        oseg::Palette palette;
        for (const auto& cls : oseg::default_classes()) {
            palette.push_back(cls.color);
        }
        oseg::save_image(image_out,
                         oseg::render_overlay(img, mask, palette, opacity));
    });
}

oseg_status oseg_evaluate_masks(const char* pred_path, const char* truth_path,
                                int classes, char** result_json) {
    if (!pred_path || !truth_path) {
        return fail_invalid("evaluate_masks: null argument");
    }
    return guard([&] {
        if (classes < 1) {
            oseg::throw_invalid("evaluate: classes must be >= 1, got " +
                                std::to_string(classes));
        }
        oseg::MaskImage pred = oseg::load_mask(pred_path);
        oseg::MaskImage truth = oseg::load_mask(truth_path);
        oseg::ConfusionMatrix cm =
            oseg::accumulate_confusion(pred, truth, classes);
        std::vector<double> iou = oseg::iou_per_class(cm);
        std::vector<double> f1 = oseg::f1_scores(cm);
        json per_class = json::array();
        for (int c = 0; c < classes; ++c) {
            per_class.push_back({{"class", c},
                                 {"iou", number_or_null(iou[std::size_t(c)])},
                                 {"f1", number_or_null(f1[std::size_t(c)])}});
        }
        emit(result_json, json{{"classes", classes},
                               {"miou", number_or_null(oseg::mean_iou(cm))},
                               {"macro_f1", number_or_null(oseg::macro_f1(cm))},
                               {"ignored_pixels", cm.ignored},
                               {"per_class", per_class}});
    });
}

oseg_status oseg_count_buildings(const char* pred_path, const char* truth_path,
                                 int class_index, int connectivity,
                                 long long min_area, char** result_json) {
    if (!pred_path || !truth_path) {
        return fail_invalid("count_buildings: null argument");
    }
    return guard([&] {
        if (connectivity != 4 && connectivity != 8) {
            oseg::throw_invalid("count_buildings: connectivity must be 4 or "
                                "8, got " +
                                std::to_string(connectivity));
        }
        if (class_index < 0 || class_index > 255) {
            oseg::throw_invalid("count_buildings: class index out of range");
        }
        oseg::MaskImage pred = oseg::load_mask(pred_path);
        oseg::MaskImage truth = oseg::load_mask(truth_path);
        oseg::Connectivity conn = connectivity == 4
                                      ? oseg::Connectivity::Four
                                      : oseg::Connectivity::Eight;
        oseg::BuildingCountReport report = oseg::building_count_report(
            oseg::binarize(pred, class_index),
            oseg::binarize(truth, class_index), conn, min_area);
        emit(result_json, json{{"class", class_index},
                               {"connectivity", connectivity},
                               {"min_area", min_area},
                               {"pred_count", report.pred_count},
                               {"truth_count", report.truth_count},
                               {"difference", report.difference}});
    });
}

oseg_status oseg_train_segmenter(const char* manifest_path,
                                 const char* options_json,
                                 unsigned long long seed,
                                 const char* weights_out, char** result_json) {
    if (!manifest_path || !weights_out) {
        return fail_invalid("train_segmenter: null argument");
    }
    return guard([&] {
        oseg::SaExperimentConfig opts = wrap_options(options_json, "segmenter");
        oseg::DatasetManifest manifest = oseg::load_manifest(manifest_path);
        oseg::TrainedSegmenter trained =
            oseg::train_segmenter(manifest, opts.seg, seed, opts.seg_opt);
        oseg::save_segmenter(weights_out, trained.model);
        std::vector<json> lines;
        for (std::size_t i = 0; i < trained.losses.size(); ++i) {
            lines.push_back(json{{"step", i + 1}, {"loss", trained.losses[i]}});
        }
        const std::string log_path = std::string(weights_out) + ".log.jsonl";
        write_json_lines(log_path, lines);
        json result{{"weights", weights_out},
                    {"loss_log", log_path},
                    {"steps", trained.losses.size()}};
        if (!trained.losses.empty()) {
            result["final_loss"] = trained.losses.back();
        }
        emit(result_json, result);
    });
}

oseg_status oseg_train_translator(const char* source_manifest,
                                  const char* target_manifest,
                                  const char* options_json,
                                  unsigned long long seed,
                                  const char* weights_out,
                                  char** result_json) {
    if (!source_manifest || !target_manifest || !weights_out) {
        return fail_invalid("train_translator: null argument");
    }
    return guard([&] {
        oseg::SaExperimentConfig opts =
            wrap_options(options_json, "translator");
        std::vector<oseg::RasterImage> source =
            train_split_images(source_manifest);
        std::vector<oseg::RasterImage> target =
            train_split_images(target_manifest);
        oseg::TrainedTranslator trained =
            oseg::train_translator(source, target, opts.weights,
                                   opts.translator_epochs, seed,
                                   opts.translator);
        oseg::save_translator(weights_out, trained.params);
        std::vector<json> lines;
        for (const auto& entry : trained.log) {
            lines.push_back(json{{"epoch", entry.epoch},
                                 {"loss_g", entry.loss_g},
                                 {"loss_d", entry.loss_d},
                                 {"loss_cycle", entry.loss_cycle},
                                 {"loss_fm", entry.loss_fm}});
        }
        const std::string log_path = std::string(weights_out) + ".log.jsonl";
        write_json_lines(log_path, lines);
        json result{{"weights", weights_out},
                    {"loss_log", log_path},
                    {"epochs", trained.log.size()}};
        if (!trained.log.empty()) {
            const auto& last = trained.log.back();
            result["final"] = json{{"loss_g", last.loss_g},
                                   {"loss_d", last.loss_d},
                                   {"loss_cycle", last.loss_cycle},
                                   {"loss_fm", last.loss_fm}};
        }
        emit(result_json, result);
    });
}

oseg_status oseg_run_sa_experiment(const char* config_json, int verbose,
                                   char** report_json) {
    return guard([&] {
        json parsed = json::object();
        if (config_json && *config_json) parsed = json::parse(config_json);
        oseg::SaExperimentConfig cfg = oseg::sa_config_from_json(parsed);
        oseg::SaExperimentReport report =
            oseg::run_sa_experiment(cfg, verbose ? &std::cerr : nullptr);
        emit(report_json, oseg::sa_report_to_json(report));
    });
}

oseg_status oseg_segmenter_open(const char* weights_path,
                                oseg_segmenter** out) {
    if (!weights_path || !out) {
        return fail_invalid("segmenter_open: null argument");
    }
    return guard([&] {
        *out = new oseg_segmenter{oseg::load_segmenter(weights_path)};
    });
}

void oseg_segmenter_close(oseg_segmenter* s) { delete s; }

oseg_status oseg_segmenter_infer(oseg_segmenter* s, const char* image_in,
                                 const char* mask_out, int chip,
                                 int overlap) {
    if (!s || !image_in || !mask_out) {
        return fail_invalid("segmenter_infer: null argument");
    }
    return guard([&] {
        oseg::RasterImage img = oseg::load_image(image_in);
        oseg::MaskImage mask =
            chip > 0 ? oseg::predict_tiled(s->model, img, chip, overlap)
                     : oseg::predict(s->model, img);
        oseg::save_mask(mask_out, mask);
    });
}

oseg_status oseg_translator_open(const char* weights_path,
                                 oseg_translator** out) {
    if (!weights_path || !out) {
        return fail_invalid("translator_open: null argument");
    }
    return guard([&] {
        *out = new oseg_translator{oseg::load_translator(weights_path)};
    });
}

void oseg_translator_close(oseg_translator* t) { delete t; }

oseg_status oseg_translator_apply(oseg_translator* t, const char* direction,
                                  const char* image_in,
                                  const char* image_out) {
    if (!t || !direction || !image_in || !image_out) {
        return fail_invalid("translator_apply: null argument");
    }
    const std::string dir = direction;
    if (dir != "forward" && dir != "backward") {
        return fail_invalid("translator_apply: direction must be 'forward' "
                            "or 'backward', got '" +
                            dir + "'");
    }
    return guard([&] {
        oseg::RasterImage img = oseg::load_image(image_in);
        oseg::Direction d = dir == "forward" ? oseg::Direction::SourceToTarget
                                             : oseg::Direction::TargetToSource;
        oseg::save_image(image_out, oseg::translate(img, t->params, d));
    });
}

} // extern "C"
