#include "experiment/experiment.hpp"

#include <filesystem>
#include <initializer_list>
#include <ostream>
#include <set>
#include <string>

#include "core/error.hpp"
#include "data/dataset.hpp"
#include "gan/gan.hpp"
#include "metrics/metrics.hpp"
#include "refine/train.hpp"

namespace fs = std::filesystem;

namespace oseg {

namespace {

void note(std::ostream* progress, const std::string& line) {
    if (progress) *progress << line << std::endl;
}

struct EvalResult {
    ConfusionMatrix cm;
    std::int64_t pred_buildings = 0;
    std::int64_t truth_buildings = 0;
};

MaskImage predict_any(Segmenter& model, const RasterImage& img) {
    if (img.width % 16 == 0 && img.height % 16 == 0) {
        return predict(model, img);
    }
    return predict_tiled(model, img, 64, 32);
}

// Runs the test split through the model: images pass through the simulated
// sensor when given, then through the backward generator when given.
EvalResult evaluate_test_split(Segmenter& model, const DatasetManifest& man,
                               const SensorModel* sensor,
                               const TranslatorParams* back) {
    EvalResult r;
    r.cm = ConfusionMatrix(man.class_count());
    for (std::size_t idx : man.split_indices("test")) {
        const ManifestItem& item = man.items[idx];
        RasterImage img = load_image(man.image_path(item));
        MaskImage truth = load_mask(man.mask_path(item));
        if (sensor) img = apply_sensor(img, *sensor);
        if (back) img = translate(img, *back, Direction::TargetToSource);
        MaskImage pred = predict_any(model, img);
        r.cm.merge(accumulate_confusion(pred, truth, man.class_count()));
        BuildingCountReport bc = building_count_report(
            binarize(pred, 1), binarize(truth, 1), Connectivity::Eight);
        r.pred_buildings += bc.pred_count;
        r.truth_buildings += bc.truth_count;
    }
    return r;
}

SaExperimentRow make_row(const char* sensor, bool adapted,
                         const EvalResult& e) {
    SaExperimentRow row;
    row.sensor = sensor;
    row.adapted = adapted;
    row.miou = mean_iou(e.cm);
    row.macro_f1 = macro_f1(e.cm);
    row.building_pred_count = e.pred_buildings;
    row.building_truth_count = e.truth_buildings;
    row.building_difference = e.pred_buildings - e.truth_buildings;
    return row;
}

// Translates every train image toward the target look and writes the result
// as a dataset of its own, masks copied verbatim, names kept.
DatasetManifest write_adapted_dataset(const SaExperimentConfig& cfg,
                                      const DatasetManifest& source,
                                      const TranslatorParams& params,
                                      const char* sensor) {
    const std::string dir = cfg.work_dir + "/" + sensor + "_adapted";
    fs::create_directories(dir);
    DatasetManifest out;
    out.classes = source.classes;
    out.root = dir;
    for (std::size_t idx : source.split_indices("train")) {
        const ManifestItem& item = source.items[idx];
        RasterImage img = load_image(source.image_path(item));
        RasterImage moved = translate(img, params, Direction::SourceToTarget);
        const std::string image_name = fs::path(item.image).filename().string();
        const std::string mask_name = fs::path(item.mask).filename().string();
        save_image(dir + "/" + image_name, moved);
        save_mask(dir + "/" + mask_name, load_mask(source.mask_path(item)));
        out.items.push_back({image_name, mask_name, "train"});
    }
    save_manifest(dir + "/manifest.json", out);
    return out;
}

} // namespace

const char* sa_mode_name(SaMode mode) {
    return mode == SaMode::TranslateTrain ? "translate-train"
                                          : "translate-test";
}

SaMode sa_mode_from_name(const std::string& name) {
    if (name == "translate-train") return SaMode::TranslateTrain;
    if (name == "translate-test") return SaMode::TranslateTest;
    throw_invalid("unknown sa mode '" + name +
                  "' (expected translate-train or translate-test)");
}

SaExperimentReport run_sa_experiment(const SaExperimentConfig& cfg,
                                     std::ostream* progress) {
    if (cfg.work_dir.empty()) {
        throw_invalid("sa-experiment: work_dir is required");
    }
    if (cfg.sensors.empty()) {
        throw_invalid("sa-experiment: needs at least one sensor");
    }
    std::set<int> seen;
    for (SensorVariant v : cfg.sensors) {
        if (!seen.insert(static_cast<int>(v)).second) {
            throw_invalid(std::string("sa-experiment: sensor '") +
                          sensor_name(v) + "' listed twice");
        }
    }
    if (cfg.scene_count < 2) {
        throw_invalid("sa-experiment: needs at least 2 scenes to fill both "
                      "splits");
    }
    fs::create_directories(cfg.work_dir);

    DatasetGenConfig gen;
    gen.seed = cfg.seed;
    gen.count = cfg.scene_count;
    gen.out_dir = cfg.work_dir + "/source";
    gen.scene = cfg.scene;
    DatasetManifest source = generate_synthetic_dataset(gen);
    note(progress, "[sa] source dataset written to " + gen.out_dir);

    note(progress, "[sa] training baseline segmenter (" +
                       std::to_string(cfg.seg.steps) + " steps)");
    TrainedSegmenter base =
        train_segmenter(source, cfg.seg, cfg.seed + 1, cfg.seg_opt);
    save_segmenter(cfg.work_dir + "/segmenter_baseline.weights", base.model);

    std::vector<RasterImage> source_chips;
    for (std::size_t idx : source.split_indices("train")) {
        source_chips.push_back(load_image(source.image_path(source.items[idx])));
    }

    SaExperimentReport report;
    report.config = cfg;
    for (SensorVariant v : cfg.sensors) {
        SensorModel sensor;
        sensor.variant = v;
        const char* name = sensor_name(v);
        const auto vidx = static_cast<std::uint64_t>(v);

        note(progress, std::string("[sa] ") + name +
                           ": evaluating source-trained segmenter");
        EvalResult plain = evaluate_test_split(base.model, source, &sensor,
                                               nullptr);
        report.rows.push_back(make_row(name, false, plain));

        note(progress, std::string("[sa] ") + name + ": training translator (" +
                           std::to_string(cfg.translator_epochs) + " epochs)");
        // Target exemplars are the training scenes pushed through the
        // sensor, so the trainer's row-aligned batches compare each generated
        // image against the degraded rendering of its own scene.
        std::vector<RasterImage> target_chips;
        for (const RasterImage& img : source_chips) {
            target_chips.push_back(apply_sensor(img, sensor));
        }
        TrainedTranslator tt = train_translator(
            source_chips, target_chips, cfg.weights, cfg.translator_epochs,
            cfg.seed + 101 + 10 * vidx, cfg.translator);
        save_translator(cfg.work_dir + "/translator_" + name + ".weights",
                        tt.params);

        EvalResult adapted;
        if (cfg.mode == SaMode::TranslateTrain) {
            note(progress, std::string("[sa] ") + name +
                               ": retraining on translated imagery");
            DatasetManifest moved =
                write_adapted_dataset(cfg, source, tt.params, name);
            TrainedSegmenter sa =
                train_segmenter(moved, cfg.seg, cfg.seed + 201 + 10 * vidx,
                                cfg.seg_opt);
            save_segmenter(cfg.work_dir + "/segmenter_" + name +
                               "_adapted.weights",
                           sa.model);
            adapted = evaluate_test_split(sa.model, source, &sensor, nullptr);
        } else {
            note(progress, std::string("[sa] ") + name +
                               ": evaluating back-translated test imagery");
            adapted = evaluate_test_split(base.model, source, &sensor,
                                          &tt.params);
        }
        report.rows.push_back(make_row(name, true, adapted));
    }
    return report;
}

namespace {

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> allowed,
                const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed) {
            if (it.key() == k) {
                known = true;
                break;
            }
        }
        if (!known) {
            throw_invalid("sa config: unknown key '" + it.key() + "' in " +
                          where);
        }
    }
}

UpsampleMode upsample_from_name(const std::string& name) {
    if (name == "zero-pad") return UpsampleMode::ZeroPad;
    if (name == "direct-copy") return UpsampleMode::DirectCopy;
    throw_invalid("unknown upsample mode '" + name +
                  "' (expected zero-pad or direct-copy)");
}

} // namespace

nlohmann::json sa_config_to_json(const SaExperimentConfig& cfg) {
    nlohmann::json sensors = nlohmann::json::array();
    for (SensorVariant v : cfg.sensors) sensors.push_back(sensor_name(v));
    nlohmann::json scene{
        {"size", cfg.scene.size},
        {"buildings", cfg.scene.buildings},
        {"vehicles", cfg.scene.vehicles},
        {"road_width", cfg.scene.road_width},
        {"vegetation_density", cfg.scene.vegetation_density},
        {"noise_amplitude", cfg.scene.noise_amplitude}};
    nlohmann::json seg{
        {"levels", cfg.seg.levels},
        {"filters", cfg.seg.filters},
        {"upsample", cfg.seg.upsample_mode == UpsampleMode::ZeroPad
                         ? "zero-pad"
                         : "direct-copy"},
        {"scale", cfg.seg.scale},
        {"pool_kernel", cfg.seg.pool_kernel},
        {"classes", cfg.seg.num_classes},
        {"fuse_skips", cfg.seg.fuse_skips},
        {"steps", cfg.seg.steps},
        {"batch_size", cfg.seg.batch_size},
        {"lr", cfg.seg_opt.lr}};
    nlohmann::json translator{
        {"base_filters", cfg.translator.base_filters},
        {"epochs", cfg.translator_epochs},
        {"batch_size", cfg.translator.batch_size},
        {"alpha", cfg.weights.alpha},
        {"lambda", cfg.weights.lambda},
        {"beta", cfg.weights.beta},
        {"gen_lr", cfg.translator.gen_opt.lr},
        {"disc_lr", cfg.translator.disc_opt.lr}};
    return nlohmann::json{{"seed", cfg.seed},
                          {"work_dir", cfg.work_dir},
                          {"sensors", sensors},
                          {"scene_count", cfg.scene_count},
                          {"scene", scene},
                          {"segmenter", seg},
                          {"translator", translator},
                          {"mode", sa_mode_name(cfg.mode)}};
}

SaExperimentConfig sa_config_from_json(const nlohmann::json& j) {
    SaExperimentConfig cfg;
    try {
        if (!j.is_object()) throw_invalid("sa config: expected an object");
        check_keys(j,
                   {"seed", "work_dir", "sensors", "scene_count", "scene",
                    "segmenter", "translator", "mode"},
                   "the top level");
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("work_dir")) {
            cfg.work_dir = j.at("work_dir").get<std::string>();
        }
        if (j.contains("sensors")) {
            cfg.sensors.clear();
            for (const auto& s : j.at("sensors")) {
                cfg.sensors.push_back(
                    sensor_from_name(s.get<std::string>()).variant);
            }
        }
        if (j.contains("scene_count")) {
            cfg.scene_count = j.at("scene_count").get<int>();
        }
        if (j.contains("scene")) {
            const auto& s = j.at("scene");
            check_keys(s,
                       {"size", "buildings", "vehicles", "road_width",
                        "vegetation_density", "noise_amplitude"},
                       "scene");
            if (s.contains("size")) {
                cfg.scene.size = s.at("size").get<std::int64_t>();
            }
            if (s.contains("buildings")) {
                cfg.scene.buildings = s.at("buildings").get<int>();
            }
            if (s.contains("vehicles")) {
                cfg.scene.vehicles = s.at("vehicles").get<int>();
            }
            if (s.contains("road_width")) {
                cfg.scene.road_width = s.at("road_width").get<int>();
            }
            if (s.contains("vegetation_density")) {
                cfg.scene.vegetation_density =
                    s.at("vegetation_density").get<double>();
            }
            if (s.contains("noise_amplitude")) {
                cfg.scene.noise_amplitude = s.at("noise_amplitude").get<int>();
            }
        }
        if (j.contains("segmenter")) {
            const auto& s = j.at("segmenter");
            check_keys(s,
                       {"levels", "filters", "upsample", "scale",
                        "pool_kernel", "classes", "fuse_skips", "steps",
                        "batch_size", "lr"},
                       "segmenter");
            if (s.contains("levels")) {
                cfg.seg.levels = s.at("levels").get<int>();
            }
            if (s.contains("filters")) {
                cfg.seg.filters = s.at("filters").get<int>();
            }
            if (s.contains("upsample")) {
                cfg.seg.upsample_mode =
                    upsample_from_name(s.at("upsample").get<std::string>());
            }
            if (s.contains("scale")) cfg.seg.scale = s.at("scale").get<int>();
            if (s.contains("pool_kernel")) {
                cfg.seg.pool_kernel = s.at("pool_kernel").get<int>();
            }
            if (s.contains("classes")) {
                cfg.seg.num_classes = s.at("classes").get<int>();
            }
            if (s.contains("fuse_skips")) {
                cfg.seg.fuse_skips = s.at("fuse_skips").get<bool>();
            }
            if (s.contains("steps")) cfg.seg.steps = s.at("steps").get<int>();
            if (s.contains("batch_size")) {
                cfg.seg.batch_size = s.at("batch_size").get<int>();
            }
            if (s.contains("lr")) cfg.seg_opt.lr = s.at("lr").get<double>();
        }
        if (j.contains("translator")) {
            const auto& t = j.at("translator");
            check_keys(t,
                       {"base_filters", "epochs", "batch_size", "alpha",
                        "lambda", "beta", "gen_lr", "disc_lr"},
                       "translator");
            if (t.contains("base_filters")) {
                cfg.translator.base_filters =
                    t.at("base_filters").get<std::int64_t>();
            }
            if (t.contains("epochs")) {
                cfg.translator_epochs = t.at("epochs").get<int>();
            }
            if (t.contains("batch_size")) {
                cfg.translator.batch_size = t.at("batch_size").get<int>();
            }
            if (t.contains("alpha")) {
                cfg.weights.alpha = t.at("alpha").get<double>();
            }
            if (t.contains("lambda")) {
                cfg.weights.lambda = t.at("lambda").get<double>();
            }
            if (t.contains("beta")) {
                cfg.weights.beta = t.at("beta").get<double>();
            }
            if (t.contains("gen_lr")) {
                cfg.translator.gen_opt.lr = t.at("gen_lr").get<double>();
            }
            if (t.contains("disc_lr")) {
                cfg.translator.disc_opt.lr = t.at("disc_lr").get<double>();
            }
        }
        if (j.contains("mode")) {
            cfg.mode = sa_mode_from_name(j.at("mode").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw_invalid(std::string("sa config: ") + e.what());
    }
    return cfg;
}

nlohmann::json sa_report_to_json(const SaExperimentReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const SaExperimentRow& row : report.rows) {
        rows.push_back({{"sensor", row.sensor},
                        {"adapted", row.adapted},
                        {"miou", row.miou},
                        {"macro_f1", row.macro_f1},
                        {"building_pred_count", row.building_pred_count},
                        {"building_truth_count", row.building_truth_count},
                        {"building_difference", row.building_difference}});
    }
    return nlohmann::json{{"config", sa_config_to_json(report.config)},
                          {"rows", rows}};
}

} // namespace oseg
