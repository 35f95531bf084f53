#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/optim.hpp"
#include "data/synth.hpp"
#include "gan/train.hpp"
#include "refine/refine.hpp"
#include "sensor/sensor.hpp"

namespace oseg {

// TranslateTrain maps source training imagery toward the target sensor with
// G and retrains the segmenter on the result. TranslateTest keeps the
// source-trained segmenter and maps test imagery back with F instead.
enum class SaMode { TranslateTrain, TranslateTest };

const char* sa_mode_name(SaMode mode);
SaMode sa_mode_from_name(const std::string& name);

// Defaults are the desk-scale recipe: 32px scenes keep two segmenter
// trainings per sensor affordable on CPU. Every random draw derives from
// `seed` by fixed offsets, so a config maps to exactly one report.
struct SaExperimentConfig {
    std::uint64_t seed = 1;
    std::string work_dir;
    std::vector<SensorVariant> sensors{SensorVariant::Grayscale,
                                       SensorVariant::BrgType1,
                                       SensorVariant::BrgType2};
    int scene_count = 16;
    SceneSpec scene{0, 32, 3, 2, 3, 0.25, 8};
    RefineConfig seg{4, 16, UpsampleMode::DirectCopy, 2, 5, 6, true, 400, 4};
    OptimConfig seg_opt{OptKind::Adam, 3e-3};
    GanLossWeights weights;
    int translator_epochs = 20;
    TranslatorTrainOptions translator{8};
    SaMode mode = SaMode::TranslateTrain;
};

struct SaExperimentRow {
    std::string sensor;
    bool adapted = false;
    double miou = 0.0;
    double macro_f1 = 0.0;
    std::int64_t building_pred_count = 0;
    std::int64_t building_truth_count = 0;
    std::int64_t building_difference = 0; // pred - truth
};

struct SaExperimentReport {
    SaExperimentConfig config;
    std::vector<SaExperimentRow> rows; // per sensor: plain row, then adapted
};

// Generates a synthetic source dataset under work_dir, trains the baseline
// segmenter on its train split, and for every sensor evaluates the test
// split under the simulated sensor with and without adaptation. Weight
// files, the adapted datasets, and the source dataset all land in work_dir.
// Progress lines go to *progress when given.
SaExperimentReport run_sa_experiment(const SaExperimentConfig& cfg,
                                     std::ostream* progress = nullptr);

nlohmann::json sa_config_to_json(const SaExperimentConfig& cfg);
// Starts from defaults and overrides the keys present; unknown keys error.
SaExperimentConfig sa_config_from_json(const nlohmann::json& j);
nlohmann::json sa_report_to_json(const SaExperimentReport& report);

} // namespace oseg
