#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "oseg/oseg.h"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
    unsigned long long seed = 1;
    bool seed_set = false;
    int threads = 0;
    bool threads_set = false;
    std::string echo_dir;
};

int resolve_threads(const GlobalFlags& g) {
    if (g.threads_set) return g.threads;
    if (const char* env = std::getenv("OSEG_THREADS")) {
        return std::atoi(env);
    }
    return 0;
}

int fail(oseg_status status) {
    std::cerr << "error: " << oseg_last_error() << "\n";
    return status == OSEG_ERR_INVALID_ARGUMENT ? 2 : 1;
}

// Writes <command>_config.json next to the command's output so a run can be
// reproduced from its artifacts alone.
int write_echo(const GlobalFlags& g, const std::string& command,
               const json& flags, const std::vector<std::string>& argv,
               const std::string& dir_anchor, const std::string& file_anchor) {
    fs::path dir;
    if (!g.echo_dir.empty()) {
        dir = g.echo_dir;
    } else if (!dir_anchor.empty()) {
        dir = dir_anchor;
    } else if (!file_anchor.empty()) {
        dir = fs::path(file_anchor).parent_path();
    }
    if (dir.empty()) dir = ".";
    std::error_code ec;
    fs::create_directories(dir, ec);
    json echo{{"command", command}, {"argv", argv}, {"flags", flags}};
    fs::path path = dir / (command + "_config.json");
    std::ofstream f(path, std::ios::binary);
    f << echo.dump(2) << "\n";
    if (!f) {
        std::cerr << "error: cannot write config echo '" << path.string()
                  << "'\n";
        return 1;
    }
    return 0;
}

// Prints the C API's JSON result to stdout or saves it when out_path is set.
int emit_result(char* result, const std::string& out_path) {
    if (!result) return 0;
    std::string body(result);
    oseg_string_free(result);
    if (out_path.empty()) {
        std::cout << body;
        return 0;
    }
    fs::path parent = fs::path(out_path).parent_path();
    if (!parent.empty()) {
        std::error_code ec;
        fs::create_directories(parent, ec);
    }
    std::ofstream f(out_path, std::ios::binary);
    f << body;
    if (!f) {
        std::cerr << "error: cannot write '" << out_path << "'\n";
        return 1;
    }
    return 0;
}

void emit_record(const json& record) { std::cout << record.dump(2) << "\n"; }

std::string read_text_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

// `each` callbacks fire while CLI11 is still validating, before the bound
// variable is assigned, so optional flags are captured by converting the raw
// token here. Unconvertible tokens are left out; CLI11's own type check
// rejects them right after and the command never runs. Callers keep the
// heap-allocated binding target captured in the lambda: the option writes
// its parsed value there, so the storage has to outlive the parse.
void stash(json& slot, const std::string& token, char kind) {
    try {
        if (kind == 'i') {
            slot = std::stoi(token);
        } else if (kind == 'd') {
            slot = std::stod(token);
        } else if (kind == 'b') {
            slot = (token == "true" || token == "1" || token == "on" ||
                    token == "yes");
        } else {
            slot = token;
        }
    } catch (const std::exception&) {
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"overhead imagery segmentation and sensor adaptation"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(OSEG_VERSION));

    GlobalFlags g;
    auto* seed_opt =
        app.add_option("--seed", g.seed, "random seed (default 1)");
    auto* threads_opt =
        app.add_option("--threads", g.threads,
                       "worker threads (0 = hardware default; "
                       "OSEG_THREADS env as fallback)");
    app.add_option("--echo-dir", g.echo_dir,
                   "directory for the config echo file");

    std::vector<std::string> raw_args(argv + 1, argv + argc);
    std::function<int()> runner;

    // simulate-sensor
    {
        auto* cmd = app.add_subcommand("simulate-sensor",
                                       "apply a simulated sensor to an image");
        auto in = std::make_shared<std::string>();
        auto sensor = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--in", *in, "input image (PNG)")->required();
        cmd->add_option("--sensor", *sensor,
                        "sensor name: grayscale, brg1, brg2")
            ->required();
        cmd->add_option("--out", *out, "output image path")->required();
        cmd->callback([&, in, sensor, out] {
            runner = [&, in, sensor, out]() -> int {
                json flags{{"in", *in}, {"sensor", *sensor}, {"out", *out}};
                if (int rc = write_echo(g, "simulate-sensor", flags, raw_args,
                                        "", *out))
                    return rc;
                oseg_status st =
                    oseg_simulate_sensor(in->c_str(), sensor->c_str(),
                                         out->c_str());
                if (st != OSEG_OK) return fail(st);
                emit_record(json{{"command", "simulate-sensor"},
                                 {"input", *in},
                                 {"sensor", *sensor},
                                 {"output", *out}});
                return 0;
            };
        });
    }

    // generate-synthetic
    {
        auto* cmd = app.add_subcommand("generate-synthetic",
                                       "generate a synthetic dataset");
        auto out_dir = std::make_shared<std::string>();
        auto count = std::make_shared<int>(16);
        auto size = std::make_shared<int>(64);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--out-dir", *out_dir, "dataset output directory")
            ->required();
        cmd->add_option("--count", *count, "number of scenes (default 16)");
        cmd->add_option("--size", *size, "scene size in pixels (default 64)");
        cmd->add_option("--out", *out, "write the JSON report here");
        cmd->callback([&, out_dir, count, size, out] {
            runner = [&, out_dir, count, size, out]() -> int {
                json flags{{"out_dir", *out_dir},
                           {"count", *count},
                           {"size", *size},
                           {"seed", g.seed}};
                if (int rc = write_echo(g, "generate-synthetic", flags,
                                        raw_args, *out_dir, ""))
                    return rc;
                char* result = nullptr;
                oseg_status st = oseg_generate_synthetic(
                    out_dir->c_str(), *count, *size, g.seed, &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, *out);
            };
        });
    }

    // train-seg
    {
        auto* cmd =
            app.add_subcommand("train-seg", "train the refinement segmenter");
        auto manifest = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto opts = std::make_shared<json>(json::object());
        cmd->add_option("--manifest", *manifest, "dataset manifest path")
            ->required();
        cmd->add_option("--out", *out, "weights output path")->required();
        auto bind_int = [cmd, opts](const std::string& flag,
                                    const std::string& key,
                                    const std::string& help) {
            auto v = std::make_shared<int>(0);
            cmd->add_option(flag, *v, help)->each(
                [opts, key, v](const std::string& s) {
                    stash((*opts)[key], s, 'i');
                });
        };
        bind_int("--levels", "levels", "refinement levels");
        bind_int("--filters", "filters", "convolution filters per level");
        bind_int("--steps", "steps", "training steps");
        bind_int("--batch-size", "batch_size", "chips per step");
        bind_int("--classes", "classes", "number of classes");
        bind_int("--scale", "scale", "upsample factor per stage");
        bind_int("--pool-kernel", "pool_kernel", "chained pooling kernel");
        {
            auto v = std::make_shared<double>(0);
            cmd->add_option("--lr", *v, "learning rate")
                ->each([opts, v](const std::string& s) {
                    stash((*opts)["lr"], s, 'd');
                });
        }
        {
            auto v = std::make_shared<bool>(true);
            cmd->add_option("--fuse-skips", *v,
                            "fuse encoder skips into refinement (true/false)")
                ->each([opts, v](const std::string& s) {
                    stash((*opts)["fuse_skips"], s, 'b');
                });
        }
        {
            auto v = std::make_shared<std::string>();
            cmd->add_option("--upsample", *v, "zero-pad or direct-copy")
                ->each([opts, v](const std::string& s) {
                    stash((*opts)["upsample"], s, 's');
                });
        }
        cmd->callback([&, manifest, out, opts] {
            runner = [&, manifest, out, opts]() -> int {
                json flags = *opts;
                flags["manifest"] = *manifest;
                flags["out"] = *out;
                flags["seed"] = g.seed;
                if (int rc = write_echo(g, "train-seg", flags, raw_args, "",
                                        *out))
                    return rc;
                const std::string options = opts->dump();
                char* result = nullptr;
                oseg_status st = oseg_train_segmenter(
                    manifest->c_str(), options.c_str(), g.seed, out->c_str(),
                    &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, "");
            };
        });
    }

    // infer
    {
        auto* cmd = app.add_subcommand("infer", "segment an image");
        auto weights = std::make_shared<std::string>();
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto chip = std::make_shared<int>(0);
        auto overlap = std::make_shared<int>(0);
        cmd->add_option("--weights", *weights, "segmenter weights")
            ->required();
        cmd->add_option("--in", *in, "input image (PNG)")->required();
        cmd->add_option("--out", *out, "output mask path")->required();
        cmd->add_option("--chip", *chip,
                        "chip size for tiled inference (0 = whole image)");
        cmd->add_option("--overlap", *overlap, "chip overlap in pixels");
        cmd->callback([&, weights, in, out, chip, overlap] {
            runner = [&, weights, in, out, chip, overlap]() -> int {
                json flags{{"weights", *weights},
                           {"in", *in},
                           {"out", *out},
                           {"chip", *chip},
                           {"overlap", *overlap}};
                if (int rc =
                        write_echo(g, "infer", flags, raw_args, "", *out))
                    return rc;
                oseg_segmenter* model = nullptr;
                oseg_status st = oseg_segmenter_open(weights->c_str(), &model);
                if (st != OSEG_OK) return fail(st);
                st = oseg_segmenter_infer(model, in->c_str(), out->c_str(),
                                          *chip, *overlap);
                oseg_segmenter_close(model);
                if (st != OSEG_OK) return fail(st);
                emit_record(json{{"command", "infer"},
                                 {"weights", *weights},
                                 {"input", *in},
                                 {"output", *out},
                                 {"chip", *chip},
                                 {"overlap", *overlap}});
                return 0;
            };
        });
    }

    // train-adapt
    {
        auto* cmd = app.add_subcommand(
            "train-adapt", "train the sensor adaptation translator");
        auto source_dir = std::make_shared<std::string>();
        auto target_dir = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto opts = std::make_shared<json>(json::object());
        cmd->add_option("--source-dir", *source_dir,
                        "source dataset directory (holds manifest.json)")
            ->required();
        cmd->add_option("--target-dir", *target_dir,
                        "target dataset directory (holds manifest.json)")
            ->required();
        cmd->add_option("--out", *out, "weights output path")->required();
        auto bind = [cmd, opts](const std::string& flag,
                                const std::string& key,
                                const std::string& help, bool integer) {
            const char kind = integer ? 'i' : 'd';
            if (integer) {
                auto v = std::make_shared<int>(0);
                cmd->add_option(flag, *v, help)->each(
                    [opts, key, kind, v](const std::string& s) {
                        stash((*opts)[key], s, kind);
                    });
            } else {
                auto v = std::make_shared<double>(0);
                cmd->add_option(flag, *v, help)->each(
                    [opts, key, kind, v](const std::string& s) {
                        stash((*opts)[key], s, kind);
                    });
            }
        };
        bind("--epochs", "epochs", "training epochs", true);
        bind("--base-filters", "base_filters", "generator base filters", true);
        bind("--batch-size", "batch_size", "images per step", true);
        bind("--alpha", "alpha", "adversarial loss weight", false);
        bind("--lambda", "lambda", "reconstruction loss weight", false);
        bind("--beta", "beta", "cycle share of reconstruction loss", false);
        bind("--gen-lr", "gen_lr", "generator learning rate", false);
        bind("--disc-lr", "disc_lr", "discriminator learning rate", false);
        cmd->callback([&, source_dir, target_dir, out, opts] {
            runner = [&, source_dir, target_dir, out, opts]() -> int {
                json flags = *opts;
                flags["source_dir"] = *source_dir;
                flags["target_dir"] = *target_dir;
                flags["out"] = *out;
                flags["seed"] = g.seed;
                if (int rc = write_echo(g, "train-adapt", flags, raw_args, "",
                                        *out))
                    return rc;
                const std::string options = opts->dump();
                const std::string source = *source_dir + "/manifest.json";
                const std::string target = *target_dir + "/manifest.json";
                char* result = nullptr;
                oseg_status st = oseg_train_translator(
                    source.c_str(), target.c_str(), options.c_str(), g.seed,
                    out->c_str(), &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, "");
            };
        });
    }

    // translate
    {
        auto* cmd = app.add_subcommand("translate",
                                       "apply a trained translator");
        auto weights = std::make_shared<std::string>();
        auto direction = std::make_shared<std::string>("forward");
        auto in = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        cmd->add_option("--weights", *weights, "translator weights")
            ->required();
        cmd->add_option("--direction", *direction, "forward or backward");
        cmd->add_option("--in", *in, "input image (PNG)")->required();
        cmd->add_option("--out", *out, "output image path")->required();
        cmd->callback([&, weights, direction, in, out] {
            runner = [&, weights, direction, in, out]() -> int {
                json flags{{"weights", *weights},
                           {"direction", *direction},
                           {"in", *in},
                           {"out", *out}};
                if (int rc =
                        write_echo(g, "translate", flags, raw_args, "", *out))
                    return rc;
                oseg_translator* t = nullptr;
                oseg_status st = oseg_translator_open(weights->c_str(), &t);
                if (st != OSEG_OK) return fail(st);
                st = oseg_translator_apply(t, direction->c_str(), in->c_str(),
                                           out->c_str());
                oseg_translator_close(t);
                if (st != OSEG_OK) return fail(st);
                emit_record(json{{"command", "translate"},
                                 {"weights", *weights},
                                 {"direction", *direction},
                                 {"input", *in},
                                 {"output", *out}});
                return 0;
            };
        });
    }

    // evaluate
    {
        auto* cmd = app.add_subcommand(
            "evaluate", "compare a predicted mask against ground truth");
        auto pred = std::make_shared<std::string>();
        auto truth = std::make_shared<std::string>();
        auto classes = std::make_shared<int>(6);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--pred", *pred, "predicted mask (PNG)")->required();
        cmd->add_option("--truth", *truth, "ground truth mask (PNG)")
            ->required();
        cmd->add_option("--classes", *classes, "number of classes");
        cmd->add_option("--out", *out, "write the JSON report here");
        cmd->callback([&, pred, truth, classes, out] {
            runner = [&, pred, truth, classes, out]() -> int {
                json flags{{"pred", *pred},
                           {"truth", *truth},
                           {"classes", *classes}};
                if (int rc = write_echo(g, "evaluate", flags, raw_args, "",
                                        *out))
                    return rc;
                char* result = nullptr;
                oseg_status st = oseg_evaluate_masks(
                    pred->c_str(), truth->c_str(), *classes, &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, *out);
            };
        });
    }

    // count-buildings
    {
        auto* cmd = app.add_subcommand(
            "count-buildings", "count connected components of one class");
        auto pred = std::make_shared<std::string>();
        auto truth = std::make_shared<std::string>();
        auto cls = std::make_shared<int>(1);
        auto connectivity = std::make_shared<int>(8);
        auto min_area = std::make_shared<long long>(0);
        auto out = std::make_shared<std::string>();
        cmd->add_option("--pred", *pred, "predicted mask (PNG)")->required();
        cmd->add_option("--truth", *truth, "ground truth mask (PNG)")
            ->required();
        cmd->add_option("--class", *cls, "class index to count (default 1)");
        cmd->add_option("--connectivity", *connectivity, "4 or 8");
        cmd->add_option("--min-area", *min_area,
                        "ignore components smaller than this");
        cmd->add_option("--out", *out, "write the JSON report here");
        cmd->callback([&, pred, truth, cls, connectivity, min_area, out] {
            runner = [&, pred, truth, cls, connectivity, min_area,
                      out]() -> int {
                json flags{{"pred", *pred},
                           {"truth", *truth},
                           {"class", *cls},
                           {"connectivity", *connectivity},
                           {"min_area", *min_area}};
                if (int rc = write_echo(g, "count-buildings", flags, raw_args,
                                        "", *out))
                    return rc;
                char* result = nullptr;
                oseg_status st = oseg_count_buildings(
                    pred->c_str(), truth->c_str(), *cls, *connectivity,
                    *min_area, &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, *out);
            };
        });
    }

    // overlay
    {
        auto* cmd = app.add_subcommand(
            "overlay", "blend class colors over an image");
        auto in = std::make_shared<std::string>();
        auto mask = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto opacity = std::make_shared<double>(0.5);
        cmd->add_option("--in", *in, "input image (PNG)")->required();
        cmd->add_option("--mask", *mask, "class mask (PNG)")->required();
        cmd->add_option("--out", *out, "output image path")->required();
        cmd->add_option("--opacity", *opacity, "blend opacity in [0, 1]");
        cmd->callback([&, in, mask, out, opacity] {
            runner = [&, in, mask, out, opacity]() -> int {
                json flags{{"in", *in},
                           {"mask", *mask},
                           {"out", *out},
                           {"opacity", *opacity}};
                if (int rc =
                        write_echo(g, "overlay", flags, raw_args, "", *out))
                    return rc;
                oseg_status st = oseg_render_overlay(in->c_str(),
                                                     mask->c_str(), *opacity,
                                                     out->c_str());
                if (st != OSEG_OK) return fail(st);
                emit_record(json{{"command", "overlay"},
                                 {"input", *in},
                                 {"mask", *mask},
                                 {"output", *out},
                                 {"opacity", *opacity}});
                return 0;
            };
        });
    }

    // sa-experiment
    {
        auto* cmd = app.add_subcommand(
            "sa-experiment",
            "run the with/without sensor adaptation comparison");
        auto work_dir = std::make_shared<std::string>();
        auto config_path = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto verbose = std::make_shared<bool>(false);
        auto overlays = std::make_shared<json>(json::object());
        cmd->add_option("--work-dir", *work_dir,
                        "directory for datasets and weights");
        cmd->add_option("--config", *config_path,
                        "JSON config file (flags override it)");
        cmd->add_option("--out", *out, "write the JSON report here");
        cmd->add_flag("--verbose", *verbose, "progress to standard error");
        auto bind = [cmd, overlays](const std::string& flag,
                                    const json::json_pointer& key,
                                    const std::string& help, char kind) {
            if (kind == 'i') {
                auto v = std::make_shared<int>(0);
                cmd->add_option(flag, *v, help)->each(
                    [overlays, key, kind, v](const std::string& s) {
                        stash((*overlays)[key], s, kind);
                    });
            } else if (kind == 'd') {
                auto v = std::make_shared<double>(0);
                cmd->add_option(flag, *v, help)->each(
                    [overlays, key, kind, v](const std::string& s) {
                        stash((*overlays)[key], s, kind);
                    });
            } else {
                auto v = std::make_shared<std::string>();
                cmd->add_option(flag, *v, help)->each(
                    [overlays, key, kind, v](const std::string& s) {
                        stash((*overlays)[key], s, kind);
                    });
            }
        };
        bind("--scene-count", json::json_pointer("/scene_count"),
             "number of scenes", 'i');
        bind("--scene-size", json::json_pointer("/scene/size"),
             "scene size in pixels", 'i');
        bind("--scene-buildings", json::json_pointer("/scene/buildings"),
             "buildings per scene", 'i');
        bind("--scene-vehicles", json::json_pointer("/scene/vehicles"),
             "vehicles per scene", 'i');
        bind("--seg-steps", json::json_pointer("/segmenter/steps"),
             "segmenter training steps", 'i');
        bind("--seg-filters", json::json_pointer("/segmenter/filters"),
             "segmenter filters", 'i');
        bind("--seg-lr", json::json_pointer("/segmenter/lr"),
             "segmenter learning rate", 'd');
        bind("--gan-epochs", json::json_pointer("/translator/epochs"),
             "translator training epochs", 'i');
        bind("--gan-filters", json::json_pointer("/translator/base_filters"),
             "translator base filters", 'i');
        bind("--alpha", json::json_pointer("/translator/alpha"),
             "adversarial loss weight", 'd');
        bind("--beta", json::json_pointer("/translator/beta"),
             "cycle share of reconstruction loss", 'd');
        bind("--mode", json::json_pointer("/mode"),
             "translate-train or translate-test", 's');
        auto sensors = std::make_shared<std::vector<std::string>>();
        cmd->add_option("--sensors", *sensors,
                        "comma-separated sensor names")
            ->delimiter(',');
        cmd->callback([&, work_dir, config_path, out, verbose, overlays,
                       sensors] {
            runner = [&, work_dir, config_path, out, verbose, overlays,
                      sensors]() -> int {
                json cfg = json::object();
                if (!config_path->empty()) {
                    try {
                        cfg = json::parse(read_text_file(*config_path));
                    } catch (const std::exception& e) {
                        std::cerr << "error: " << e.what() << "\n";
                        return 2;
                    }
                }
                cfg.update(*overlays, true);
                if (!work_dir->empty()) cfg["work_dir"] = *work_dir;
                if (!sensors->empty()) cfg["sensors"] = *sensors;
                if (g.seed_set || !cfg.contains("seed")) cfg["seed"] = g.seed;
                json flags = cfg;
                if (int rc = write_echo(g, "sa-experiment", flags, raw_args,
                                        *work_dir, *out))
                    return rc;
                const std::string body = cfg.dump();
                char* result = nullptr;
                oseg_status st = oseg_run_sa_experiment(
                    body.c_str(), *verbose ? 1 : 0, &result);
                if (st != OSEG_OK) return fail(st);
                return emit_result(result, *out);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help() << std::flush;
        return 2;
    }

    g.seed_set = seed_opt->count() > 0;
    g.threads_set = threads_opt->count() > 0;
    oseg_set_threads(resolve_threads(g));

    if (!runner) {
        std::cerr << app.help() << std::flush;
        return 2;
    }
    return runner();
}
