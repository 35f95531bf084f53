#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "schema_check.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string temp_dir(const char* name) {
    fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    fs::path dir = fs::temp_directory_path() / "oseg_cli_io";
    fs::create_directories(dir);
    fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
    fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
    ++counter;
    std::string cmd = std::string(OSEG_CLI_PATH) + " " + args + " >" +
                      out.string() + " 2>" + err.string();
    int raw = std::system(cmd.c_str());
    RunResult r;
    r.code = (raw >= 0 && WIFEXITED(raw)) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

json schema(const char* name) {
    std::ifstream in(fs::path(OSEG_SCHEMA_DIR) / name);
    REQUIRE(in.good());
    return json::parse(in);
}

void check_schema(const char* name, const json& doc) {
    for (const auto& e : schema_check::validate(schema(name), doc)) {
        FAIL_CHECK(name << ": " << e);
    }
}

} // namespace

TEST_CASE("version and argument errors") {
    RunResult v = run_cli("--version");
    CHECK(v.code == 0);
    CHECK(v.out.find("0.1.0") != std::string::npos);

    CHECK(run_cli("").code == 2);
    CHECK(run_cli("frobnicate").code == 2);
    RunResult missing = run_cli("simulate-sensor --in a.png");
    CHECK(missing.code == 2);
    CHECK_FALSE(missing.err.empty());

    RunResult help = run_cli("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("sa-experiment") != std::string::npos);
}

TEST_CASE("generate evaluate count pipeline with config echoes") {
    const std::string dir = temp_dir("oseg_cli_pipe");
    RunResult gen = run_cli("generate-synthetic --out-dir " + dir +
                            " --count 4 --size 32 --seed 7");
    REQUIRE(gen.code == 0);
    json genj = json::parse(gen.out);
    check_schema("generate_synthetic.json", genj);
    CHECK(fs::exists(dir + "/generate-synthetic_config.json"));
    json echo = json::parse(slurp(dir + "/generate-synthetic_config.json"));
    CHECK(echo["command"] == "generate-synthetic");
    CHECK(echo["flags"]["count"] == 4);

    const std::string m0 = dir + "/scene_0000_mask.png";
    const std::string m1 = dir + "/scene_0001_mask.png";
    RunResult ev =
        run_cli("evaluate --pred " + m0 + " --truth " + m1 + " --classes 6");
    REQUIRE(ev.code == 0);
    json evj = json::parse(ev.out);
    check_schema("evaluate.json", evj);
    CHECK(evj["miou"].is_number());
    CHECK(evj["macro_f1"].is_number());

    RunResult self =
        run_cli("evaluate --pred " + m0 + " --truth " + m0 + " --classes 6");
    REQUIRE(self.code == 0);
    CHECK(json::parse(self.out)["miou"].get<double>() == doctest::Approx(1.0));

    RunResult ct = run_cli("count-buildings --pred " + m0 + " --truth " + m1 +
                           " --class 1 --connectivity 4");
    REQUIRE(ct.code == 0);
    check_schema("count_buildings.json", json::parse(ct.out));

    RunResult bad = run_cli("evaluate --pred " + m0 + " --truth " + dir +
                            "/absent.png --classes 6");
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error:") != std::string::npos);
}

TEST_CASE("simulate and overlay write artifacts") {
    const std::string dir = temp_dir("oseg_cli_img");
    REQUIRE(run_cli("generate-synthetic --out-dir " + dir +
                    " --count 2 --size 32 --seed 3")
                .code == 0);
    const std::string img = dir + "/scene_0000_image.png";
    const std::string mask = dir + "/scene_0000_mask.png";

    RunResult sim = run_cli("simulate-sensor --in " + img + " --sensor brg1 " +
                            "--out " + dir + "/sim.png");
    REQUIRE(sim.code == 0);
    json simj = json::parse(sim.out);
    check_schema("simulate_sensor.json", simj);
    CHECK(fs::exists(dir + "/sim.png"));
    CHECK(fs::exists(dir + "/simulate-sensor_config.json"));

    RunResult bad = run_cli("simulate-sensor --in " + img +
                            " --sensor thermal --out " + dir + "/x.png");
    CHECK(bad.code == 2);

    RunResult ov = run_cli("overlay --in " + img + " --mask " + mask +
                           " --out " + dir + "/ov.png --opacity 0.4");
    REQUIRE(ov.code == 0);
    check_schema("overlay.json", json::parse(ov.out));
    CHECK(fs::exists(dir + "/ov.png"));
}

TEST_CASE("reruns of the same training command are byte-identical") {
    const std::string dir = temp_dir("oseg_cli_repro");
    REQUIRE(run_cli("generate-synthetic --out-dir " + dir +
                    "/data --count 4 --size 32 --seed 11")
                .code == 0);

    const std::string train = "train-seg --manifest " + dir +
                              "/data/manifest.json --steps 6 --filters 8 "
                              "--batch-size 2 --seed 2 --out ";
    RunResult t1 = run_cli(train + dir + "/a.weights");
    REQUIRE(t1.code == 0);
    json t1j = json::parse(t1.out);
    check_schema("train_seg.json", t1j);
    RunResult t2 = run_cli(train + dir + "/b.weights");
    REQUIRE(t2.code == 0);

    CHECK(slurp(dir + "/a.weights") == slurp(dir + "/b.weights"));
    CHECK(slurp(dir + "/a.weights.log.jsonl") ==
          slurp(dir + "/b.weights.log.jsonl"));

    RunResult inf = run_cli("infer --weights " + dir + "/a.weights --in " +
                            dir + "/data/scene_0000_image.png --out " + dir +
                            "/pred.png");
    REQUIRE(inf.code == 0);
    check_schema("infer.json", json::parse(inf.out));
    RunResult inf2 = run_cli("infer --weights " + dir + "/b.weights --in " +
                             dir + "/data/scene_0000_image.png --out " + dir +
                             "/pred2.png");
    REQUIRE(inf2.code == 0);
    CHECK(slurp(dir + "/pred.png") == slurp(dir + "/pred2.png"));
}

TEST_CASE("translator training and application through the cli") {
    const std::string dir = temp_dir("oseg_cli_gan");
    REQUIRE(run_cli("generate-synthetic --out-dir " + dir +
                    "/src --count 4 --size 32 --seed 31")
                .code == 0);
    REQUIRE(run_cli("generate-synthetic --out-dir " + dir +
                    "/tgt --count 4 --size 32 --seed 32")
                .code == 0);

    RunResult tr = run_cli("train-adapt --source-dir " + dir +
                           "/src --target-dir " + dir +
                           "/tgt --epochs 2 --base-filters 4 --batch-size 2 "
                           "--seed 4 --out " +
                           dir + "/gan.weights");
    REQUIRE(tr.code == 0);
    json trj = json::parse(tr.out);
    check_schema("train_adapt.json", trj);
    CHECK(trj["epochs"] == 2);

    RunResult fwd = run_cli("translate --weights " + dir +
                            "/gan.weights --in " + dir +
                            "/src/scene_0000_image.png --direction forward "
                            "--out " +
                            dir + "/fwd.png");
    REQUIRE(fwd.code == 0);
    check_schema("translate.json", json::parse(fwd.out));
    CHECK(fs::exists(dir + "/fwd.png"));

    CHECK(run_cli("translate --weights " + dir + "/gan.weights --in " + dir +
                  "/src/scene_0000_image.png --direction diagonal --out " +
                  dir + "/x.png")
              .code == 2);
}

TEST_CASE("sa-experiment emits a schema-valid deterministic report") {
    const std::string dir = temp_dir("oseg_cli_sa");
    const std::string args =
        " --scene-count 4 --seg-steps 10 --seg-filters 8 --gan-epochs 2 "
        "--gan-filters 4 --sensors grayscale --seed 6";
    RunResult r1 = run_cli("sa-experiment --work-dir " + dir + "/w1" + args);
    REQUIRE(r1.code == 0);
    json rep = json::parse(r1.out);
    check_schema("sa_experiment.json", rep);
    REQUIRE(rep["rows"].size() == 2);
    CHECK(rep["rows"][0]["adapted"] == false);
    CHECK(rep["rows"][1]["adapted"] == true);
    CHECK(rep["config"]["scene_count"] == 4);
    CHECK(fs::exists(dir + "/w1/sa-experiment_config.json"));

    RunResult r2 = run_cli("sa-experiment --work-dir " + dir + "/w2" + args);
    REQUIRE(r2.code == 0);
    json rep2 = json::parse(r2.out);
    rep2["config"]["work_dir"] = rep["config"]["work_dir"];
    CHECK(rep2.dump() == rep.dump());
}
