#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "core/error.hpp"
#include "core/optim.hpp"
#include "core/params.hpp"
#include "core/rng.hpp"

using namespace oseg;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

ParamStore sample_store(Rng& rng) {
    ParamStore store;
    auto randfill = [&](Tensor t) {
        for (auto& v : t.data()) {
            v = rng.normal();
        }
        return t;
    };
    store.add("conv1.kernel", randfill(Tensor::zeros(Shape{4, 3, 3, 3})));
    store.add("conv1.bias", randfill(Tensor::zeros(Shape{1, 4, 1, 1})));
    store.add("bn1.running_mean", randfill(Tensor::zeros(Shape{1, 4, 1, 1})),
              false);
    return store;
}

} // namespace

TEST_CASE("param store basics") {
    ParamStore store;
    store.add("w", Tensor::zeros(Shape{1, 1, 2, 2}));
    CHECK(store.contains("w"));
    CHECK(store.get("w").requires_grad());
    store.add("stats", Tensor::zeros(Shape{1, 1, 1, 1}), false);
    CHECK_FALSE(store.get("stats").requires_grad());
    CHECK(store.total_numel() == 5);
    CHECK_THROWS_AS(store.add("w", Tensor::zeros(Shape{1, 1, 1, 1})), Error);
    CHECK_THROWS_AS(store.get("missing"), Error);
}

TEST_CASE("weight files round trip bit-exactly") {
    Rng rng(101);
    ParamStore store = sample_store(rng);
    const std::string path = temp_path("oseg_weights_test.bin");
    std::map<std::string, double> config{{"levels", 4.0}, {"filters", 16.0}};
    save_weights(path, store, config);

    WeightFile wf = load_weights(path);
    CHECK(wf.config.at("levels") == 4.0);
    CHECK(wf.config.at("filters") == 16.0);
    CHECK(wf.tensors.size() == 3);
    CHECK(wf.tensors.at("conv1.kernel").data() == store.get("conv1.kernel").data());
    CHECK(wf.tensors.at("bn1.running_mean").data() ==
          store.get("bn1.running_mean").data());

    // Saving the identical state again produces identical bytes.
    const std::string path2 = temp_path("oseg_weights_test2.bin");
    save_weights(path2, store, config);
    CHECK(read_file(path) == read_file(path2));

    ParamStore fresh = sample_store(rng);
    fill_params(fresh, wf);
    CHECK(fresh.get("conv1.kernel").data() == store.get("conv1.kernel").data());

    std::remove(path.c_str());
    std::remove(path2.c_str());
}

TEST_CASE("weight file validation") {
    const std::string path = temp_path("oseg_weights_bad.bin");
    {
        std::ofstream os(path, std::ios::binary);
        os << "NOTMAGIC________garbage";
    }
    CHECK_THROWS_AS(load_weights(path), Error);
    CHECK_THROWS_AS(load_weights(temp_path("oseg_no_such_file.bin")), Error);

    Rng rng(102);
    ParamStore store = sample_store(rng);
    save_weights(path, store, {});
    WeightFile wf = load_weights(path);

    ParamStore wrong_shape;
    wrong_shape.add("conv1.kernel", Tensor::zeros(Shape{4, 3, 5, 5}));
    wrong_shape.add("conv1.bias", Tensor::zeros(Shape{1, 4, 1, 1}));
    wrong_shape.add("bn1.running_mean", Tensor::zeros(Shape{1, 4, 1, 1}), false);
    CHECK_THROWS_WITH_AS(fill_params(wrong_shape, wf),
                         doctest::Contains("shape mismatch"), Error);

    ParamStore missing;
    missing.add("conv1.kernel", Tensor::zeros(Shape{4, 3, 3, 3}));
    CHECK_THROWS_AS(fill_params(missing, wf), Error);

    ParamStore extra = sample_store(rng);
    extra.add("extra.param", Tensor::zeros(Shape{1, 1, 1, 1}));
    CHECK_THROWS_AS(fill_params(extra, wf), Error);

    ParamStore clash;
    clash.add("config.levels", Tensor::zeros(Shape{1, 1, 1, 1}));
    CHECK_THROWS_AS(save_weights(path, clash, {}), Error);

    std::remove(path.c_str());
}

TEST_CASE("sgd steps") {
    ParamStore store;
    Tensor& p = store.add("p", Tensor::scalar(1.0));
    Optimizer opt(store, {.kind = OptKind::Sgd, .lr = 0.1});

    p.zero_grad();
    opt.step();
    CHECK(p.item() == 1.0);

    backward(scalar_mul(p, 2.0)); // grad = 2
    opt.step();
    CHECK(p.item() == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("quadratic bowl converges") {
    auto run = [](OptimConfig cfg) {
        ParamStore store;
        Tensor& x = store.add("x", Tensor::scalar(2.0));
        Optimizer opt(store, cfg);
        for (int i = 0; i < 200; ++i) {
            opt.zero_grads();
            Tensor d = scalar_add(x, -3.0);
            backward(mul(d, d));
            opt.step();
        }
        return std::abs(x.item() - 3.0);
    };
    CHECK(run({.kind = OptKind::Sgd, .lr = 0.4}) < 1e-6);
    CHECK(run({.kind = OptKind::Sgd, .lr = 0.05, .momentum = 0.7}) < 1e-6);
    // Adam circles the minimum at a scale set by its decaying second moment;
    // 200 steps land it close but not at SGD's fixed point.
    CHECK(run({.kind = OptKind::Adam, .lr = 0.1}) < 1e-4);
}

TEST_CASE("adam first step magnitude") {
    ParamStore store;
    Tensor& p = store.add("p", Tensor::scalar(0.0));
    Optimizer opt(store, {.kind = OptKind::Adam, .lr = 0.001});
    backward(scalar_mul(p, 5.0));
    opt.step();
    // Bias correction makes the first step lr-sized regardless of gradient
    // scale (up to epsilon).
    CHECK(p.item() == doctest::Approx(-0.001).epsilon(1e-4));
}

TEST_CASE("non-finite gradients are rejected by name") {
    ParamStore store;
    Tensor& p = store.add("layer3.bias", Tensor::scalar(1.0));
    backward(scalar_mul(p, 1.0));
    const_cast<std::vector<double>&>(p.grad())[0] =
        std::numeric_limits<double>::infinity();
    Optimizer opt(store, {});
    CHECK_THROWS_WITH_AS(opt.step(), doctest::Contains("layer3.bias"), Error);
}

TEST_CASE("skips non-trainable entries") {
    ParamStore store;
    Tensor& p = store.add("w", Tensor::scalar(1.0));
    Tensor& s = store.add("stats", Tensor::scalar(5.0), false);
    Optimizer opt(store, {.kind = OptKind::Sgd, .lr = 0.5});
    backward(add(scalar_mul(p, 2.0), scalar_mul(detach(s), 3.0)));
    opt.step();
    CHECK(p.item() == doctest::Approx(0.0));
    CHECK(s.item() == 5.0);
}
