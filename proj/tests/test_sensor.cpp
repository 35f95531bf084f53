#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/error.hpp"
#include "core/hash.hpp"
#include "core/rng.hpp"
#include "sensor/sensor.hpp"

using namespace oseg;

namespace {

RasterImage random_image(std::int64_t w, std::int64_t h, Rng& rng) {
    RasterImage img = make_image(w, h);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    return img;
}

RasterImage constant_image(std::int64_t w, std::int64_t h, std::uint8_t r,
                           std::uint8_t g, std::uint8_t b) {
    RasterImage img = make_image(w, h);
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            img.at(y, x, 0) = r;
            img.at(y, x, 1) = g;
            img.at(y, x, 2) = b;
        }
    }
    return img;
}

// Independent per-pixel oracle: permute to (B,R,G), decimate each output
// channel with its stride keeping index-0 samples, block refill.
RasterImage brg_oracle(const RasterImage& img, int sb, int sr, int sg) {
    RasterImage out = make_image(img.width, img.height);
    const int strides[3] = {sb, sr, sg};
    const int src[3] = {2, 0, 1};
    for (std::int64_t y = 0; y < img.height; ++y) {
        for (std::int64_t x = 0; x < img.width; ++x) {
            for (int oc = 0; oc < 3; ++oc) {
                const int st = strides[oc];
                out.at(y, x, oc) = img.at((y / st) * st, (x / st) * st, src[oc]);
            }
        }
    }
    return out;
}

std::uint8_t luma_oracle(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return static_cast<std::uint8_t>(
        std::floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5));
}

} // namespace

TEST_CASE("grayscale examples") {
    RasterImage gray = constant_image(4, 4, 200, 200, 200);
    RasterImage out = simulate_grayscale(gray);
    CHECK(out.at(0, 0, 0) == 200);
    CHECK(out.at(3, 3, 2) == 200);

    RasterImage red = constant_image(2, 2, 255, 0, 0);
    out = simulate_grayscale(red);
    CHECK(out.at(0, 0, 0) == 76);
    CHECK(out.at(1, 1, 1) == 76);
    CHECK(out.at(0, 1, 2) == 76);
}

TEST_CASE("grayscale channels are identical and idempotent") {
    Rng rng(41);
    for (int i = 0; i < 20; ++i) {
        RasterImage img = random_image(9, 7, rng);
        RasterImage once = simulate_grayscale(img);
        for (std::int64_t y = 0; y < once.height; ++y) {
            for (std::int64_t x = 0; x < once.width; ++x) {
                CHECK(once.at(y, x, 0) == once.at(y, x, 1));
                CHECK(once.at(y, x, 0) == once.at(y, x, 2));
                CHECK(once.at(y, x, 0) ==
                      luma_oracle(img.at(y, x, 0), img.at(y, x, 1), img.at(y, x, 2)));
            }
        }
        RasterImage twice = simulate_grayscale(once);
        CHECK(twice.pixels == once.pixels);
    }
}

TEST_CASE("brg type1 examples") {
    RasterImage c = constant_image(6, 6, 10, 20, 30);
    RasterImage out = simulate_brg_type1(c);
    CHECK(out.at(0, 0, 0) == 30);
    CHECK(out.at(5, 5, 1) == 10);
    CHECK(out.at(2, 3, 2) == 20);

    // 2x2 with distinct pixels: every output pixel equals the permuted
    // top-left sample.
    RasterImage d = make_image(2, 2);
    int v = 10;
    for (std::int64_t y = 0; y < 2; ++y) {
        for (std::int64_t x = 0; x < 2; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                d.at(y, x, ch) = static_cast<std::uint8_t>(v++);
            }
        }
    }
    out = simulate_brg_type1(d);
    for (std::int64_t y = 0; y < 2; ++y) {
        for (std::int64_t x = 0; x < 2; ++x) {
            CHECK(out.at(y, x, 0) == d.at(0, 0, 2));
            CHECK(out.at(y, x, 1) == d.at(0, 0, 0));
            CHECK(out.at(y, x, 2) == d.at(0, 0, 1));
        }
    }
    CHECK(out.width == d.width);
    CHECK(out.height == d.height);
}

TEST_CASE("brg type2 examples") {
    RasterImage c = constant_image(8, 8, 10, 20, 30);
    CHECK(simulate_brg_type2(c).at(4, 4, 0) == 30);

    // 8x8 gradient: the blue output plane is one stride-8 block.
    RasterImage g = make_image(8, 8);
    for (std::int64_t y = 0; y < 8; ++y) {
        for (std::int64_t x = 0; x < 8; ++x) {
            g.at(y, x, 0) = static_cast<std::uint8_t>(x * 8);
            g.at(y, x, 1) = static_cast<std::uint8_t>(y * 8);
            g.at(y, x, 2) = static_cast<std::uint8_t>(x * 8 + y * 8);
        }
    }
    RasterImage out = simulate_brg_type2(g);
    for (std::int64_t y = 0; y < 8; ++y) {
        for (std::int64_t x = 0; x < 8; ++x) {
            CHECK(out.at(y, x, 0) == g.at(0, 0, 2));
        }
    }
    // Red keeps stride 2, green stride 4.
    CHECK(out.at(0, 2, 1) == g.at(0, 2, 0));
    CHECK(out.at(0, 3, 1) == g.at(0, 2, 0));
    CHECK(out.at(0, 5, 2) == g.at(0, 4, 1));
}

TEST_CASE("brg variants match the per-pixel oracle on random images") {
    Rng rng(42);
    for (int i = 0; i < 100; ++i) {
        const std::int64_t w = 1 + static_cast<std::int64_t>(rng.uniform_index(40));
        const std::int64_t h = 1 + static_cast<std::int64_t>(rng.uniform_index(40));
        RasterImage img = random_image(w, h, rng);
        CHECK(simulate_brg_type1(img).pixels == brg_oracle(img, 2, 2, 2).pixels);
        CHECK(simulate_brg_type2(img).pixels == brg_oracle(img, 8, 2, 4).pixels);
    }
}

TEST_CASE("dispatch and naming") {
    Rng rng(43);
    RasterImage img = random_image(16, 16, rng);

    SensorModel gray = sensor_from_name("grayscale");
    CHECK(apply_sensor(img, gray).pixels == simulate_grayscale(img).pixels);
    SensorModel b1 = sensor_from_name("brg1");
    CHECK(apply_sensor(img, b1).pixels == simulate_brg_type1(img).pixels);
    SensorModel b2 = sensor_from_name("brg2");
    CHECK(b2.stride_blue == 8);
    CHECK(b2.stride_red == 2);
    CHECK(b2.stride_green == 4);
    CHECK(apply_sensor(img, b2).pixels == simulate_brg_type2(img).pixels);

    CHECK_THROWS_AS(sensor_from_name("thermal"), Error);

    SensorModel bad = gray;
    bad.luma_r = 0.5;
    CHECK_THROWS_AS(apply_sensor(img, bad), Error);
}

TEST_CASE("pinned output hashes for a seeded image") {
    Rng rng(777);
    RasterImage img = make_image(32, 32);
    for (auto& p : img.pixels) {
        p = static_cast<std::uint8_t>(rng.uniform_index(256));
    }
    CHECK(fnv1a64(img.pixels) == 0x57f4fc7ed2c484b0ull);
    CHECK(fnv1a64(simulate_grayscale(img).pixels) == 0xaadf189d6d6dc3b6ull);
    CHECK(fnv1a64(simulate_brg_type1(img).pixels) == 0x720139c341ee667dull);
    CHECK(fnv1a64(simulate_brg_type2(img).pixels) == 0xee86a2e3adf910d1ull);
}
