#include "sensor/sensor.hpp"

#include <cmath>

#include "core/error.hpp"

namespace oseg {

namespace {

void check_image(const RasterImage& img) {
    if (img.width <= 0 || img.height <= 0 ||
        img.pixels.size() != static_cast<std::size_t>(img.width * img.height * 3)) {
        throw_invalid("sensor: malformed image buffer");
    }
}

// Permute to output order (B, R, G), then per-output-channel block refill
// where each stride×stride block takes its top-left (index-0) sample.
RasterImage permute_and_decimate(const RasterImage& img, int stride_b,
                                 int stride_r, int stride_g) {
    if (stride_b < 1 || stride_r < 1 || stride_g < 1) {
        throw_invalid("sensor: decimation strides must be >= 1");
    }
    RasterImage out = make_image(img.width, img.height);
    // out channel 0 carries the source blue plane, 1 red, 2 green.
    const int src_for_out[3] = {2, 0, 1};
    const int stride_for_out[3] = {stride_b, stride_r, stride_g};
    for (int oc = 0; oc < 3; ++oc) {
        const int sc = src_for_out[oc];
        const int st = stride_for_out[oc];
        for (std::int64_t y = 0; y < img.height; ++y) {
            const std::int64_t sy = (y / st) * st;
            for (std::int64_t x = 0; x < img.width; ++x) {
                const std::int64_t sx = (x / st) * st;
                out.at(y, x, oc) = img.at(sy, sx, sc);
            }
        }
    }
    return out;
}

} // namespace

RasterImage simulate_grayscale(const RasterImage& img, const SensorModel& m) {
    check_image(img);
    if (std::abs(m.luma_r + m.luma_g + m.luma_b - 1.0) > 1e-9) {
        throw_invalid("sensor: luma weights must sum to 1");
    }
    RasterImage out = make_image(img.width, img.height);
    const std::size_t n = static_cast<std::size_t>(img.width * img.height);
    for (std::size_t i = 0; i < n; ++i) {
        const double r = img.pixels[3 * i];
        const double g = img.pixels[3 * i + 1];
        const double b = img.pixels[3 * i + 2];
        const double luma = m.luma_r * r + m.luma_g * g + m.luma_b * b;
        const auto l = static_cast<std::uint8_t>(std::floor(luma + 0.5));
        out.pixels[3 * i] = l;
        out.pixels[3 * i + 1] = l;
        out.pixels[3 * i + 2] = l;
    }
    return out;
}

RasterImage simulate_brg_type1(const RasterImage& img) {
    check_image(img);
    return permute_and_decimate(img, 2, 2, 2);
}

RasterImage simulate_brg_type2(const RasterImage& img, const SensorModel& m) {
    check_image(img);
    return permute_and_decimate(img, m.stride_blue, m.stride_red, m.stride_green);
}

RasterImage apply_sensor(const RasterImage& img, const SensorModel& m) {
    switch (m.variant) {
    case SensorVariant::Grayscale:
        return simulate_grayscale(img, m);
    case SensorVariant::BrgType1:
        return simulate_brg_type1(img);
    case SensorVariant::BrgType2:
        return simulate_brg_type2(img, m);
    }
    throw_invalid("sensor: unknown variant");
}

SensorModel sensor_from_name(const std::string& name) {
    SensorModel m;
    if (name == "grayscale") {
        m.variant = SensorVariant::Grayscale;
    } else if (name == "brg1") {
        m.variant = SensorVariant::BrgType1;
    } else if (name == "brg2") {
        m.variant = SensorVariant::BrgType2;
    } else {
        throw_invalid("sensor: unknown model '" + name +
                      "' (expected grayscale, brg1, or brg2)");
    }
    return m;
}

const char* sensor_name(SensorVariant v) {
    switch (v) {
    case SensorVariant::Grayscale:
        return "grayscale";
    case SensorVariant::BrgType1:
        return "brg1";
    case SensorVariant::BrgType2:
        return "brg2";
    }
    return "unknown";
}

} // namespace oseg
