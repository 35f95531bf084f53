#include "data/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <vector>

#include "core/error.hpp"
#include "core/rng.hpp"

namespace oseg {

namespace {

struct Rect {
    std::int64_t x0 = 0;
    std::int64_t y0 = 0;
    std::int64_t w = 0;
    std::int64_t h = 0;
};

bool rects_overlap(const Rect& a, const Rect& b) {
    return a.x0 <= b.x0 + b.w - 1 && b.x0 <= a.x0 + a.w - 1 &&
           a.y0 <= b.y0 + b.h - 1 && b.y0 <= a.y0 + a.h - 1;
}

Rect inflate(const Rect& r, std::int64_t pad) {
    return Rect{r.x0 - pad, r.y0 - pad, r.w + 2 * pad, r.h + 2 * pad};
}

void paint_rect(RasterImage& img, MaskImage& mask, const Rect& r, std::uint8_t cls,
                const std::array<std::uint8_t, 3>& color) {
    const std::int64_t y_lo = std::max<std::int64_t>(0, r.y0);
    const std::int64_t y_hi = std::min(img.height, r.y0 + r.h);
    const std::int64_t x_lo = std::max<std::int64_t>(0, r.x0);
    const std::int64_t x_hi = std::min(img.width, r.x0 + r.w);
    for (std::int64_t y = y_lo; y < y_hi; ++y) {
        for (std::int64_t x = x_lo; x < x_hi; ++x) {
            mask.at(y, x) = cls;
            for (int c = 0; c < 3; ++c) {
                img.at(y, x, c) = color[static_cast<std::size_t>(c)];
            }
        }
    }
}

void paint_ellipse(RasterImage& img, MaskImage& mask, std::int64_t cy, std::int64_t cx,
                   std::int64_t ry, std::int64_t rx, std::uint8_t cls,
                   const std::array<std::uint8_t, 3>& color) {
    const std::int64_t y_lo = std::max<std::int64_t>(0, cy - ry);
    const std::int64_t y_hi = std::min(img.height, cy + ry + 1);
    const std::int64_t x_lo = std::max<std::int64_t>(0, cx - rx);
    const std::int64_t x_hi = std::min(img.width, cx + rx + 1);
    for (std::int64_t y = y_lo; y < y_hi; ++y) {
        for (std::int64_t x = x_lo; x < x_hi; ++x) {
            const double dy = static_cast<double>(y - cy) / static_cast<double>(ry);
            const double dx = static_cast<double>(x - cx) / static_cast<double>(rx);
            if (dy * dy + dx * dx <= 1.0) {
                mask.at(y, x) = cls;
                for (int c = 0; c < 3; ++c) {
                    img.at(y, x, c) = color[static_cast<std::size_t>(c)];
                }
            }
        }
    }
}

std::uint8_t clamp_u8(std::int64_t v) {
    return static_cast<std::uint8_t>(std::clamp<std::int64_t>(v, 0, 255));
}

std::array<std::uint8_t, 3> jitter_color(const std::array<std::uint8_t, 3>& base, Rng& rng,
                                         int amount) {
    std::array<std::uint8_t, 3> out{};
    for (int c = 0; c < 3; ++c) {
        const std::int64_t d =
            static_cast<std::int64_t>(rng.uniform_index(2 * static_cast<std::uint64_t>(amount) + 1)) -
            amount;
        out[static_cast<std::size_t>(c)] = clamp_u8(base[static_cast<std::size_t>(c)] + d);
    }
    return out;
}

void validate_spec(const SceneSpec& spec) {
    if (spec.size < 16 || spec.size % 16 != 0) {
        throw_invalid("scene size must be a positive multiple of 16, got " +
                      std::to_string(spec.size));
    }
    if (spec.buildings < 0 || spec.vehicles < 0) {
        throw_invalid("object counts must be non-negative");
    }
    if (spec.road_width < 0 || spec.road_width > spec.size) {
        throw_invalid("road width must be in [0, size]");
    }
    if (spec.vegetation_density < 0.0 || spec.vegetation_density > 1.0) {
        throw_invalid("vegetation density must be in [0, 1]");
    }
    if (spec.noise_amplitude < 0 || spec.noise_amplitude > 127) {
        throw_invalid("noise amplitude must be in [0, 127]");
    }
}

} // namespace

SyntheticScene generate_synthetic_scene(const SceneSpec& spec) {
    validate_spec(spec);
    const auto& classes = default_classes();
    const std::int64_t size = spec.size;
    Rng rng(spec.seed);

    SyntheticScene scene;
    scene.image = make_image(size, size);
    scene.mask = make_mask(size, size);
    paint_rect(scene.image, scene.mask, Rect{0, 0, size, size}, 0, classes[0].color);

    // Vegetation: elliptical patches, low first so high can sit on top.
    const std::int64_t r_lo = std::max<std::int64_t>(2, size / 16);
    const std::int64_t r_hi = std::max(r_lo, size / 6);
    const auto paint_patches = [&](int count, std::uint8_t cls) {
        for (int i = 0; i < count; ++i) {
            const std::int64_t ry =
                r_lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(r_hi - r_lo + 1)));
            const std::int64_t rx =
                r_lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(r_hi - r_lo + 1)));
            const std::int64_t cy = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size)));
            const std::int64_t cx = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size)));
            paint_ellipse(scene.image, scene.mask, cy, cx, ry, rx, cls,
                          classes[cls].color);
        }
    };
    const int n_low = static_cast<int>(std::llround(9.0 * spec.vegetation_density));
    const int n_high = static_cast<int>(std::llround(6.0 * spec.vegetation_density));
    paint_patches(n_low, 4);
    paint_patches(n_high, 5);

    // Roads: one horizontal and one vertical band across the whole scene.
    if (spec.road_width > 0) {
        const std::int64_t span = size - spec.road_width + 1;
        const std::int64_t ry0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(span)));
        const std::int64_t rx0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(span)));
        paint_rect(scene.image, scene.mask, Rect{0, ry0, size, spec.road_width}, 2,
                   classes[2].color);
        paint_rect(scene.image, scene.mask, Rect{rx0, 0, spec.road_width, size}, 2,
                   classes[2].color);
    }

    for (int i = 0; i < spec.vehicles; ++i) {
        const std::int64_t w = 2 + static_cast<std::int64_t>(rng.uniform_index(3));
        const std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_index(3));
        const std::int64_t x0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size - w + 1)));
        const std::int64_t y0 = static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size - h + 1)));
        paint_rect(scene.image, scene.mask, Rect{x0, y0, w, h}, 3, classes[3].color);
    }

    // Buildings go last so nothing paints over them, and each pair keeps a
    // gap of at least two pixels: the component count of class 1 then equals
    // the requested count exactly.
    std::vector<Rect> placed;
    const std::int64_t b_lo = std::max<std::int64_t>(3, size / 10);
    const std::int64_t b_hi = std::max(b_lo, size / 4);
    for (int i = 0; i < spec.buildings; ++i) {
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const std::int64_t w =
                b_lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(b_hi - b_lo + 1)));
            const std::int64_t h =
                b_lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(b_hi - b_lo + 1)));
            const Rect r{static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size - w + 1))),
                         static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(size - h + 1))), w, h};
            const Rect grown = inflate(r, 2);
            bool clear = true;
            for (const Rect& p : placed) {
                if (rects_overlap(grown, p)) {
                    clear = false;
                    break;
                }
            }
            if (clear) {
                paint_rect(scene.image, scene.mask, r, 1,
                           jitter_color(classes[1].color, rng, 16));
                placed.push_back(r);
                ok = true;
            }
        }
        if (!ok) {
            throw_invalid("could not place " + std::to_string(spec.buildings) +
                          " separated buildings in a " + std::to_string(size) + "x" +
                          std::to_string(size) + " scene");
        }
    }

    if (spec.noise_amplitude > 0) {
        const std::uint64_t span = 2 * static_cast<std::uint64_t>(spec.noise_amplitude) + 1;
        for (std::int64_t y = 0; y < size; ++y) {
            for (std::int64_t x = 0; x < size; ++x) {
                for (int c = 0; c < 3; ++c) {
                    const std::int64_t d =
                        static_cast<std::int64_t>(rng.uniform_index(span)) - spec.noise_amplitude;
                    scene.image.at(y, x, c) = clamp_u8(scene.image.at(y, x, c) + d);
                }
            }
        }
    }
    return scene;
}

DatasetManifest generate_synthetic_dataset(const DatasetGenConfig& cfg) {
    if (cfg.count < 1) {
        throw_invalid("scene count must be at least 1");
    }
    if (cfg.out_dir.empty()) {
        throw_invalid("output directory must not be empty");
    }
    std::filesystem::create_directories(cfg.out_dir);

    DatasetManifest m;
    m.version = 1;
    m.classes = default_classes();
    m.root = cfg.out_dir;

    Rng master(cfg.seed);
    bool have_test = false;
    for (int i = 0; i < cfg.count; ++i) {
        SceneSpec spec = cfg.scene;
        spec.seed = master.next_u64();
        const SyntheticScene scene = generate_synthetic_scene(spec);

        char image_name[48];
        char mask_name[48];
        std::snprintf(image_name, sizeof(image_name), "scene_%04d_image.png", i);
        std::snprintf(mask_name, sizeof(mask_name), "scene_%04d_mask.png", i);
        save_image((std::filesystem::path(cfg.out_dir) / image_name).string(), scene.image);
        save_mask((std::filesystem::path(cfg.out_dir) / mask_name).string(), scene.mask);

        ManifestItem item;
        item.image = image_name;
        item.mask = mask_name;
        const bool last = i == cfg.count - 1;
        // Every fourth scene is held out; small datasets still get one test
        // item as long as there are at least two scenes.
        if (i % 4 == 3 || (last && !have_test && cfg.count >= 2)) {
            item.split = "test";
            have_test = true;
        } else {
            item.split = "train";
        }
        m.items.push_back(item);
    }

    save_manifest((std::filesystem::path(cfg.out_dir) / "manifest.json").string(), m);
    return m;
}

} // namespace oseg
