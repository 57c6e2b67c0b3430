#pragma once

// Deterministic synthetic scenes. Background is white Gaussian noise around a
// base level. Objects are star-convex 12-gons with a mean shift and a
// spatially correlated texture. Decoys have the same fine texture and a
// comparable mean shift, but the shift is modulated by a coarse checkerboard:
// a single 16x16 tile usually sits inside one block and looks like an object,
// while a 64x64 window shows the block structure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/detail/binary.hpp"
#include "tilecascade/error.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/rng.hpp"

namespace tilecascade {

inline constexpr int kSynthVertices = 12;
// Vertex radius = radius * U(kSynthRadialMin, kSynthRadialMax).
inline constexpr double kSynthRadialMin = 1.0;
inline constexpr double kSynthRadialMax = 1.25;

struct SynthConfig {
    std::uint64_t seed = 1;
    std::uint32_t height = 512;
    std::uint32_t width = 512;
    std::uint32_t bands = 3;
    std::uint32_t min_objects = 2;
    std::uint32_t max_objects = 5;
    double min_radius = 12.0;
    double max_radius = 40.0;
    double contrast = 1.5;     // minimum object mean shift, in units of noise_sigma
    double max_contrast = 2.4; // per-object shift is drawn from [contrast, max_contrast]
    double noise_sigma = 1.0;
    double base_level = 0.0;
    std::uint32_t decoys = 6;
    std::uint32_t decoy_block = 24;  // checkerboard cell side, pixels
    double decoy_low = 0.5;          // shift multipliers of the two checker cells
    double decoy_high = 1.5;
    double margin = 4.0;             // minimum gap between shapes, pixels

    void validate() const
    {
        if (bands < 1 || height < 1 || width < 1) throw ConfigError("synth: scene dimensions must be positive");
        if (min_objects > max_objects) throw ConfigError("synth: min_objects > max_objects");
        if (!(min_radius >= 8.0) || !(max_radius >= min_radius)) throw ConfigError("synth: radius range must satisfy 8 <= min <= max");
        if (!(noise_sigma > 0.0)) throw ConfigError("synth: noise_sigma must be > 0");
        if (!(contrast >= 0.0) || !(max_contrast >= contrast)) throw ConfigError("synth: contrast range invalid");
        if (decoy_block < 1) throw ConfigError("synth: decoy_block must be >= 1");
        if (!(margin >= 0.0)) throw ConfigError("synth: margin must be >= 0");
    }
};

struct SynthScene {
    Scene scene;
    PolygonSet polygons;  // ground truth
    PolygonSet decoys;    // not ground truth
    std::uint64_t seed = 0;
};

inline std::string synth_scene_id(std::size_t index)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "synth_%03zu", index);
    return buf;
}

namespace detail {

struct PlacedShape {
    double cx;
    double cy;
    double extent;  // circumscribed radius
};

// Separable box mean of side 2*radius+1 with edge replication, rescaled to
// unit variance for white input.
inline std::vector<float> box_smooth(const std::vector<float>& z, std::uint32_t h, std::uint32_t w, int radius)
{
    const int side = 2 * radius + 1;
    std::vector<float> tmp(z.size());
    std::vector<float> out(z.size());
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            float s = 0.0f;
            for (int d = -radius; d <= radius; ++d) s += z[static_cast<std::size_t>(r) * w + clampi(static_cast<int>(c) + d, static_cast<int>(w))];
            tmp[static_cast<std::size_t>(r) * w + c] = s;
        }
    }
    const float scale = 1.0f / static_cast<float>(side);  // sum of side^2 unit normals has sd = side
    for (std::uint32_t r = 0; r < h; ++r) {
        for (std::uint32_t c = 0; c < w; ++c) {
            float s = 0.0f;
            for (int d = -radius; d <= radius; ++d) s += tmp[static_cast<std::size_t>(clampi(static_cast<int>(r) + d, static_cast<int>(h))) * w + c];
            out[static_cast<std::size_t>(r) * w + c] = s * scale;
        }
    }
    return out;
}

}  // namespace detail

// Star-convex 12-gon around (cx, cy): vertex k at angle phase + 2*pi*k/12 and
// distance radius * U(kSynthRadialMin, kSynthRadialMax).
inline Polygon star_polygon(std::string id, double cx, double cy, double radius, Rng& rng)
{
    Polygon p{std::move(id), {Ring{}}};
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi / kSynthVertices);
    for (int k = 0; k < kSynthVertices; ++k) {
        const double a = phase + 2.0 * std::numbers::pi * k / kSynthVertices;
        const double r = radius * rng.uniform(kSynthRadialMin, kSynthRadialMax);
        p.rings[0].push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    return p;
}

// Scene `index` of a dataset; its RNG stream is derive_seed(cfg.seed, index).
inline SynthScene generate_scene(const SynthConfig& cfg, std::size_t index)
{
    cfg.validate();
    SynthScene out;
    out.seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(index));
    Rng rng(out.seed);
    const std::uint32_t H = cfg.height;
    const std::uint32_t W = cfg.width;

    const auto n_objects = static_cast<std::uint32_t>(rng.between(cfg.min_objects, cfg.max_objects));
    std::vector<detail::PlacedShape> placed;
    std::vector<Polygon> shapes;
    std::vector<double> shifts;
    const std::uint32_t total = n_objects + cfg.decoys;
    for (std::uint32_t k = 0; k < total; ++k) {
        const bool decoy = k >= n_objects;
        bool ok = false;
        for (int attempt = 0; attempt < 1000 && !ok; ++attempt) {
            const double radius = rng.uniform(cfg.min_radius, cfg.max_radius);
            const double extent = radius * kSynthRadialMax;
            const double lo = extent + 1.0;
            if (2.0 * lo >= H || 2.0 * lo >= W) {
                continue;
            }
            const double cx = rng.uniform(lo, W - lo);
            const double cy = rng.uniform(lo, H - lo);
            const bool clear = std::all_of(placed.begin(), placed.end(), [&](const detail::PlacedShape& s) {
                return std::hypot(s.cx - cx, s.cy - cy) > s.extent + extent + cfg.margin;
            });
            if (!clear) {
                continue;
            }
            char id[32];
            std::snprintf(id, sizeof id, decoy ? "decoy_%u" : "obj_%u", decoy ? k - n_objects : k);
            placed.push_back({cx, cy, extent});
            shapes.push_back(star_polygon(id, cx, cy, radius, rng));
            shifts.push_back(cfg.noise_sigma * rng.uniform(cfg.contrast, cfg.max_contrast));
            ok = true;
        }
        if (!ok) {
            throw GenerationError("synth: could not place shape " + std::to_string(k) + " of scene " + std::to_string(index)
                                  + " without overlap after 1000 attempts");
        }
    }

    Scene& s = out.scene;
    s.scene_id = synth_scene_id(index);
    s.bands = cfg.bands;
    s.height = H;
    s.width = W;
    s.data.assign(static_cast<std::size_t>(cfg.bands) * H * W, 0.0f);

    std::vector<PixelMask> masks;
    for (const auto& p : shapes) masks.push_back(rasterize(p, H, W));
    std::vector<std::uint32_t> checker_phase_r;
    std::vector<std::uint32_t> checker_phase_c;
    for (std::size_t k = n_objects; k < shapes.size(); ++k) {
        checker_phase_r.push_back(static_cast<std::uint32_t>(rng.below(cfg.decoy_block)));
        checker_phase_c.push_back(static_cast<std::uint32_t>(rng.below(cfg.decoy_block)));
    }

    const auto plane = static_cast<std::size_t>(H) * W;
    const float sigma = static_cast<float>(cfg.noise_sigma);
    for (std::uint32_t b = 0; b < cfg.bands; ++b) {
        std::vector<float> white(plane);
        std::vector<float> z(plane);
        for (auto& v : white) v = static_cast<float>(rng.normal());
        for (auto& v : z) v = static_cast<float>(rng.normal());
        const auto smooth = detail::box_smooth(z, H, W, 2);
        float* band = &s.data[b * plane];
        for (std::size_t i = 0; i < plane; ++i) {
            band[i] = static_cast<float>(cfg.base_level) + sigma * white[i];
        }
        for (std::size_t k = 0; k < shapes.size(); ++k) {
            const auto& m = masks[k];
            double mean = 0.0;
            std::size_t count = 0;
            for (std::size_t i = 0; i < plane; ++i) {
                if (m.inside[i]) {
                    mean += smooth[i];
                    ++count;
                }
            }
            mean = count ? mean / static_cast<double>(count) : 0.0;
            const bool decoy = k >= n_objects;
            for (std::uint32_t r = 0; r < H; ++r) {
                for (std::uint32_t c = 0; c < W; ++c) {
                    const std::size_t i = static_cast<std::size_t>(r) * W + c;
                    if (!m.inside[i]) continue;
                    double shift = shifts[k];
                    if (decoy) {
                        const std::size_t d = k - n_objects;
                        const std::uint32_t br = (r + checker_phase_r[d]) / cfg.decoy_block;
                        const std::uint32_t bc = (c + checker_phase_c[d]) / cfg.decoy_block;
                        shift *= ((br + bc) % 2 == 0) ? cfg.decoy_high : cfg.decoy_low;
                    }
                    const double texture = 0.6 * white[i] + 0.8 * (smooth[i] - mean);
                    band[i] = static_cast<float>(cfg.base_level + shift + cfg.noise_sigma * texture);
                }
            }
        }
    }

    for (std::uint32_t k = 0; k < shapes.size(); ++k) {
        (k < n_objects ? out.polygons : out.decoys).polygons.push_back(std::move(shapes[k]));
    }
    return out;
}

inline std::vector<SynthScene> generate(const SynthConfig& cfg, std::size_t n_scenes)
{
    std::vector<SynthScene> out;
    out.reserve(n_scenes);
    for (std::size_t i = 0; i < n_scenes; ++i) {
        out.push_back(generate_scene(cfg, i));
    }
    return out;
}

inline nlohmann::json to_json(const SynthConfig& c)
{
    return {{"seed", c.seed},           {"height", c.height},           {"width", c.width},
            {"bands", c.bands},         {"min_objects", c.min_objects}, {"max_objects", c.max_objects},
            {"min_radius", c.min_radius}, {"max_radius", c.max_radius}, {"contrast", c.contrast},
            {"max_contrast", c.max_contrast}, {"noise_sigma", c.noise_sigma}, {"base_level", c.base_level},
            {"decoys", c.decoys},       {"decoy_block", c.decoy_block}, {"decoy_low", c.decoy_low},
            {"decoy_high", c.decoy_high}, {"margin", c.margin}};
}

// Missing keys keep their defaults.
inline SynthConfig synth_config_from_json(const nlohmann::json& j)
{
    SynthConfig c;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
    };
    try {
        get("seed", c.seed);
        get("height", c.height);
        get("width", c.width);
        get("bands", c.bands);
        get("min_objects", c.min_objects);
        get("max_objects", c.max_objects);
        get("min_radius", c.min_radius);
        get("max_radius", c.max_radius);
        get("contrast", c.contrast);
        get("max_contrast", c.max_contrast);
        get("noise_sigma", c.noise_sigma);
        get("base_level", c.base_level);
        get("decoys", c.decoys);
        get("decoy_block", c.decoy_block);
        get("decoy_low", c.decoy_low);
        get("decoy_high", c.decoy_high);
        get("margin", c.margin);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("synth config: ") + e.what());
    }
    c.validate();
    return c;
}

// Writes <dir>/scenes/<id>.scnr, <dir>/polygons/<id>.json and
// <dir>/manifest.json listing scene ids and their seeds.
inline nlohmann::json write_synth_dataset(const SynthConfig& cfg, std::size_t n_scenes, const std::filesystem::path& dir)
{
    nlohmann::json manifest = {{"config", to_json(cfg)}, {"scenes", nlohmann::json::array()}};
    for (std::size_t i = 0; i < n_scenes; ++i) {
        const auto s = generate_scene(cfg, i);
        write_scene(s.scene, dir / "scenes" / (s.scene.scene_id + ".scnr"));
        write_polygons(s.polygons, dir / "polygons" / (s.scene.scene_id + ".json"));
        manifest["scenes"].push_back({{"scene_id", s.scene.scene_id},
                                      {"seed", s.seed},
                                      {"objects", s.polygons.polygons.size()},
                                      {"decoys", s.decoys.polygons.size()}});
    }
    detail::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    return manifest;
}

}  // namespace tilecascade
