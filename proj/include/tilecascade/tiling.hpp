#pragma once

// Tile gridding, coverage labels and fixed-size crops.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/error.hpp"
#include "tilecascade/raster.hpp"

namespace tilecascade {

inline constexpr std::uint32_t kTileSize = 16;
inline constexpr double kPositiveCoverage = 0.20;

// Partial edge tiles are dropped: rows = floor(height / tile_size).
struct TileGrid {
    std::string scene_id;
    std::uint32_t tile_size = kTileSize;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t height = 0;  // source scene dimensions
    std::uint32_t width = 0;

    std::size_t size() const noexcept { return static_cast<std::size_t>(rows) * cols; }
    bool empty() const noexcept { return size() == 0; }

    friend bool operator==(const TileGrid&, const TileGrid&) = default;
};

enum class TileClass : std::uint8_t { positive, negative, ignored, invalid };

inline std::string_view to_string(TileClass c) noexcept
{
    switch (c) {
    case TileClass::positive: return "positive";
    case TileClass::negative: return "negative";
    case TileClass::ignored: return "ignored";
    case TileClass::invalid: return "invalid";
    }
    return "?";
}

inline TileClass tile_class_from_string(std::string_view s)
{
    if (s == "positive") return TileClass::positive;
    if (s == "negative") return TileClass::negative;
    if (s == "ignored") return TileClass::ignored;
    if (s == "invalid") return TileClass::invalid;
    throw ValidationError("unknown tile label '" + std::string(s) + "'");
}

struct TileLabel {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    double coverage = 0.0;
    TileClass label = TileClass::negative;

    friend bool operator==(const TileLabel&, const TileLabel&) = default;
};

// A size x size window of all bands, stored band-major like Scene::data.
struct Crop {
    std::int64_t center_r = 0;
    std::int64_t center_c = 0;
    std::uint32_t size = 0;
    std::uint32_t bands = 0;
    std::vector<float> data;

    float& at(std::uint32_t b, std::uint32_t r, std::uint32_t c) noexcept
    {
        return data[(static_cast<std::size_t>(b) * size + r) * size + c];
    }
    float at(std::uint32_t b, std::uint32_t r, std::uint32_t c) const noexcept
    {
        return data[(static_cast<std::size_t>(b) * size + r) * size + c];
    }

    friend bool operator==(const Crop&, const Crop&) = default;
};

inline TileGrid grid_scene(std::string scene_id, std::uint32_t height, std::uint32_t width, std::uint32_t tile_size = kTileSize)
{
    if (tile_size < 1) {
        throw ValidationError("grid_scene: tile_size must be >= 1");
    }
    return TileGrid{std::move(scene_id), tile_size, height / tile_size, width / tile_size, height, width};
}

inline TileGrid grid_scene(const Scene& scene, std::uint32_t tile_size = kTileSize)
{
    return grid_scene(scene.scene_id, scene.height, scene.width, tile_size);
}

inline TileClass classify_coverage(double coverage, bool fully_valid) noexcept
{
    if (!fully_valid) {
        return TileClass::invalid;
    }
    if (coverage > kPositiveCoverage) {
        return TileClass::positive;
    }
    return coverage == 0.0 ? TileClass::negative : TileClass::ignored;
}

// One label per grid cell in row-major order. Without a validity mask every
// pixel counts as valid.
inline std::vector<TileLabel> label_tiles(const TileGrid& grid, const PixelMask& gt, const ValidityMask* validity = nullptr)
{
    if (gt.height != grid.height || gt.width != grid.width) {
        throw ValidationError("label_tiles: GT mask dimensions do not match the scene");
    }
    if (validity && (validity->height != grid.height || validity->width != grid.width)) {
        throw ValidationError("label_tiles: validity mask dimensions do not match the scene");
    }
    const std::uint32_t ts = grid.tile_size;
    const double area = static_cast<double>(ts) * ts;
    std::vector<TileLabel> out;
    out.reserve(grid.size());
    for (std::uint32_t tr = 0; tr < grid.rows; ++tr) {
        for (std::uint32_t tc = 0; tc < grid.cols; ++tc) {
            std::size_t inside = 0;
            bool fully_valid = true;
            for (std::uint32_t r = tr * ts; r < (tr + 1) * ts; ++r) {
                for (std::uint32_t c = tc * ts; c < (tc + 1) * ts; ++c) {
                    inside += gt.at(r, c) ? 1 : 0;
                    if (validity && !validity->at(r, c)) {
                        fully_valid = false;
                    }
                }
            }
            const double coverage = static_cast<double>(inside) / area;
            out.push_back({tr, tc, coverage, classify_coverage(coverage, fully_valid)});
        }
    }
    return out;
}

// Window of side `size` with top-left (center_r - size/2, center_c - size/2);
// pixels outside the scene are 0.
inline Crop extract_crop(const Scene& scene, std::int64_t center_r, std::int64_t center_c, std::uint32_t size)
{
    if (size < 1) {
        throw ValidationError("extract_crop: size must be >= 1");
    }
    Crop crop{center_r, center_c, size, scene.bands, std::vector<float>(static_cast<std::size_t>(scene.bands) * size * size, 0.0f)};
    const std::int64_t r0 = center_r - size / 2;
    const std::int64_t c0 = center_c - size / 2;
    const std::int64_t H = scene.height;
    const std::int64_t W = scene.width;
    const std::int64_t cb = std::max<std::int64_t>(0, -c0);
    const std::int64_t ce = std::min<std::int64_t>(size, W - c0);
    if (ce <= cb) {
        return crop;
    }
    for (std::uint32_t b = 0; b < scene.bands; ++b) {
        for (std::uint32_t r = 0; r < size; ++r) {
            const std::int64_t sr = r0 + r;
            if (sr < 0 || sr >= H) {
                continue;
            }
            const float* src = &scene.data[b * scene.plane() + static_cast<std::size_t>(sr) * scene.width];
            float* dst = &crop.data[(static_cast<std::size_t>(b) * size + r) * size];
            for (std::int64_t c = cb; c < ce; ++c) {
                dst[c] = src[c0 + c];
            }
        }
    }
    return crop;
}

inline nlohmann::json tile_label_to_json(std::string_view scene_id, const TileLabel& t)
{
    return {{"scene_id", scene_id}, {"row", t.row}, {"col", t.col}, {"coverage", t.coverage}, {"label", to_string(t.label)}};
}

inline TileLabel tile_label_from_json(const nlohmann::json& j)
{
    return {j.at("row").get<std::uint32_t>(), j.at("col").get<std::uint32_t>(), j.at("coverage").get<double>(),
            tile_class_from_string(j.at("label").get<std::string>())};
}

// JSON-lines audit dump, one object per tile.
inline std::string tile_labels_jsonl(std::string_view scene_id, const std::vector<TileLabel>& labels)
{
    std::string out;
    for (const auto& t : labels) {
        out += tile_label_to_json(scene_id, t).dump();
        out += '\n';
    }
    return out;
}

}  // namespace tilecascade
