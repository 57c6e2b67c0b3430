#pragma once

// Score grids and the candidate-region rule shared by detection and negative
// mining: threshold the grid, take 4-connected components, and represent each
// component by the centroid of its tile centers.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tilecascade/error.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/tiling.hpp"

namespace tilecascade {

inline constexpr double kDecisionThreshold = 0.5;

// Positive-class probability per tile, row-major.
struct ScoreGrid {
    std::string scene_id;
    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    std::uint32_t tile_size = kTileSize;
    std::vector<float> prob_positive;

    ScoreGrid() = default;
    ScoreGrid(std::string id, std::uint32_t r, std::uint32_t c, std::uint32_t ts = kTileSize)
        : scene_id(std::move(id)), rows(r), cols(c), tile_size(ts), prob_positive(static_cast<std::size_t>(r) * c, 0.0f)
    {
    }

    float at(std::uint32_t r, std::uint32_t c) const noexcept { return prob_positive[static_cast<std::size_t>(r) * cols + c]; }
    float& at(std::uint32_t r, std::uint32_t c) noexcept { return prob_positive[static_cast<std::size_t>(r) * cols + c]; }

    void validate() const
    {
        if (prob_positive.size() != static_cast<std::size_t>(rows) * cols) {
            throw ValidationError("score grid: value count does not match rows*cols");
        }
        for (float p : prob_positive) {
            if (!(p >= 0.0f && p <= 1.0f)) {
                throw ValidationError("score grid: probability outside [0, 1]");
            }
        }
    }

    friend bool operator==(const ScoreGrid&, const ScoreGrid&) = default;
};

// Dumped as a single-band SCNR raster at grid resolution.
inline void write_score_grid(const ScoreGrid& g, const std::filesystem::path& path)
{
    detail::write_file(path, detail::encode_scnr({1, g.rows, g.cols}, g.prob_positive));
}

inline ScoreGrid read_score_grid(const std::filesystem::path& path, std::uint32_t tile_size = kTileSize)
{
    detail::ScnrHeader h{};
    auto values = detail::decode_scnr(detail::read_file(path), path.string(), h);
    if (h.bands != 1) {
        throw ValidationError(path.string() + ": score grid must have 1 band");
    }
    ScoreGrid g(path.stem().string(), h.height, h.width, tile_size);
    g.prob_positive = std::move(values);
    g.validate();
    return g;
}

struct TileIndex {
    std::uint32_t row = 0;
    std::uint32_t col = 0;
    friend bool operator==(const TileIndex&, const TileIndex&) = default;
};

struct CandidateRegion {
    std::vector<TileIndex> tiles;  // in discovery order, first tile is the row-major minimum
    double centroid_y = 0.0;       // pixel-space mean of tile centers
    double centroid_x = 0.0;
    std::int64_t center_r = 0;     // pixel containing the centroid
    std::int64_t center_c = 0;

    friend bool operator==(const CandidateRegion&, const CandidateRegion&) = default;
};

// All 4-connected components of tiles with prob >= threshold, ordered by
// their row-major first tile. Tile (r, c) has its center at pixel-space
// (r * ts + ts / 2, c * ts + ts / 2).
inline std::vector<CandidateRegion> candidates(const ScoreGrid& grid, double threshold = kDecisionThreshold)
{
    grid.validate();
    const std::size_t n = grid.prob_positive.size();
    std::vector<std::uint8_t> seen(n, 0);
    std::vector<CandidateRegion> out;
    std::vector<TileIndex> stack;
    const double half = grid.tile_size / 2.0;
    auto hot = [&](std::uint32_t r, std::uint32_t c) { return grid.at(r, c) >= threshold; };
    for (std::uint32_t r = 0; r < grid.rows; ++r) {
        for (std::uint32_t c = 0; c < grid.cols; ++c) {
            const std::size_t k = static_cast<std::size_t>(r) * grid.cols + c;
            if (seen[k] || !hot(r, c)) {
                continue;
            }
            CandidateRegion region;
            seen[k] = 1;
            stack.push_back({r, c});
            while (!stack.empty()) {
                const TileIndex t = stack.back();
                stack.pop_back();
                region.tiles.push_back(t);
                const TileIndex nbrs[4] = {{t.row - 1, t.col}, {t.row + 1, t.col}, {t.row, t.col - 1}, {t.row, t.col + 1}};
                const bool ok[4] = {t.row > 0, t.row + 1 < grid.rows, t.col > 0, t.col + 1 < grid.cols};
                for (int i = 0; i < 4; ++i) {
                    if (!ok[i]) continue;
                    const std::size_t kk = static_cast<std::size_t>(nbrs[i].row) * grid.cols + nbrs[i].col;
                    if (!seen[kk] && hot(nbrs[i].row, nbrs[i].col)) {
                        seen[kk] = 1;
                        stack.push_back(nbrs[i]);
                    }
                }
            }
            double sy = 0.0;
            double sx = 0.0;
            for (const auto& t : region.tiles) {
                sy += t.row * static_cast<double>(grid.tile_size) + half;
                sx += t.col * static_cast<double>(grid.tile_size) + half;
            }
            region.centroid_y = sy / static_cast<double>(region.tiles.size());
            region.centroid_x = sx / static_cast<double>(region.tiles.size());
            region.center_r = static_cast<std::int64_t>(std::floor(region.centroid_y));
            region.center_c = static_cast<std::int64_t>(std::floor(region.centroid_x));
            out.push_back(std::move(region));
        }
    }
    return out;
}

}  // namespace tilecascade
