#pragma once

// High recall network: a 4-conv fully convolutional tile classifier whose
// output grid coincides with the 16x16 tile grid.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/error.hpp"
#include "tilecascade/nn/checkpoint.hpp"
#include "tilecascade/nn/network.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/regions.hpp"
#include "tilecascade/rng.hpp"
#include "tilecascade/tiling.hpp"

namespace tilecascade {

inline constexpr int kPositiveClass = 1;

struct HrnConfig {
    double neg_pos_ratio = 18.0;
    int epochs = 100;
    int snapshot_interval = 10;
    int batch_size = 64;
    float lr = 0.01f;
    float momentum = 0.9f;
    std::uint64_t seed = 0;
    double precision_floor = 0.5;

    void validate() const
    {
        if (!(neg_pos_ratio > 0.0)) throw ConfigError("hrn: neg_pos_ratio must be > 0");
        if (epochs < 1) throw ConfigError("hrn: epochs must be >= 1");
        if (snapshot_interval < 1 || epochs % snapshot_interval != 0) {
            throw ConfigError("hrn: snapshot_interval must divide epochs");
        }
        if (batch_size < 1) throw ConfigError("hrn: batch_size must be >= 1");
        if (!(lr >= 0.0f) || !(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("hrn: invalid lr/momentum");
        if (!(precision_floor >= 0.0 && precision_floor <= 1.0)) throw ConfigError("hrn: precision_floor outside [0, 1]");
    }
};

// [conv3x3 p1 -> relu -> maxpool2] with 16, 32, 32 channels, a fourth
// maxpool2, then a 1x1 conv to 2 logits. Net downsampling is 16: a 16x16 tile
// gives one logit pair and an HxW scene gives floor(H/16) x floor(W/16).
inline nn::Network build_hrn(std::uint32_t bands, std::uint64_t seed)
{
    if (bands < 1) {
        throw ValidationError("build_hrn: bands must be >= 1");
    }
    using nn::LayerSpec;
    std::vector<LayerSpec> layers = {
        LayerSpec::conv(bands, 16, 3, 1), LayerSpec::relu(), LayerSpec::maxpool2(),
        LayerSpec::conv(16, 32, 3, 1),    LayerSpec::relu(), LayerSpec::maxpool2(),
        LayerSpec::conv(32, 32, 3, 1),    LayerSpec::relu(), LayerSpec::maxpool2(),
        LayerSpec::maxpool2(),            LayerSpec::conv(32, 2, 1, 0),
    };
    return nn::Network(std::move(layers), {1, static_cast<int>(bands), static_cast<int>(kTileSize), static_cast<int>(kTileSize)},
                       seed);
}

// A tile of a particular scene in a multi-scene training set.
struct SceneTile {
    std::size_t scene = 0;
    TileLabel tile;
    friend bool operator==(const SceneTile&, const SceneTile&) = default;
};

// Keeps every positive and a uniform sample (without replacement) of
// min(available, floor(ratio * positives)) negatives. Ignored and invalid
// tiles are dropped. Output: positives then negatives, each in input order.
inline std::vector<SceneTile> sample_training_set(std::span<const SceneTile> tiles, double ratio, std::uint64_t seed)
{
    if (!(ratio > 0.0)) {
        throw ConfigError("sample_training_set: ratio must be > 0");
    }
    std::vector<SceneTile> pos;
    std::vector<std::size_t> neg;
    for (std::size_t i = 0; i < tiles.size(); ++i) {
        if (tiles[i].tile.label == TileClass::positive) {
            pos.push_back(tiles[i]);
        } else if (tiles[i].tile.label == TileClass::negative) {
            neg.push_back(i);
        }
    }
    if (pos.empty()) {
        throw ConfigError("sample_training_set: no positive tiles");
    }
    const auto want = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(pos.size()) + 1e-9));
    const std::size_t keep = std::min(want, neg.size());
    // Partial Fisher-Yates: the first `keep` slots become the sample.
    Rng rng(seed);
    for (std::size_t i = 0; i < keep; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(neg.size() - i));
        std::swap(neg[i], neg[j]);
    }
    neg.resize(keep);
    std::sort(neg.begin(), neg.end());
    for (std::size_t i : neg) {
        pos.push_back(tiles[i]);
    }
    return pos;
}

// ---------------------------------------------------------------------------
// Dense inference

inline nn::Tensor scene_tensor(const Scene& scene)
{
    return nn::Tensor({1, static_cast<int>(scene.bands), static_cast<int>(scene.height), static_cast<int>(scene.width)},
                      scene.data);
}

// Runs the FCN once over the whole scene. Tiles touching invalid pixels get
// probability 0.
inline ScoreGrid infer_dense(const nn::Network& net, const Scene& scene, const ValidityMask* validity = nullptr)
{
    const TileGrid grid = grid_scene(scene);
    ScoreGrid out(scene.scene_id, grid.rows, grid.cols);
    if (grid.empty()) {
        return out;
    }
    if (validity && (validity->height != scene.height || validity->width != scene.width)) {
        throw ValidationError("infer_dense: validity mask dimensions do not match the scene");
    }
    const auto logits = nn::forward(net, scene_tensor(scene));
    if (logits.shape.c != 2 || logits.shape.h < static_cast<int>(grid.rows) || logits.shape.w < static_cast<int>(grid.cols)) {
        throw ValidationError("infer_dense: network output " + logits.shape.str() + " does not cover the tile grid");
    }
    const auto prob = nn::softmax_prob(logits, kPositiveClass);
    for (std::uint32_t r = 0; r < grid.rows; ++r) {
        for (std::uint32_t c = 0; c < grid.cols; ++c) {
            out.at(r, c) = prob[static_cast<std::size_t>(r) * logits.shape.w + c];
        }
    }
    if (validity) {
        const std::uint32_t ts = grid.tile_size;
        for (std::uint32_t r = 0; r < grid.rows; ++r) {
            for (std::uint32_t c = 0; c < grid.cols; ++c) {
                bool ok = true;
                for (std::uint32_t y = r * ts; y < (r + 1) * ts && ok; ++y) {
                    for (std::uint32_t x = c * ts; x < (c + 1) * ts; ++x) {
                        if (!validity->at(y, x)) {
                            ok = false;
                            break;
                        }
                    }
                }
                if (!ok) {
                    out.at(r, c) = 0.0f;
                }
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

// One scene prepared for HRN training or validation.
struct LabeledScene {
    Scene scene;
    std::optional<ValidityMask> validity;
    std::vector<TileLabel> labels;  // row-major over grid_scene(scene)

    const ValidityMask* mask() const noexcept { return validity ? &*validity : nullptr; }
};

struct SnapshotRecord {
    int epoch = 0;
    std::string path;
    double recall = 0.0;
    double precision = 0.0;

    friend bool operator==(const SnapshotRecord&, const SnapshotRecord&) = default;
};

inline nlohmann::json to_json(const SnapshotRecord& r)
{
    return {{"epoch", r.epoch}, {"path", r.path}, {"recall", r.recall}, {"precision", r.precision}};
}

inline SnapshotRecord snapshot_from_json(const nlohmann::json& j)
{
    return {j.at("epoch").get<int>(), j.at("path").get<std::string>(), j.at("recall").get<double>(),
            j.at("precision").get<double>()};
}

struct TileScore {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;

    double recall() const noexcept { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
    double precision() const noexcept { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
};

// Tile-level confusion over positive and negative tiles; ignored and invalid
// tiles do not count.
inline TileScore score_tiles(const ScoreGrid& grid, std::span<const TileLabel> labels, double threshold = kDecisionThreshold)
{
    if (labels.size() != grid.prob_positive.size()) {
        throw ValidationError("score_tiles: label count does not match the score grid");
    }
    TileScore s;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool pred = grid.prob_positive[i] >= threshold;
        if (labels[i].label == TileClass::positive) {
            (pred ? s.tp : s.fn) += 1;
        } else if (labels[i].label == TileClass::negative) {
            (pred ? s.fp : s.tn) += 1;
        }
    }
    return s;
}

inline TileScore validate_hrn(const nn::Network& net, std::span<const LabeledScene> scenes)
{
    TileScore total;
    for (const auto& s : scenes) {
        const auto grid = infer_dense(net, s.scene, s.mask());
        const auto part = score_tiles(grid, s.labels);
        total.tp += part.tp;
        total.fp += part.fp;
        total.fn += part.fn;
        total.tn += part.tn;
    }
    return total;
}

// Training presents every sampled tile with kTileContext pixels of real scene
// context on each side (zeros beyond the scene border). That context covers
// the HRN receptive field, so the logit a training tile receives is the one
// dense inference computes for it. Sampled tiles are grouped into windows of
// kTrainBlock x kTrainBlock tiles so neighbouring tiles share one forward pass.
inline constexpr std::uint32_t kTileContext = kTileSize;
inline constexpr std::uint32_t kTrainBlock = 4;

// Input window of side block * tile + 2 * context whose interior starts at
// tile (row0, col0); out-of-scene pixels are 0.
inline Crop tile_window(const Scene& scene, std::uint32_t row0, std::uint32_t col0, std::uint32_t block)
{
    const std::uint32_t side = block * kTileSize + 2 * kTileContext;
    const std::int64_t top = static_cast<std::int64_t>(row0) * kTileSize - kTileContext;
    const std::int64_t left = static_cast<std::int64_t>(col0) * kTileSize - kTileContext;
    return extract_crop(scene, top + side / 2, left + side / 2, side);
}

struct TrainWindow {
    std::size_t scene = 0;
    std::uint32_t row0 = 0;
    std::uint32_t col0 = 0;
    std::vector<std::uint32_t> cells;  // output-cell index within the (block+2)^2 logit grid
    std::vector<int> labels;
};

// Groups sampled tiles by window; windows are ordered by (scene, row0, col0).
inline std::vector<TrainWindow> group_windows(std::span<const SceneTile> samples, std::uint32_t block)
{
    std::map<std::tuple<std::size_t, std::uint32_t, std::uint32_t>, TrainWindow> by_key;
    const std::uint32_t out_side = block + 2;
    for (const auto& st : samples) {
        const std::uint32_t r0 = st.tile.row / block * block;
        const std::uint32_t c0 = st.tile.col / block * block;
        auto& w = by_key[{st.scene, r0, c0}];
        w.scene = st.scene;
        w.row0 = r0;
        w.col0 = c0;
        w.cells.push_back((st.tile.row - r0 + 1) * out_side + (st.tile.col - c0 + 1));
        w.labels.push_back(st.tile.label == TileClass::positive ? kPositiveClass : 0);
    }
    std::vector<TrainWindow> out;
    for (auto& [key, w] : by_key) out.push_back(std::move(w));
    return out;
}

struct HrnTrainResult {
    std::vector<SnapshotRecord> snapshots;
    std::vector<double> epoch_losses;  // mean minibatch loss per epoch
};

inline std::filesystem::path hrn_snapshot_path(const std::filesystem::path& dir, int epoch)
{
    char name[32];
    std::snprintf(name, sizeof name, "hrn_epoch_%04d.cnnc", epoch);
    return dir / name;
}

// Minibatch SGD over the sampled tiles. Each epoch shuffles the windows and
// fills minibatches with whole windows until they hold >= batch_size sampled
// tiles; the loss is the mean cross-entropy over those tiles. Every
// snapshot_interval epochs a checkpoint is written to `out_dir` and scored on
// the validation scenes at threshold 0.5.
inline HrnTrainResult train_hrn(std::span<const LabeledScene> train, std::span<const LabeledScene> validation,
                                const HrnConfig& cfg, const std::filesystem::path& out_dir,
                                const std::string& config_hash = {})
{
    cfg.validate();
    if (train.empty()) throw ConfigError("train_hrn: no training scenes");
    if (validation.empty()) throw ConfigError("train_hrn: no validation scenes");
    const std::uint32_t bands = train.front().scene.bands;
    std::vector<SceneTile> all;
    for (std::size_t s = 0; s < train.size(); ++s) {
        if (train[s].scene.bands != bands) throw ValidationError("train_hrn: scenes disagree on band count");
        if (train[s].labels.size() != grid_scene(train[s].scene).size()) {
            throw ValidationError("train_hrn: labels do not match the tile grid of " + train[s].scene.scene_id);
        }
        for (const auto& t : train[s].labels) {
            all.push_back({s, t});
        }
    }
    const auto samples = sample_training_set(all, cfg.neg_pos_ratio, derive_seed(cfg.seed, "hrn-sample"));
    auto windows = group_windows(samples, kTrainBlock);

    nn::Network net = build_hrn(bands, derive_seed(cfg.seed, "hrn-init"));
    auto velocity = nn::make_velocity(net);
    Rng order_rng(derive_seed(cfg.seed, "hrn-order"));
    const int side = static_cast<int>(kTrainBlock * kTileSize + 2 * kTileContext);
    const std::size_t out_plane = static_cast<std::size_t>(kTrainBlock + 2) * (kTrainBlock + 2);

    HrnTrainResult result;
    std::string last_good;
    std::vector<std::size_t> order(windows.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size();) {
            std::size_t end = start;
            std::size_t tiles = 0;
            while (end < order.size() && tiles < static_cast<std::size_t>(cfg.batch_size)) {
                tiles += windows[order[end]].cells.size();
                ++end;
            }
            const int n = static_cast<int>(end - start);
            nn::Tensor batch({n, static_cast<int>(bands), side, side});
            nn::Tensor picked({static_cast<int>(tiles), 2, 1, 1});
            std::vector<int> labels;
            std::vector<std::size_t> where;  // flat offset of each picked cell's class-0 logit
            labels.reserve(tiles);
            for (int k = 0; k < n; ++k) {
                const auto& w = windows[order[start + static_cast<std::size_t>(k)]];
                const auto crop = tile_window(train[w.scene].scene, w.row0, w.col0, kTrainBlock);
                std::copy(crop.data.begin(), crop.data.end(), batch.item(k));
                for (std::size_t i = 0; i < w.cells.size(); ++i) {
                    where.push_back(static_cast<std::size_t>(k) * 2 * out_plane + w.cells[i]);
                    labels.push_back(w.labels[i]);
                }
            }
            nn::LossResult<float> loss;
            try {
                const auto trace = nn::forward_traced(net, batch);
                const auto& logits = trace.output();
                for (std::size_t i = 0; i < where.size(); ++i) {
                    picked.values[2 * i] = logits.values[where[i]];
                    picked.values[2 * i + 1] = logits.values[where[i] + out_plane];
                }
                loss = nn::softmax_xent(picked, labels);
                nn::Tensor grad(logits.shape);
                for (std::size_t i = 0; i < where.size(); ++i) {
                    grad.values[where[i]] = loss.grad_logits.values[2 * i];
                    grad.values[where[i] + out_plane] = loss.grad_logits.values[2 * i + 1];
                }
                const auto grads = nn::backward(net, trace, grad, false);
                nn::sgd_step(net, grads.param_grads, cfg.lr, cfg.momentum, velocity);
            } catch (const NumericError& e) {
                throw NumericError(std::string("train_hrn: epoch ") + std::to_string(epoch) + ": " + e.what()
                                   + (last_good.empty() ? std::string(" (no snapshot yet)") : " (last good snapshot: " + last_good + ")"));
            }
            loss_sum += loss.loss;
            ++batches;
            start = end;
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)));

        if (epoch % cfg.snapshot_interval == 0) {
            const auto path = hrn_snapshot_path(out_dir, epoch);
            nn::save_checkpoint(net, {epoch, config_hash}, path);
            const auto score = validate_hrn(net, validation);
            result.snapshots.push_back({epoch, path.string(), score.recall(), score.precision()});
            last_good = path.string();
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Snapshot selection

struct SnapshotSelection {
    SnapshotRecord record;
    bool degraded = false;  // no record met the precision floor
};

// Highest recall among records with precision >= floor; ties go to higher
// precision, then the later epoch. If none qualifies, the max-precision
// record (ties: higher recall, later epoch) is returned flagged degraded.
inline SnapshotSelection select_snapshot(std::span<const SnapshotRecord> records, double precision_floor)
{
    if (records.empty()) {
        throw ValidationError("select_snapshot: no snapshot records");
    }
    const SnapshotRecord* best = nullptr;
    for (const auto& r : records) {
        if (r.precision < precision_floor) continue;
        if (!best || std::tie(r.recall, r.precision, r.epoch) > std::tie(best->recall, best->precision, best->epoch)) {
            best = &r;
        }
    }
    if (best) {
        return {*best, false};
    }
    for (const auto& r : records) {
        if (!best || std::tie(r.precision, r.recall, r.epoch) > std::tie(best->precision, best->recall, best->epoch)) {
            best = &r;
        }
    }
    return {*best, true};
}

}  // namespace tilecascade
