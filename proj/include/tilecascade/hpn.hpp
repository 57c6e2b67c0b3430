#pragma once

// High precision network: an 8-conv + fc classifier over 64x64 crops, with
// D4-augmented GT positives and negatives mined from HRN false positives.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/error.hpp"
#include "tilecascade/hrn.hpp"
#include "tilecascade/nn/checkpoint.hpp"
#include "tilecascade/nn/network.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/regions.hpp"
#include "tilecascade/rng.hpp"
#include "tilecascade/tiling.hpp"

namespace tilecascade {

inline constexpr std::uint32_t kCropSize = 64;
inline constexpr double kMinedNegativeCap = 2.7;  // negatives per positive
// Candidate centers are tile-quantized, so they sit up to half a tile from the
// object centroid; augmented positives are cropped within that distance.
inline constexpr std::uint32_t kPositionJitter = 8;

struct HpnConfig {
    std::uint32_t crop_size = kCropSize;
    int epochs = 60;
    int batch_size = 32;
    float lr = 0.01f;
    float momentum = 0.9f;
    std::uint64_t seed = 0;
    double accept_threshold = 0.5;
    double negative_cap = kMinedNegativeCap;
    std::uint32_t position_jitter = kPositionJitter;

    void validate() const
    {
        if (crop_size < 16 || crop_size % 16 != 0) throw ConfigError("hpn: crop_size must be a positive multiple of 16");
        if (epochs < 1) throw ConfigError("hpn: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("hpn: batch_size must be >= 1");
        if (!(lr >= 0.0f) || !(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("hpn: invalid lr/momentum");
        if (!(accept_threshold >= 0.0 && accept_threshold <= 1.0)) throw ConfigError("hpn: accept_threshold outside [0, 1]");
        if (!(negative_cap > 0.0)) throw ConfigError("hpn: negative_cap must be > 0");
        if (position_jitter > crop_size / 2) throw ConfigError("hpn: position_jitter must be <= crop_size / 2");
    }
};

// Four blocks of [conv3x3 p1 -> relu -> conv3x3 p1 -> relu -> maxpool2] with
// 16, 32, 64, 64 channels, then flatten and fc to 2 logits.
inline nn::Network build_hpn(std::uint32_t bands, std::uint64_t seed, std::uint32_t crop_size = kCropSize)
{
    if (bands < 1) {
        throw ValidationError("build_hpn: bands must be >= 1");
    }
    if (crop_size < 16 || crop_size % 16 != 0) {
        throw ValidationError("build_hpn: crop_size must be a positive multiple of 16");
    }
    using nn::LayerSpec;
    std::vector<LayerSpec> layers;
    std::uint32_t in = bands;
    for (std::uint32_t width : {16u, 32u, 64u, 64u}) {
        layers.push_back(LayerSpec::conv(in, width, 3, 1));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::conv(width, width, 3, 1));
        layers.push_back(LayerSpec::relu());
        layers.push_back(LayerSpec::maxpool2());
        in = width;
    }
    const std::uint32_t side = crop_size / 16;
    layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::fc(64 * side * side, 2));
    return nn::Network(std::move(layers), {1, static_cast<int>(bands), static_cast<int>(crop_size), static_cast<int>(crop_size)},
                       seed);
}

// ---------------------------------------------------------------------------
// D4 augmentation
//
// Element id t in [0, 8): rotation = t % 4 clockwise quarter turns, followed
// by a horizontal flip when t >= 4. Clockwise rot90: out[i][j] = in[n-1-j][i];
// hflip: out[i][j] = in[i][n-1-j].

inline constexpr int kD4Order = 8;

inline int d4_id(int quarter_turns, bool flip) noexcept
{
    return ((quarter_turns % 4 + 4) % 4) + (flip ? 4 : 0);
}

// The element equal to applying `first`, then `second`. Uses F R = R^-1 F.
inline int d4_compose(int first, int second) noexcept
{
    const int ka = first % 4;
    const int kb = second % 4;
    const bool fa = first >= 4;
    const bool fb = second >= 4;
    return fa ? d4_id(ka - kb, !fb) : d4_id(ka + kb, fb);
}

inline int d4_inverse(int t) noexcept
{
    return t >= 4 ? t : d4_id(-t, false);
}

inline Crop apply_d4(const Crop& crop, int t)
{
    if (t < 0 || t >= kD4Order) {
        throw ValidationError("apply_d4: transform id outside [0, 8)");
    }
    const std::uint32_t n = crop.size;
    if (crop.data.size() != static_cast<std::size_t>(crop.bands) * n * n) {
        throw ValidationError("apply_d4: crop is not square");
    }
    Crop out = crop;
    const int k = t % 4;
    const bool flip = t >= 4;
    for (std::uint32_t b = 0; b < crop.bands; ++b) {
        for (std::uint32_t i = 0; i < n; ++i) {
            for (std::uint32_t j = 0; j < n; ++j) {
                // Undo the flip, then undo k clockwise turns, to find the source.
                std::uint32_t si = i;
                std::uint32_t sj = flip ? n - 1 - j : j;
                for (int r = 0; r < k; ++r) {
                    const std::uint32_t pi = n - 1 - sj;
                    const std::uint32_t pj = si;
                    si = pi;
                    sj = pj;
                }
                out.at(b, i, j) = crop.at(b, si, sj);
            }
        }
    }
    return out;
}

struct AugmentedExample {
    Crop data;
    bool positive = false;
    int transform_id = 0;
    std::string scene_id;  // source scene; data.center_r/c is the source center

    friend bool operator==(const AugmentedExample&, const AugmentedExample&) = default;
};

// The 8-element D4 orbit of a positive crop, in transform-id order.
inline std::vector<AugmentedExample> d4_augment(const Crop& crop, const std::string& scene_id = {})
{
    std::vector<AugmentedExample> out;
    out.reserve(kD4Order);
    for (int t = 0; t < kD4Order; ++t) {
        out.push_back({apply_d4(crop, t), true, t, scene_id});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Positives

// Area centroid of the outer ring (holes ignored); nullopt for zero area.
inline std::optional<Point> polygon_centroid(const Polygon& poly)
{
    if (poly.rings.empty() || poly.rings.front().size() < 3) {
        return std::nullopt;
    }
    const Ring& ring = poly.rings.front();
    double a2 = 0.0;
    double cx = 0.0;
    double cy = 0.0;
    for (std::size_t i = 0; i < ring.size(); ++i) {
        const Point& p = ring[i];
        const Point& q = ring[(i + 1) % ring.size()];
        const double cross = p.x * q.y - q.x * p.y;
        a2 += cross;
        cx += (p.x + q.x) * cross;
        cy += (p.y + q.y) * cross;
    }
    if (std::abs(a2) < 1e-12) {
        return std::nullopt;
    }
    return Point{cx / (3.0 * a2), cy / (3.0 * a2)};
}

// Pixel whose area contains the point: x in [c, c + 1) maps to column c.
inline std::int64_t pixel_of(double coord) noexcept
{
    return static_cast<std::int64_t>(std::floor(coord));
}

struct PositiveCrops {
    std::vector<Crop> crops;
    std::vector<std::string> polygon_ids;  // parallel to crops
    std::vector<std::string> skipped;      // zero-area polygons
};

inline PositiveCrops positives_from_gt(const Scene& scene, const PolygonSet& polys, std::uint32_t crop_size = kCropSize)
{
    PositiveCrops out;
    for (const auto& p : polys.polygons) {
        const auto c = polygon_centroid(p);
        if (!c) {
            out.skipped.push_back(p.id);
            continue;
        }
        out.crops.push_back(extract_crop(scene, pixel_of(c->y), pixel_of(c->x), crop_size));
        out.polygon_ids.push_back(p.id);
    }
    return out;
}

// The D4 orbit of every positive crop, where transform t > 0 is applied to a
// crop whose center is shifted by a uniform offset in [-jitter, jitter] per
// axis. Transform 0 is the unshifted centroid crop. jitter 0 equals
// positives_from_gt followed by d4_augment.
inline std::vector<AugmentedExample> jittered_positives(const Scene& scene, const PolygonSet& polys, std::uint32_t crop_size,
                                                        std::uint32_t jitter, std::uint64_t seed)
{
    std::vector<AugmentedExample> out;
    Rng rng(seed);
    const auto j = static_cast<std::int64_t>(jitter);
    for (const auto& p : polys.polygons) {
        const auto c = polygon_centroid(p);
        if (!c) {
            continue;
        }
        for (int t = 0; t < kD4Order; ++t) {
            std::int64_t dr = 0;
            std::int64_t dc = 0;
            if (t > 0 && j > 0) {
                dr = rng.between(-j, j);
                dc = rng.between(-j, j);
            }
            const Crop crop = extract_crop(scene, pixel_of(c->y) + dr, pixel_of(c->x) + dc, crop_size);
            out.push_back({apply_d4(crop, t), true, t, scene.scene_id});
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Negative mining

struct MinedNegative {
    std::string scene_id;
    Crop crop;
    std::uint32_t region_tiles = 0;
};

inline nlohmann::json to_json(const MinedNegative& m)
{
    return {{"scene_id", m.scene_id},
            {"center_r", m.crop.center_r},
            {"center_c", m.crop.center_c},
            {"region_tile_count", m.region_tiles}};
}

// Crops at the centroids of candidate regions none of whose tiles has
// nonzero GT coverage.
inline std::vector<MinedNegative> mine_negatives(const ScoreGrid& grid, std::span<const TileLabel> labels, const Scene& scene,
                                                 std::uint32_t crop_size = kCropSize, double threshold = kDecisionThreshold)
{
    if (labels.size() != grid.prob_positive.size()) {
        throw ValidationError("mine_negatives: label count does not match the score grid");
    }
    std::vector<MinedNegative> out;
    for (const auto& region : candidates(grid, threshold)) {
        const bool touches_gt = std::any_of(region.tiles.begin(), region.tiles.end(), [&](const TileIndex& t) {
            return labels[static_cast<std::size_t>(t.row) * grid.cols + t.col].coverage > 0.0;
        });
        if (touches_gt) {
            continue;
        }
        out.push_back({scene.scene_id, extract_crop(scene, region.center_r, region.center_c, crop_size),
                       static_cast<std::uint32_t>(region.tiles.size())});
    }
    return out;
}

// Crops centered on uniformly drawn negative tiles; the mining-free baseline.
inline std::vector<MinedNegative> random_background_negatives(const Scene& scene, std::span<const TileLabel> labels,
                                                              std::size_t count, std::uint64_t seed,
                                                              std::uint32_t crop_size = kCropSize)
{
    std::vector<const TileLabel*> pool;
    for (const auto& t : labels) {
        if (t.label == TileClass::negative) pool.push_back(&t);
    }
    std::vector<MinedNegative> out;
    if (pool.empty()) {
        return out;
    }
    Rng rng(seed);
    const std::uint32_t half = kTileSize / 2;
    for (std::size_t i = 0; i < count; ++i) {
        const TileLabel& t = *pool[rng.below(pool.size())];
        out.push_back({scene.scene_id, extract_crop(scene, t.row * kTileSize + half, t.col * kTileSize + half, crop_size), 1});
    }
    return out;
}

// Positives followed by negatives. When negatives exceed cap * positives they
// are subsampled without replacement (original order preserved).
inline std::vector<AugmentedExample> assemble_hpn_set(std::vector<AugmentedExample> positives,
                                                      std::span<const MinedNegative> negatives, double cap, std::uint64_t seed)
{
    const auto limit = static_cast<std::size_t>(std::floor(cap * static_cast<double>(positives.size()) + 1e-9));
    std::vector<std::size_t> keep(negatives.size());
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = i;
    if (keep.size() > limit) {
        Rng rng(seed);
        for (std::size_t i = 0; i < limit; ++i) {
            std::swap(keep[i], keep[i + static_cast<std::size_t>(rng.below(keep.size() - i))]);
        }
        keep.resize(limit);
        std::sort(keep.begin(), keep.end());
    }
    for (std::size_t i : keep) {
        positives.push_back({negatives[i].crop, false, 0, negatives[i].scene_id});
    }
    return positives;
}

// ---------------------------------------------------------------------------
// Training and classification

inline void load_crop(const Crop& crop, nn::Tensor& batch, int n)
{
    if (crop.data.size() != batch.shape.item()) {
        throw ValidationError("crop of size " + std::to_string(crop.size) + "x" + std::to_string(crop.bands)
                              + " does not match network input " + batch.shape.str());
    }
    std::copy(crop.data.begin(), crop.data.end(), batch.item(n));
}

struct Classification {
    bool accept = false;
    double prob = 0.0;
    friend bool operator==(const Classification&, const Classification&) = default;
};

inline void require_crop_input(const nn::Network& net, const Crop& crop)
{
    const auto in = net.nominal_input();
    if (static_cast<int>(crop.bands) != in.c || static_cast<int>(crop.size) != in.h || static_cast<int>(crop.size) != in.w) {
        throw ValidationError("classify: crop " + std::to_string(crop.bands) + "x" + std::to_string(crop.size) + "x"
                              + std::to_string(crop.size) + " does not match network input " + in.str());
    }
}

// Positive-class probability of each crop, evaluated in batches. Items of a
// batch are computed independently, so batching does not change results.
inline std::vector<double> hpn_probabilities(const nn::Network& net, std::span<const Crop> crops, int batch_size = 32)
{
    std::vector<double> out;
    out.reserve(crops.size());
    const auto in = net.nominal_input();
    for (std::size_t start = 0; start < crops.size(); start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(crops.size(), start + static_cast<std::size_t>(batch_size));
        nn::Tensor batch({static_cast<int>(end - start), in.c, in.h, in.w});
        for (std::size_t i = start; i < end; ++i) {
            require_crop_input(net, crops[i]);
            load_crop(crops[i], batch, static_cast<int>(i - start));
        }
        const auto prob = nn::softmax_prob(nn::forward(net, batch), kPositiveClass);
        out.insert(out.end(), prob.begin(), prob.end());
    }
    return out;
}

inline Classification classify(const nn::Network& net, const Crop& crop, double threshold)
{
    const double p = hpn_probabilities(net, std::span<const Crop>(&crop, 1)).front();
    return {p >= threshold, p};
}

inline std::vector<Classification> classify_batch(const nn::Network& net, std::span<const Crop> crops, double threshold)
{
    std::vector<Classification> out;
    for (double p : hpn_probabilities(net, crops)) {
        out.push_back({p >= threshold, p});
    }
    return out;
}

inline double hpn_accuracy(const nn::Network& net, std::span<const AugmentedExample> examples, double threshold = kDecisionThreshold)
{
    if (examples.empty()) {
        return 0.0;
    }
    std::vector<Crop> crops;
    crops.reserve(examples.size());
    for (const auto& e : examples) crops.push_back(e.data);
    const auto prob = hpn_probabilities(net, crops);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        correct += ((prob[i] >= threshold) == examples[i].positive) ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(examples.size());
}

struct HpnTrainResult {
    std::string final_path;
    std::string best_path;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::vector<double> epoch_losses;
    std::vector<double> val_accuracy;  // per epoch; empty without validation data
};

// Minibatch SGD over the materialized example list. Writes hpn_final.cnnc and
// hpn_best.cnnc (highest validation accuracy, earliest epoch on ties) to
// `out_dir`.
inline HpnTrainResult train_hpn(std::span<const AugmentedExample> train, std::span<const AugmentedExample> validation,
                                const HpnConfig& cfg, const std::filesystem::path& out_dir, const std::string& config_hash = {})
{
    cfg.validate();
    const auto pos = std::count_if(train.begin(), train.end(), [](const auto& e) { return e.positive; });
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(train.size())) {
        throw ConfigError("train_hpn: training data must contain both positive and negative examples");
    }
    const std::uint32_t bands = train.front().data.bands;
    for (const auto& e : train) {
        if (e.data.bands != bands || e.data.size != cfg.crop_size) {
            throw ValidationError("train_hpn: example crop does not match crop_size/bands");
        }
    }
    nn::Network net = build_hpn(bands, derive_seed(cfg.seed, "hpn-init"), cfg.crop_size);
    auto velocity = nn::make_velocity(net);
    Rng order_rng(derive_seed(cfg.seed, "hpn-order"));
    const int side = static_cast<int>(cfg.crop_size);

    HpnTrainResult result;
    result.final_path = (out_dir / "hpn_final.cnnc").string();
    result.best_path = (out_dir / "hpn_best.cnnc").string();
    result.best_val_accuracy = -1.0;
    std::vector<std::size_t> order(train.size());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        order_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const int n = static_cast<int>(end - start);
            nn::Tensor batch({n, static_cast<int>(bands), side, side});
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (int k = 0; k < n; ++k) {
                const auto& e = train[order[start + static_cast<std::size_t>(k)]];
                load_crop(e.data, batch, k);
                labels[static_cast<std::size_t>(k)] = e.positive ? kPositiveClass : 0;
            }
            try {
                const auto trace = nn::forward_traced(net, batch);
                const auto loss = nn::softmax_xent(trace.output(), labels);
                const auto grads = nn::backward(net, trace, loss.grad_logits, false);
                nn::sgd_step(net, grads.param_grads, cfg.lr, cfg.momentum, velocity);
                loss_sum += loss.loss;
            } catch (const NumericError& e) {
                throw NumericError("train_hpn: epoch " + std::to_string(epoch) + ": " + e.what());
            }
            ++batches;
        }
        result.epoch_losses.push_back(loss_sum / static_cast<double>(std::max<std::size_t>(batches, 1)));
        if (!validation.empty()) {
            const double acc = hpn_accuracy(net, validation);
            result.val_accuracy.push_back(acc);
            if (acc > result.best_val_accuracy) {
                result.best_val_accuracy = acc;
                result.best_epoch = epoch;
                nn::save_checkpoint(net, {epoch, config_hash}, result.best_path);
            }
        }
    }
    nn::save_checkpoint(net, {cfg.epochs, config_hash}, result.final_path);
    if (validation.empty()) {
        result.best_epoch = cfg.epochs;
        result.best_val_accuracy = 0.0;
        nn::save_checkpoint(net, {cfg.epochs, config_hash}, result.best_path);
    }
    return result;
}

}  // namespace tilecascade
