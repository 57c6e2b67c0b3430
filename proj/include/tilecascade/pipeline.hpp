#pragma once

// File-based pipeline stages. Every stage reads its inputs from the scene
// directories and the outputs of earlier stages, writes its own outputs under
// the run's output directory, and finishes by writing stages/<name>.json with
// the config fingerprint. `run_pipeline` skips a stage whose marker carries
// the current fingerprint.
//
// Output layout (relative to paths.output):
//   labels/<id>.jsonl              tile labels
//   hrn/hrn_epoch_NNNN.cnnc        HRN snapshots
//   hrn/snapshots.jsonl            snapshot records
//   hrn/selected.json              selected snapshot
//   mine/{train,validation}.jsonl  mined-negative manifests
//   mine/crops/<split>/<id>_NNNN.scnr
//   hpn/hpn_final.cnnc, hpn/hpn_best.cnnc, hpn/train.json
//   scores/<id>.scnr               HRN score grids of test scenes
//   detections/<id>.json           detection sets
//   report.json, report.txt        metrics

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/cascade.hpp"
#include "tilecascade/config.hpp"
#include "tilecascade/detail/binary.hpp"
#include "tilecascade/error.hpp"
#include "tilecascade/eval.hpp"
#include "tilecascade/hpn.hpp"
#include "tilecascade/hrn.hpp"
#include "tilecascade/raster.hpp"
#include "tilecascade/tiling.hpp"

namespace tilecascade {

namespace fs = std::filesystem;

// A stage failed; `stage` names it.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& msg) : Error("stage '" + stage + "' failed: " + msg), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

inline const std::vector<std::string>& stage_names()
{
    static const std::vector<std::string> names = {"label", "train-hrn", "select", "mine", "train-hpn", "detect", "evaluate"};
    return names;
}

struct RunContext {
    RunConfig cfg;
    std::string fp;  // fingerprint(cfg)
    std::ostream* log = nullptr;

    explicit RunContext(RunConfig c, std::ostream* l = nullptr) : cfg(std::move(c)), fp(fingerprint(cfg)), log(l) {}

    fs::path out() const { return cfg.paths.out(); }
    fs::path marker(const std::string& stage) const { return out() / "stages" / (stage + ".json"); }

    template <class... Args>
    void note(const std::string& stage, const char* fmt, Args... args) const
    {
        if (!log) return;
        *log << "[" << stage << "] ";
        if constexpr (sizeof...(Args) == 0) {
            *log << fmt;
        } else {
            char buf[512];
            std::snprintf(buf, sizeof buf, fmt, args...);
            *log << buf;
        }
        *log << '\n';
    }
};

namespace detail {

inline std::string jsonl(const std::vector<nlohmann::json>& rows)
{
    std::string s;
    for (const auto& r : rows) {
        s += r.dump();
        s += '\n';
    }
    return s;
}

inline std::vector<nlohmann::json> read_jsonl(const fs::path& path)
{
    std::vector<nlohmann::json> rows;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            rows.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
    }
    return rows;
}

inline nlohmann::json read_json(const fs::path& path)
{
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// Rejects a stage output written under a different configuration.
inline void require_config(const nlohmann::json& j, const std::string& fp, const fs::path& source)
{
    if (!j.contains("config") || j.at("config") != fp) {
        throw StateError(source.string() + " was produced with a different config fingerprint (expected " + fp + ")");
    }
}

inline void require_file(const fs::path& p, const std::string& what)
{
    if (!fs::exists(p)) {
        throw StateError("missing " + what + " (" + p.string() + ")");
    }
}

inline std::string numbered(const std::string& id, std::size_t k, const char* ext)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04zu%s", k, ext);
    return id + buf;
}

}  // namespace detail

struct SceneBundle {
    Scene scene;
    std::optional<ValidityMask> validity;
    PolygonSet polygons;

    const ValidityMask* mask() const noexcept { return validity ? &*validity : nullptr; }
};

inline SceneBundle load_bundle(const RunConfig& cfg, const std::string& id)
{
    SceneBundle b;
    detail::require_file(cfg.paths.scene_file(id), "scene " + id);
    b.scene = read_scene(cfg.paths.scene_file(id));
    detail::require_file(cfg.paths.polygon_file(id), "polygons for scene " + id);
    b.polygons = read_polygons(cfg.paths.polygon_file(id));
    const auto mask = cfg.paths.mask_file(id);
    if (!mask.empty() && fs::exists(mask)) {
        b.validity = read_validity(mask);
        if (b.validity->height != b.scene.height || b.validity->width != b.scene.width) {
            throw ValidationError("validity mask of " + id + " does not match the scene dimensions");
        }
    }
    return b;
}

inline std::vector<TileLabel> read_labels(const RunContext& ctx, const std::string& id)
{
    const auto path = ctx.out() / "labels" / (id + ".jsonl");
    detail::require_file(path, "tile labels for " + id);
    std::vector<TileLabel> out;
    for (const auto& row : detail::read_jsonl(path)) {
        detail::require_config(row, ctx.fp, path);
        out.push_back(tile_label_from_json(row));
    }
    return out;
}

inline LabeledScene load_labeled(const RunContext& ctx, const std::string& id)
{
    auto b = load_bundle(ctx.cfg, id);
    auto labels = read_labels(ctx, id);
    if (labels.size() != grid_scene(b.scene).size()) {
        throw StateError("tile labels for " + id + " do not match its grid");
    }
    return {std::move(b.scene), std::move(b.validity), std::move(labels)};
}

// ---------------------------------------------------------------------------
// Stages

inline void stage_label(const RunContext& ctx)
{
    for (const auto& id : ctx.cfg.splits.all()) {
        const auto b = load_bundle(ctx.cfg, id);
        const auto grid = grid_scene(b.scene);
        const auto gt = rasterize(b.polygons, b.scene.height, b.scene.width);
        std::vector<nlohmann::json> rows;
        std::size_t pos = 0;
        for (const auto& t : label_tiles(grid, gt, b.mask())) {
            auto j = tile_label_to_json(id, t);
            j["config"] = ctx.fp;
            rows.push_back(std::move(j));
            pos += t.label == TileClass::positive ? 1 : 0;
        }
        detail::write_file(ctx.out() / "labels" / (id + ".jsonl"), detail::jsonl(rows));
        ctx.note("label", "%s: %zu tiles, %zu positive", id.c_str(), rows.size(), pos);
    }
}

inline void stage_train_hrn(const RunContext& ctx)
{
    std::vector<LabeledScene> train;
    std::vector<LabeledScene> val;
    for (const auto& id : ctx.cfg.splits.train) train.push_back(load_labeled(ctx, id));
    for (const auto& id : ctx.cfg.splits.validation) val.push_back(load_labeled(ctx, id));
    const auto dir = ctx.out() / "hrn";
    const auto result = train_hrn(train, val, ctx.cfg.hrn, dir, ctx.fp);
    std::vector<nlohmann::json> rows;
    for (const auto& r : result.snapshots) {
        auto rec = r;
        rec.path = fs::path(r.path).lexically_relative(ctx.out()).generic_string();
        auto j = to_json(rec);
        j["config"] = ctx.fp;
        rows.push_back(std::move(j));
        ctx.note("train-hrn", "epoch %d: val recall %.4f precision %.4f", r.epoch, r.recall, r.precision);
    }
    detail::write_file(dir / "snapshots.jsonl", detail::jsonl(rows));
    nlohmann::json losses = {{"config", ctx.fp}, {"epoch_losses", result.epoch_losses}};
    detail::write_file(dir / "train.json", losses.dump(2) + "\n");
}

inline void stage_select(const RunContext& ctx)
{
    const auto path = ctx.out() / "hrn" / "snapshots.jsonl";
    detail::require_file(path, "HRN snapshot records");
    std::vector<SnapshotRecord> records;
    for (const auto& row : detail::read_jsonl(path)) {
        detail::require_config(row, ctx.fp, path);
        records.push_back(snapshot_from_json(row));
    }
    const auto sel = select_snapshot(records, ctx.cfg.hrn.precision_floor);
    auto j = to_json(sel.record);
    j["degraded"] = sel.degraded;
    j["config"] = ctx.fp;
    detail::write_file(ctx.out() / "hrn" / "selected.json", j.dump(2) + "\n");
    ctx.note("select", "epoch %d (recall %.4f, precision %.4f)%s", sel.record.epoch, sel.record.recall, sel.record.precision,
             sel.degraded ? " [degraded: no snapshot met the precision floor]" : "");
}

inline nn::Network load_selected_hrn(const RunContext& ctx)
{
    const auto path = ctx.out() / "hrn" / "selected.json";
    detail::require_file(path, "selected HRN (run select first)");
    const auto j = detail::read_json(path);
    detail::require_config(j, ctx.fp, path);
    auto ck = nn::load_checkpoint(ctx.out() / j.at("path").get<std::string>());
    if (ck.meta.train_config_hash != ctx.fp) {
        throw StateError("selected HRN checkpoint was trained under a different config");
    }
    return std::move(ck.network);
}

inline nn::Network load_final_hpn(const RunContext& ctx)
{
    const auto path = ctx.out() / "hpn" / "hpn_final.cnnc";
    detail::require_file(path, "HPN checkpoint (run train-hpn first)");
    auto ck = nn::load_checkpoint(path);
    if (ck.meta.train_config_hash != ctx.fp) {
        throw StateError("HPN checkpoint was trained under a different config");
    }
    return std::move(ck.network);
}

inline void stage_mine(const RunContext& ctx)
{
    const auto hrn = load_selected_hrn(ctx);
    const std::uint32_t crop = ctx.cfg.hpn.crop_size;
    auto mine_split = [&](const std::vector<std::string>& ids, const std::string& split) {
        std::vector<nlohmann::json> rows;
        for (const auto& id : ids) {
            const auto s = load_labeled(ctx, id);
            const auto grid = infer_dense(hrn, s.scene, s.mask());
            const auto negs = mine_negatives(grid, s.labels, s.scene, crop);
            for (std::size_t k = 0; k < negs.size(); ++k) {
                const auto name = detail::numbered(id, k, ".scnr");
                Scene c(fs::path(name).stem().string(), negs[k].crop.bands, crop, crop);
                c.data = negs[k].crop.data;
                write_scene(c, ctx.out() / "mine" / "crops" / split / name);
                auto j = to_json(negs[k]);
                j["config"] = ctx.fp;
                j["crop"] = (fs::path("mine") / "crops" / split / name).generic_string();
                rows.push_back(std::move(j));
            }
            ctx.note("mine", "%s (%s): %zu false-positive regions", id.c_str(), split.c_str(), negs.size());
        }
        detail::write_file(ctx.out() / "mine" / (split + ".jsonl"), detail::jsonl(rows));
    };
    mine_split(ctx.cfg.splits.train, "train");
    mine_split(ctx.cfg.splits.validation, "validation");
}

inline std::vector<MinedNegative> read_mined(const RunContext& ctx, const std::string& split)
{
    const auto path = ctx.out() / "mine" / (split + ".jsonl");
    detail::require_file(path, "mined-negative manifest (run mine first)");
    std::vector<MinedNegative> out;
    for (const auto& row : detail::read_jsonl(path)) {
        detail::require_config(row, ctx.fp, path);
        const auto s = read_scene(ctx.out() / row.at("crop").get<std::string>());
        if (s.height != s.width) throw FormatError("mined crop is not square");
        Crop c{row.at("center_r").get<std::int64_t>(), row.at("center_c").get<std::int64_t>(), s.height, s.bands, s.data};
        out.push_back({row.at("scene_id").get<std::string>(), std::move(c), row.at("region_tile_count").get<std::uint32_t>()});
    }
    return out;
}

// HPN training inputs before the negative cap is applied.
struct HpnInputs {
    std::vector<AugmentedExample> positives;  // D4-augmented GT crops of the training split
    std::vector<MinedNegative> negatives;     // mined from the training split
    std::vector<AugmentedExample> validation;
};

inline HpnInputs hpn_inputs(const RunContext& ctx)
{
    const std::uint32_t crop = ctx.cfg.hpn.crop_size;
    std::vector<AugmentedExample> positives;
    for (const auto& id : ctx.cfg.splits.train) {
        const auto b = load_bundle(ctx.cfg, id);
        for (const auto& skipped : positives_from_gt(b.scene, b.polygons, crop).skipped) {
            ctx.note("train-hpn", "warning: %s: polygon '%s' has zero area, skipped", id.c_str(), skipped.c_str());
        }
        auto aug = jittered_positives(b.scene, b.polygons, crop, ctx.cfg.hpn.position_jitter,
                                      derive_seed(ctx.cfg.hpn.seed, "jitter-" + id));
        positives.insert(positives.end(), aug.begin(), aug.end());
    }
    auto mined = read_mined(ctx, "train");
    if (mined.empty()) {
        // Background crops stand in when the HRN found no training false positives.
        ctx.note("train-hpn", "warning: no mined negatives in the training split, using background crops");
        const auto& ids = ctx.cfg.splits.train;
        const std::size_t per_scene = std::max<std::size_t>(1, positives.size() / kD4Order / ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const auto extra = random_background_negatives(read_scene(ctx.cfg.paths.scene_file(ids[i])), read_labels(ctx, ids[i]),
                                                           per_scene, derive_seed(ctx.cfg.hpn.seed, "train-background-" + ids[i]), crop);
            mined.insert(mined.end(), extra.begin(), extra.end());
        }
    }
    std::vector<AugmentedExample> val;
    std::size_t val_pos = 0;
    std::vector<SceneBundle> val_scenes;
    for (const auto& id : ctx.cfg.splits.validation) {
        auto b = load_bundle(ctx.cfg, id);
        for (const auto& c : positives_from_gt(b.scene, b.polygons, crop).crops) {
            val.push_back({c, true, 0, id});
            ++val_pos;
        }
        val_scenes.push_back(std::move(b));
    }
    auto val_neg = read_mined(ctx, "validation");
    if (val_neg.empty()) {
        // Background crops stand in when the HRN found no validation false positives.
        for (std::size_t i = 0; i < val_scenes.size(); ++i) {
            const auto labels = read_labels(ctx, ctx.cfg.splits.validation[i]);
            const auto extra = random_background_negatives(val_scenes[i].scene, labels, std::max<std::size_t>(1, val_pos / val_scenes.size()),
                                                           derive_seed(ctx.cfg.hpn.seed, i), crop);
            val_neg.insert(val_neg.end(), extra.begin(), extra.end());
        }
    }
    for (const auto& n : val_neg) val.push_back({n.crop, false, 0, n.scene_id});
    return {std::move(positives), std::move(mined), std::move(val)};
}

inline void stage_train_hpn(const RunContext& ctx)
{
    auto in = hpn_inputs(ctx);
    const auto train = assemble_hpn_set(std::move(in.positives), in.negatives, ctx.cfg.hpn.negative_cap,
                                        derive_seed(ctx.cfg.hpn.seed, "negative-cap"));
    const auto& val = in.validation;
    const auto npos = std::count_if(train.begin(), train.end(), [](const auto& e) { return e.positive; });
    ctx.note("train-hpn", "%zu positives (augmented), %zu negatives, %zu validation examples", static_cast<std::size_t>(npos),
             train.size() - static_cast<std::size_t>(npos), val.size());
    const auto result = train_hpn(train, val, ctx.cfg.hpn, ctx.out() / "hpn", ctx.fp);
    for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
        ctx.note("train-hpn", "epoch %zu: loss %.5f val accuracy %.4f", e + 1, result.epoch_losses[e],
                 e < result.val_accuracy.size() ? result.val_accuracy[e] : 0.0);
    }
    nlohmann::json summary = {{"config", ctx.fp},
                              {"final", "hpn/hpn_final.cnnc"},
                              {"best", "hpn/hpn_best.cnnc"},
                              {"best_epoch", result.best_epoch},
                              {"best_val_accuracy", result.best_val_accuracy},
                              {"epoch_losses", result.epoch_losses},
                              {"val_accuracy", result.val_accuracy}};
    detail::write_file(ctx.out() / "hpn" / "train.json", summary.dump(2) + "\n");
}

inline CascadeConfig cascade_config(const RunContext& ctx)
{
    CascadeConfig c;
    c.crop_size = ctx.cfg.hpn.crop_size;
    c.accept_threshold = ctx.cfg.hpn.accept_threshold;
    c.fingerprint = ctx.fp;
    return c;
}

// Detects in `ids`, or in every test scene when `ids` is empty.
inline void stage_detect(const RunContext& ctx, std::vector<std::string> ids = {})
{
    if (ids.empty()) ids = ctx.cfg.splits.test;
    const auto hrn = load_selected_hrn(ctx);
    const auto hpn = load_final_hpn(ctx);
    const auto cc = cascade_config(ctx);
    for (const auto& id : ids) {
        const auto b = load_bundle(ctx.cfg, id);
        const auto scores = infer_dense(hrn, b.scene, b.mask());
        write_score_grid(scores, ctx.out() / "scores" / (id + ".scnr"));
        const auto dets = detect_from_scores(b.scene, scores, hpn, cc);
        write_detections(dets, ctx.out() / "detections" / (id + ".json"));
        ctx.note("detect", "%s: %zu detections", id.c_str(), dets.detections.size());
    }
}

inline MetricsReport stage_evaluate(const RunContext& ctx)
{
    std::vector<std::pair<std::string, MetricsCounts>> per_scene;
    for (const auto& id : ctx.cfg.splits.test) {
        const auto path = ctx.out() / "detections" / (id + ".json");
        detail::require_file(path, "detections for scene " + id + " (run detect first)");
        const auto dets = read_detections(path);
        if (dets.config != ctx.fp) {
            throw StateError(path.string() + " was produced with a different config fingerprint (expected " + ctx.fp + ")");
        }
        const auto b = load_bundle(ctx.cfg, id);
        const auto gt = rasterize(b.polygons, b.scene.height, b.scene.width);
        per_scene.emplace_back(id, match(dets, b.polygons, gt, b.mask()));
    }
    if (per_scene.empty()) {
        throw ConfigError("splits.test is empty");
    }
    const auto rep = report(per_scene, ctx.fp);
    detail::write_file(ctx.out() / "report.json", to_json(rep).dump(2) + "\n");
    const auto table = to_table(rep);
    detail::write_file(ctx.out() / "report.txt", table);
    if (ctx.log) *ctx.log << table;
    return rep;
}

// Runs one stage and records its marker; failures become StageError.
inline void run_stage(const RunContext& ctx, const std::string& name)
{
    try {
        if (name == "label") stage_label(ctx);
        else if (name == "train-hrn") stage_train_hrn(ctx);
        else if (name == "select") stage_select(ctx);
        else if (name == "mine") stage_mine(ctx);
        else if (name == "train-hpn") stage_train_hpn(ctx);
        else if (name == "detect") stage_detect(ctx);
        else if (name == "evaluate") stage_evaluate(ctx);
        else throw ConfigError("unknown stage '" + name + "'");
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(name, e.what());
    }
    const nlohmann::json marker = {{"stage", name}, {"config", ctx.fp}};
    detail::write_file(ctx.marker(name), marker.dump() + "\n");
}

inline bool stage_done(const RunContext& ctx, const std::string& name)
{
    if (!fs::exists(ctx.marker(name))) return false;
    try {
        const auto j = detail::read_json(ctx.marker(name));
        return j.value("config", std::string{}) == ctx.fp;
    } catch (const Error&) {
        return false;
    }
}

struct PipelineResult {
    std::vector<std::string> ran;
    std::vector<std::string> skipped;
};

inline PipelineResult run_pipeline(const RunContext& ctx, bool force = false)
{
    PipelineResult r;
    bool upstream_ran = false;
    for (const auto& name : stage_names()) {
        // A rerun stage invalidates everything downstream of it.
        if (!force && !upstream_ran && stage_done(ctx, name)) {
            ctx.note(name, "up to date, skipped");
            r.skipped.push_back(name);
            continue;
        }
        ctx.note(name, "running");
        run_stage(ctx, name);
        r.ran.push_back(name);
        upstream_ran = true;
    }
    return r;
}

}  // namespace tilecascade
