#pragma once

// Run configuration shared by every pipeline stage. See docs in README.md
// for the JSON schema.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/detail/binary.hpp"
#include "tilecascade/error.hpp"
#include "tilecascade/hpn.hpp"
#include "tilecascade/hrn.hpp"
#include "tilecascade/rng.hpp"
#include "tilecascade/synth.hpp"

namespace tilecascade {

// Raised for a required key that is absent; `key` is its dotted path.
class MissingKeyError : public ConfigError {
public:
    explicit MissingKeyError(const std::string& key) : ConfigError("missing config key '" + key + "'"), key_(key) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

struct RunPaths {
    // As written in the config file; relative entries resolve against base.
    std::string scenes;
    std::string polygons;
    std::string masks;  // optional; a scene without <masks>/<id>.scnr is fully valid
    std::string output;
    std::filesystem::path base;

    std::filesystem::path resolve(const std::string& p) const
    {
        const std::filesystem::path path(p);
        return path.is_absolute() ? path : base / path;
    }
    std::filesystem::path scene_file(const std::string& id) const { return resolve(scenes) / (id + ".scnr"); }
    std::filesystem::path polygon_file(const std::string& id) const { return resolve(polygons) / (id + ".json"); }
    std::filesystem::path mask_file(const std::string& id) const
    {
        return masks.empty() ? std::filesystem::path{} : resolve(masks) / (id + ".scnr");
    }
    std::filesystem::path out() const { return resolve(output); }
};

struct Splits {
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;

    std::vector<std::string> all() const
    {
        std::vector<std::string> v = train;
        v.insert(v.end(), validation.begin(), validation.end());
        v.insert(v.end(), test.begin(), test.end());
        return v;
    }
};

struct RunConfig {
    std::uint64_t seed = 0;
    RunPaths paths;
    Splits splits;
    HrnConfig hrn;
    HpnConfig hpn;
    SynthConfig synth;
    std::uint32_t synth_count = 30;

    // Per-stage seeds derived from the global seed and the stage name.
    std::uint64_t stage_seed(std::string_view stage) const noexcept { return derive_seed(seed, stage); }
};

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& j, const std::string& parent, const char* key)
{
    const std::string path = parent.empty() ? key : parent + "." + key;
    if (!j.is_object() || !j.contains(key)) {
        throw MissingKeyError(path);
    }
    return j.at(key);
}

template <class T>
void optional_field(const nlohmann::json& j, const char* key, T& field, const std::string& section)
{
    if (!j.contains(key)) return;
    try {
        field = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(section + "." + key + ": " + e.what());
    }
}

}  // namespace detail

inline nlohmann::json to_json(const HrnConfig& c)
{
    return {{"neg_pos_ratio", c.neg_pos_ratio}, {"epochs", c.epochs},       {"snapshot_interval", c.snapshot_interval},
            {"batch_size", c.batch_size},       {"lr", c.lr},               {"momentum", c.momentum},
            {"precision_floor", c.precision_floor}};
}

inline nlohmann::json to_json(const HpnConfig& c)
{
    return {{"crop_size", c.crop_size}, {"epochs", c.epochs},     {"batch_size", c.batch_size},
            {"lr", c.lr},               {"momentum", c.momentum}, {"accept_threshold", c.accept_threshold},
            {"negative_cap", c.negative_cap}, {"position_jitter", c.position_jitter}};
}

// Canonical form used for the fingerprint: every field with defaults filled
// in. The output directory is left out so a run can be relocated.
inline nlohmann::json canonical_json(const RunConfig& c)
{
    return {{"seed", c.seed},
            {"paths", {{"scenes", c.paths.scenes}, {"polygons", c.paths.polygons}, {"masks", c.paths.masks}}},
            {"splits", {{"train", c.splits.train}, {"validation", c.splits.validation}, {"test", c.splits.test}}},
            {"hrn", to_json(c.hrn)},
            {"hpn", to_json(c.hpn)},
            {"synth", to_json(c.synth)},
            {"synth_count", c.synth_count}};
}

// 16 hex digits of FNV-1a 64 over the sorted-key canonical JSON.
inline std::string fingerprint(const RunConfig& c)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(c).dump())));
    return buf;
}

inline RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir)
{
    using detail::optional_field;
    using detail::require;
    RunConfig c;
    try {
        c.seed = require(j, "", "seed").get<std::uint64_t>();
        const auto& paths = require(j, "", "paths");
        c.paths.scenes = require(paths, "paths", "scenes").get<std::string>();
        c.paths.polygons = require(paths, "paths", "polygons").get<std::string>();
        c.paths.output = require(paths, "paths", "output").get<std::string>();
        optional_field(paths, "masks", c.paths.masks, "paths");
        const auto& splits = require(j, "", "splits");
        c.splits.train = require(splits, "splits", "train").get<std::vector<std::string>>();
        c.splits.validation = require(splits, "splits", "validation").get<std::vector<std::string>>();
        c.splits.test = require(splits, "splits", "test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::type_error& e) {
        throw ConfigError(std::string("run config: ") + e.what());
    }
    c.paths.base = base_dir;

    if (j.contains("hrn")) {
        const auto& h = j.at("hrn");
        optional_field(h, "neg_pos_ratio", c.hrn.neg_pos_ratio, "hrn");
        optional_field(h, "epochs", c.hrn.epochs, "hrn");
        optional_field(h, "snapshot_interval", c.hrn.snapshot_interval, "hrn");
        optional_field(h, "batch_size", c.hrn.batch_size, "hrn");
        optional_field(h, "lr", c.hrn.lr, "hrn");
        optional_field(h, "momentum", c.hrn.momentum, "hrn");
        optional_field(h, "precision_floor", c.hrn.precision_floor, "hrn");
    }
    if (j.contains("hpn")) {
        const auto& h = j.at("hpn");
        optional_field(h, "crop_size", c.hpn.crop_size, "hpn");
        optional_field(h, "epochs", c.hpn.epochs, "hpn");
        optional_field(h, "batch_size", c.hpn.batch_size, "hpn");
        optional_field(h, "lr", c.hpn.lr, "hpn");
        optional_field(h, "momentum", c.hpn.momentum, "hpn");
        optional_field(h, "accept_threshold", c.hpn.accept_threshold, "hpn");
        optional_field(h, "negative_cap", c.hpn.negative_cap, "hpn");
        optional_field(h, "position_jitter", c.hpn.position_jitter, "hpn");
    }
    if (j.contains("synth")) {
        c.synth = synth_config_from_json(j.at("synth"));
    }
    optional_field(j, "synth_count", c.synth_count, "");
    c.hrn.seed = c.stage_seed("train-hrn");
    c.hpn.seed = c.stage_seed("train-hpn");
    if (!j.contains("synth") || !j.at("synth").contains("seed")) {
        c.synth.seed = c.stage_seed("synth");
    }
    c.hrn.validate();
    c.hpn.validate();
    c.synth.validate();

    std::set<std::string> seen;
    for (const auto& id : c.splits.all()) {
        if (!seen.insert(id).second) {
            throw ConfigError("splits: scene '" + id + "' appears more than once");
        }
    }
    if (c.splits.train.empty()) throw ConfigError("splits.train is empty");
    if (c.splits.validation.empty()) throw ConfigError("splits.validation is empty");
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j, path.parent_path());
}

}  // namespace tilecascade
