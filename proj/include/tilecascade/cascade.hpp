#pragma once

// Two-stage detection: dense HRN scores -> candidate regions -> one centroid
// crop per region -> HPN acceptance.

#include <concepts>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/detail/binary.hpp"
#include "tilecascade/error.hpp"
#include "tilecascade/hpn.hpp"
#include "tilecascade/hrn.hpp"
#include "tilecascade/regions.hpp"

namespace tilecascade {

// Half-open pixel rectangle [r0, r1) x [c0, c1).
struct BBox {
    std::int64_t r0 = 0;
    std::int64_t c0 = 0;
    std::int64_t r1 = 0;
    std::int64_t c1 = 0;
    friend bool operator==(const BBox&, const BBox&) = default;
};

// The window extract_crop reads for this center and size.
inline BBox crop_bbox(std::int64_t center_r, std::int64_t center_c, std::uint32_t size) noexcept
{
    const std::int64_t r0 = center_r - size / 2;
    const std::int64_t c0 = center_c - size / 2;
    return {r0, c0, r0 + size, c0 + size};
}

struct Detection {
    std::string scene_id;
    std::int64_t center_r = 0;
    std::int64_t center_c = 0;
    BBox bbox;
    std::uint32_t region_tiles = 0;
    double hpn_prob = 0.0;
    friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionSet {
    std::string scene_id;
    std::string config;  // run-config fingerprint
    std::vector<Detection> detections;
    friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

inline nlohmann::json to_json(const DetectionSet& set)
{
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : set.detections) {
        dets.push_back({{"center", {d.center_r, d.center_c}},
                        {"bbox", {d.bbox.r0, d.bbox.c0, d.bbox.r1, d.bbox.c1}},
                        {"hpn_prob", d.hpn_prob},
                        {"region_tiles", d.region_tiles}});
    }
    return {{"scene_id", set.scene_id}, {"config", set.config}, {"detections", std::move(dets)}};
}

inline DetectionSet detection_set_from_json(const nlohmann::json& j)
{
    try {
        DetectionSet set;
        set.scene_id = j.at("scene_id").get<std::string>();
        set.config = j.at("config").get<std::string>();
        for (const auto& jd : j.at("detections")) {
            Detection d;
            d.scene_id = set.scene_id;
            d.center_r = jd.at("center").at(0).get<std::int64_t>();
            d.center_c = jd.at("center").at(1).get<std::int64_t>();
            const auto& b = jd.at("bbox");
            d.bbox = {b.at(0).get<std::int64_t>(), b.at(1).get<std::int64_t>(), b.at(2).get<std::int64_t>(),
                      b.at(3).get<std::int64_t>()};
            d.hpn_prob = jd.at("hpn_prob").get<double>();
            d.region_tiles = jd.at("region_tiles").get<std::uint32_t>();
            set.detections.push_back(d);
        }
        return set;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("detection JSON: ") + e.what());
    }
}

inline void write_detections(const DetectionSet& set, const std::filesystem::path& path)
{
    detail::write_file(path, to_json(set).dump(2) + "\n");
}

inline DetectionSet read_detections(const std::filesystem::path& path)
{
    try {
        return detection_set_from_json(nlohmann::json::parse(detail::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

struct CascadeConfig {
    std::uint32_t crop_size = kCropSize;
    double hrn_threshold = kDecisionThreshold;
    double accept_threshold = kDecisionThreshold;
    // Several crops per large region instead of one at its centroid; not
    // implemented and rejected when set.
    bool per_tile_crops = false;
    std::string fingerprint;

    void validate() const
    {
        if (per_tile_crops) throw ConfigError("cascade: per_tile_crops is not supported");
        if (crop_size < 1) throw ConfigError("cascade: crop_size must be >= 1");
    }
};

// Second stage supplied as any callable mapping a crop to a positive-class
// probability; stubs and the HPN share this path.
template <class F>
concept CropScorer = std::invocable<F&, const Crop&> && std::convertible_to<std::invoke_result_t<F&, const Crop&>, double>;

template <CropScorer F>
DetectionSet detect_from_scores(const Scene& scene, const ScoreGrid& scores, F&& score, const CascadeConfig& cfg)
{
    cfg.validate();
    DetectionSet out{scene.scene_id, cfg.fingerprint, {}};
    for (const auto& region : candidates(scores, cfg.hrn_threshold)) {
        const Crop crop = extract_crop(scene, region.center_r, region.center_c, cfg.crop_size);
        const double p = static_cast<double>(score(crop));
        if (p >= cfg.accept_threshold) {
            out.detections.push_back({scene.scene_id, region.center_r, region.center_c,
                                      crop_bbox(region.center_r, region.center_c, cfg.crop_size),
                                      static_cast<std::uint32_t>(region.tiles.size()), p});
        }
    }
    return out;
}

// HRN + HPN with the crops of one scene classified in batches.
inline DetectionSet detect_from_scores(const Scene& scene, const ScoreGrid& scores, const nn::Network& hpn, const CascadeConfig& cfg)
{
    cfg.validate();
    const auto regions = candidates(scores, cfg.hrn_threshold);
    std::vector<Crop> crops;
    crops.reserve(regions.size());
    for (const auto& r : regions) {
        crops.push_back(extract_crop(scene, r.center_r, r.center_c, cfg.crop_size));
    }
    const auto prob = hpn_probabilities(hpn, crops);
    DetectionSet out{scene.scene_id, cfg.fingerprint, {}};
    for (std::size_t i = 0; i < regions.size(); ++i) {
        if (prob[i] >= cfg.accept_threshold) {
            out.detections.push_back({scene.scene_id, regions[i].center_r, regions[i].center_c,
                                      crop_bbox(regions[i].center_r, regions[i].center_c, cfg.crop_size),
                                      static_cast<std::uint32_t>(regions[i].tiles.size()), prob[i]});
        }
    }
    return out;
}

template <class Second>
DetectionSet detect(const Scene& scene, const ValidityMask* validity, const nn::Network& hrn, Second&& second,
                    const CascadeConfig& cfg = {})
{
    cfg.validate();
    return detect_from_scores(scene, infer_dense(hrn, scene, validity), std::forward<Second>(second), cfg);
}

}  // namespace tilecascade
