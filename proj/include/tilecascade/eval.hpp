#pragma once

// Detection matching and recall / precision / F-measure reporting.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/cascade.hpp"
#include "tilecascade/error.hpp"
#include "tilecascade/raster.hpp"

namespace tilecascade {

struct MetricsCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    MetricsCounts& operator+=(const MetricsCounts& o) noexcept
    {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const MetricsCounts&, const MetricsCounts&) = default;
};

struct Metrics {
    double recall = 0.0;
    double precision = 0.0;
    double f_measure = 0.0;
    friend bool operator==(const Metrics&, const Metrics&) = default;
};

inline double f_measure(double precision, double recall) noexcept
{
    const double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

inline Metrics metrics(const MetricsCounts& c) noexcept
{
    Metrics m;
    m.recall = c.tp + c.fn ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
    m.precision = c.tp + c.fp ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 0.0;
    m.f_measure = f_measure(m.precision, m.recall);
    return m;
}

namespace detail {

// Inclusive prefix sums over a (h+1) x (w+1) table.
class SummedArea {
public:
    template <class Pred>
    SummedArea(std::uint32_t h, std::uint32_t w, Pred pred) : h_(h), w_(w), s_(static_cast<std::size_t>(h + 1) * (w + 1), 0)
    {
        for (std::uint32_t r = 0; r < h; ++r) {
            std::uint64_t row = 0;
            for (std::uint32_t c = 0; c < w; ++c) {
                row += pred(r, c) ? 1 : 0;
                s_[idx(r + 1, c + 1)] = s_[idx(r, c + 1)] + row;
            }
        }
    }

    // Count over the box clipped to the grid.
    std::uint64_t count(const BBox& b) const noexcept
    {
        const std::int64_t r0 = std::clamp<std::int64_t>(b.r0, 0, h_);
        const std::int64_t r1 = std::clamp<std::int64_t>(b.r1, 0, h_);
        const std::int64_t c0 = std::clamp<std::int64_t>(b.c0, 0, w_);
        const std::int64_t c1 = std::clamp<std::int64_t>(b.c1, 0, w_);
        if (r1 <= r0 || c1 <= c0) {
            return 0;
        }
        return s_[idx(r1, c1)] - s_[idx(r0, c1)] - s_[idx(r1, c0)] + s_[idx(r0, c0)];
    }

private:
    std::size_t idx(std::int64_t r, std::int64_t c) const noexcept
    {
        return static_cast<std::size_t>(r) * (w_ + 1) + static_cast<std::size_t>(c);
    }

    std::int64_t h_;
    std::int64_t w_;
    std::vector<std::uint64_t> s_;
};

}  // namespace detail

// A detection whose bbox touches an invalid pixel is dropped. Remaining
// detections are TP when the bbox holds at least one GT pixel, FP otherwise.
// A polygon with at least one valid inside pixel is FN when no remaining bbox
// holds any of its inside pixels; other polygons are not counted.
inline MetricsCounts match(const DetectionSet& dets, const PolygonSet& polys, const PixelMask& gt_mask,
                           const ValidityMask* validity = nullptr)
{
    const std::uint32_t H = gt_mask.height;
    const std::uint32_t W = gt_mask.width;
    if (validity && (validity->height != H || validity->width != W)) {
        throw ValidationError("match: validity mask dimensions do not match the GT mask");
    }
    const detail::SummedArea gt(H, W, [&](std::uint32_t r, std::uint32_t c) { return gt_mask.at(r, c); });
    std::optional<detail::SummedArea> invalid;
    if (validity) {
        invalid.emplace(H, W, [&](std::uint32_t r, std::uint32_t c) { return !validity->at(r, c); });
    }

    MetricsCounts out;
    // Pixels covered by any kept detection, via a 2-D difference array.
    std::vector<std::int32_t> diff(static_cast<std::size_t>(H + 1) * (W + 1), 0);
    for (const auto& d : dets.detections) {
        if (invalid && invalid->count(d.bbox) > 0) {
            continue;
        }
        (gt.count(d.bbox) > 0 ? out.tp : out.fp) += 1;
        const auto r0 = static_cast<std::size_t>(std::clamp<std::int64_t>(d.bbox.r0, 0, H));
        const auto r1 = static_cast<std::size_t>(std::clamp<std::int64_t>(d.bbox.r1, 0, H));
        const auto c0 = static_cast<std::size_t>(std::clamp<std::int64_t>(d.bbox.c0, 0, W));
        const auto c1 = static_cast<std::size_t>(std::clamp<std::int64_t>(d.bbox.c1, 0, W));
        if (r1 <= r0 || c1 <= c0) continue;
        diff[r0 * (W + 1) + c0] += 1;
        diff[r0 * (W + 1) + c1] -= 1;
        diff[r1 * (W + 1) + c0] -= 1;
        diff[r1 * (W + 1) + c1] += 1;
    }
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(H) * W, 0);
    {
        std::vector<std::int32_t> acc(static_cast<std::size_t>(W) + 1, 0);
        for (std::uint32_t r = 0; r < H; ++r) {
            std::int32_t run = 0;
            for (std::uint32_t c = 0; c < W; ++c) {
                run += diff[static_cast<std::size_t>(r) * (W + 1) + c];
                acc[c] += run;
                covered[static_cast<std::size_t>(r) * W + c] = acc[c] > 0 ? 1 : 0;
            }
        }
    }

    for (const auto& p : polys.polygons) {
        const PixelMask m = rasterize(p, H, W);
        bool any_valid = false;
        bool hit = false;
        for (std::size_t k = 0; k < m.inside.size() && !hit; ++k) {
            if (!m.inside[k]) continue;
            if (!validity || validity->valid[k]) any_valid = true;
            if (covered[k]) hit = true;
        }
        if (any_valid && !hit) {
            out.fn += 1;
        }
    }
    return out;
}

struct SceneMetrics {
    std::string scene_id;
    MetricsCounts counts;
    Metrics metrics;
};

struct MetricsReport {
    std::vector<SceneMetrics> scenes;
    MetricsCounts pooled;
    Metrics micro;  // from pooled counts
    Metrics macro;  // unweighted mean of per-scene metrics
    std::string config;
};

inline MetricsReport report(const std::vector<std::pair<std::string, MetricsCounts>>& per_scene, std::string config = {})
{
    if (per_scene.empty()) {
        throw ValidationError("report: no scenes");
    }
    MetricsReport r;
    r.config = std::move(config);
    for (const auto& [id, c] : per_scene) {
        const Metrics m = metrics(c);
        r.scenes.push_back({id, c, m});
        r.pooled += c;
        r.macro.recall += m.recall;
        r.macro.precision += m.precision;
        r.macro.f_measure += m.f_measure;
    }
    const double n = static_cast<double>(per_scene.size());
    r.macro.recall /= n;
    r.macro.precision /= n;
    r.macro.f_measure /= n;
    r.micro = metrics(r.pooled);
    return r;
}

inline nlohmann::json to_json(const Metrics& m)
{
    return {{"recall", m.recall}, {"precision", m.precision}, {"f_measure", m.f_measure}};
}

inline nlohmann::json to_json(const MetricsCounts& c)
{
    return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}};
}

inline nlohmann::json to_json(const MetricsReport& r)
{
    nlohmann::json scenes = nlohmann::json::array();
    for (const auto& s : r.scenes) {
        auto j = to_json(s.metrics);
        j["scene_id"] = s.scene_id;
        j["counts"] = to_json(s.counts);
        scenes.push_back(std::move(j));
    }
    auto micro = to_json(r.micro);
    micro["counts"] = to_json(r.pooled);
    return {{"config", r.config}, {"scenes", std::move(scenes)}, {"micro", std::move(micro)}, {"macro", to_json(r.macro)}};
}

// Recall / Precision / F-measure blocks with one column per scene followed by
// the micro and macro totals.
inline std::string to_table(const MetricsReport& r)
{
    std::vector<std::string> head;
    for (const auto& s : r.scenes) head.push_back(s.scene_id);
    head.push_back("micro");
    head.push_back("macro");
    std::size_t width = 9;
    for (const auto& h : head) width = std::max(width, h.size() + 2);

    auto cell = [&](const std::string& text) {
        std::string s(width > text.size() ? width - text.size() : 0, ' ');
        return s + text;
    };
    auto num = [&](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", v);
        return cell(buf);
    };
    std::string out = std::string(10, ' ');
    for (const auto& h : head) out += cell(h);
    out += '\n';
    auto row = [&](const char* name, auto get) {
        char label[16];
        std::snprintf(label, sizeof label, "%-10s", name);
        out += label;
        for (const auto& s : r.scenes) out += num(get(s.metrics));
        out += num(get(r.micro));
        out += num(get(r.macro));
        out += '\n';
    };
    row("Recall", [](const Metrics& m) { return m.recall; });
    row("Precision", [](const Metrics& m) { return m.precision; });
    row("F-measure", [](const Metrics& m) { return m.f_measure; });
    return out;
}

}  // namespace tilecascade
