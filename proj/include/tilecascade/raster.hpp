#pragma once

// Scenes, validity masks, ground-truth polygons and polygon rasterization.
//
// SCNR container (little-endian):
//   "SCNR" | u32 version = 1 | u32 bands | u32 height | u32 width |
//   bands*height*width float32, band-major then row-major.
// A validity mask is the same container with bands = 1 and values in {0, 1}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tilecascade/detail/binary.hpp"
#include "tilecascade/error.hpp"

namespace tilecascade {

inline constexpr std::uint32_t kScnrVersion = 1;

struct Scene {
    std::string scene_id;
    std::uint32_t bands = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> data;  // band-major, row-major

    Scene() = default;
    Scene(std::string id, std::uint32_t b, std::uint32_t h, std::uint32_t w)
        : scene_id(std::move(id)), bands(b), height(h), width(w),
          data(static_cast<std::size_t>(b) * h * w, 0.0f)
    {
    }

    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }

    float& at(std::uint32_t b, std::uint32_t r, std::uint32_t c) noexcept
    {
        return data[b * plane() + static_cast<std::size_t>(r) * width + c];
    }
    float at(std::uint32_t b, std::uint32_t r, std::uint32_t c) const noexcept
    {
        return data[b * plane() + static_cast<std::size_t>(r) * width + c];
    }

    void validate() const
    {
        if (bands < 1) {
            throw ValidationError("scene '" + scene_id + "': band count must be >= 1");
        }
        if (data.size() != static_cast<std::size_t>(bands) * height * width) {
            throw ValidationError("scene '" + scene_id + "': data length does not match bands*height*width");
        }
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (!std::isfinite(data[i])) {
                throw ValidationError("scene '" + scene_id + "': non-finite value at index " + std::to_string(i));
            }
        }
    }

    friend bool operator==(const Scene&, const Scene&) = default;
};

struct ValidityMask {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> valid;

    ValidityMask() = default;
    ValidityMask(std::uint32_t h, std::uint32_t w, bool value = true)
        : height(h), width(w), valid(static_cast<std::size_t>(h) * w, value ? 1 : 0)
    {
    }

    bool at(std::uint32_t r, std::uint32_t c) const noexcept { return valid[static_cast<std::size_t>(r) * width + c] != 0; }

    friend bool operator==(const ValidityMask&, const ValidityMask&) = default;
};

struct PixelMask {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<std::uint8_t> inside;

    PixelMask() = default;
    PixelMask(std::uint32_t h, std::uint32_t w) : height(h), width(w), inside(static_cast<std::size_t>(h) * w, 0) {}

    bool at(std::uint32_t r, std::uint32_t c) const noexcept { return inside[static_cast<std::size_t>(r) * width + c] != 0; }

    std::size_t count() const noexcept
    {
        return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), std::uint8_t{1}));
    }

    friend bool operator==(const PixelMask&, const PixelMask&) = default;
};

// Vertex in pixel space: x grows with columns, y with rows. Pixel (r, c)
// has its center at (c + 0.5, r + 0.5).
struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

using Ring = std::vector<Point>;

struct Polygon {
    std::string id;
    std::vector<Ring> rings;  // rings[0] is the outer boundary, the rest are holes
    friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct PolygonSet {
    std::vector<Polygon> polygons;

    void validate() const
    {
        std::set<std::string> ids;
        for (const auto& p : polygons) {
            if (!ids.insert(p.id).second) {
                throw ValidationError("duplicate polygon id '" + p.id + "'");
            }
            if (p.rings.empty()) {
                throw ValidationError("polygon '" + p.id + "' has no rings");
            }
            for (const auto& ring : p.rings) {
                if (ring.size() < 3) {
                    throw ValidationError("polygon '" + p.id + "' has a ring with fewer than 3 vertices");
                }
                for (const auto& v : ring) {
                    if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
                        throw ValidationError("polygon '" + p.id + "' has a non-finite vertex");
                    }
                }
            }
        }
    }

    friend bool operator==(const PolygonSet&, const PolygonSet&) = default;
};

// ---------------------------------------------------------------------------
// SCNR I/O

namespace detail {

struct ScnrHeader {
    std::uint32_t bands;
    std::uint32_t height;
    std::uint32_t width;
};

inline std::string encode_scnr(const ScnrHeader& h, std::span<const float> values)
{
    ByteWriter w;
    w.magic("SCNR");
    w.u32(kScnrVersion);
    w.u32(h.bands);
    w.u32(h.height);
    w.u32(h.width);
    w.f32s(values);
    return w.bytes();
}

inline std::vector<float> decode_scnr(std::string_view bytes, const std::string& what, ScnrHeader& h)
{
    ByteReader r(bytes, what);
    if (bytes.size() < 4 || bytes.substr(0, 4) != "SCNR") {
        throw FormatError(what + ": bad magic (expected SCNR)");
    }
    r.take(4);
    const auto version = r.u32();
    if (version != kScnrVersion) {
        throw FormatError(what + ": unsupported SCNR version " + std::to_string(version));
    }
    h.bands = r.u32();
    h.height = r.u32();
    h.width = r.u32();
    const std::uint64_t count = static_cast<std::uint64_t>(h.bands) * h.height * h.width;
    if (count * 4 > r.remaining()) {
        throw CorruptionError(what + ": truncated payload (header promises " + std::to_string(count)
                              + " values, " + std::to_string(r.remaining()) + " bytes remain)");
    }
    if (count * 4 < r.remaining()) {
        throw CorruptionError(what + ": " + std::to_string(r.remaining() - count * 4) + " trailing bytes after payload");
    }
    std::vector<float> values(static_cast<std::size_t>(count));
    for (auto& v : values) {
        v = r.f32();
    }
    return values;
}

}  // namespace detail

inline std::string encode_scene(const Scene& scene)
{
    scene.validate();
    return detail::encode_scnr({scene.bands, scene.height, scene.width}, scene.data);
}

inline Scene decode_scene(std::string_view bytes, std::string scene_id)
{
    detail::ScnrHeader h{};
    auto values = detail::decode_scnr(bytes, "scene '" + scene_id + "'", h);
    Scene s;
    s.scene_id = std::move(scene_id);
    s.bands = h.bands;
    s.height = h.height;
    s.width = h.width;
    s.data = std::move(values);
    s.validate();
    return s;
}

// The scene id is taken from the file stem.
inline Scene read_scene(const std::filesystem::path& path)
{
    return decode_scene(detail::read_file(path), path.stem().string());
}

// Validates before touching the filesystem: an invalid scene writes nothing.
inline void write_scene(const Scene& scene, const std::filesystem::path& path)
{
    detail::write_file(path, encode_scene(scene));
}

inline void write_validity(const ValidityMask& mask, const std::filesystem::path& path)
{
    std::vector<float> values(mask.valid.size());
    std::transform(mask.valid.begin(), mask.valid.end(), values.begin(), [](std::uint8_t v) { return v ? 1.0f : 0.0f; });
    detail::write_file(path, detail::encode_scnr({1, mask.height, mask.width}, values));
}

inline ValidityMask read_validity(const std::filesystem::path& path)
{
    detail::ScnrHeader h{};
    const auto bytes = detail::read_file(path);
    auto values = detail::decode_scnr(bytes, "mask " + path.string(), h);
    if (h.bands != 1) {
        throw ValidationError("mask " + path.string() + ": expected 1 band, found " + std::to_string(h.bands));
    }
    ValidityMask m(h.height, h.width);
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == 1.0f) {
            m.valid[i] = 1;
        } else if (values[i] == 0.0f) {
            m.valid[i] = 0;
        } else {
            throw ValidationError("mask " + path.string() + ": value outside {0, 1} at index " + std::to_string(i));
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Polygon JSON: {"polygons": [{"id": str, "rings": [[[x, y], ...], ...]}]}

inline nlohmann::json polygons_to_json(const PolygonSet& set)
{
    nlohmann::json polys = nlohmann::json::array();
    for (const auto& p : set.polygons) {
        nlohmann::json rings = nlohmann::json::array();
        for (const auto& ring : p.rings) {
            nlohmann::json jr = nlohmann::json::array();
            for (const auto& v : ring) {
                jr.push_back({v.x, v.y});
            }
            rings.push_back(std::move(jr));
        }
        polys.push_back({{"id", p.id}, {"rings", std::move(rings)}});
    }
    return {{"polygons", std::move(polys)}};
}

inline PolygonSet polygons_from_json(const nlohmann::json& j)
{
    PolygonSet set;
    try {
        for (const auto& jp : j.at("polygons")) {
            Polygon p;
            p.id = jp.at("id").get<std::string>();
            for (const auto& jr : jp.at("rings")) {
                Ring ring;
                for (const auto& jv : jr) {
                    if (!jv.is_array() || jv.size() != 2) {
                        throw ValidationError("polygon '" + p.id + "': vertex must be [x, y]");
                    }
                    ring.push_back({jv[0].get<double>(), jv[1].get<double>()});
                }
                p.rings.push_back(std::move(ring));
            }
            set.polygons.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("polygon JSON: ") + e.what());
    }
    set.validate();
    return set;
}

inline PolygonSet read_polygons(const std::filesystem::path& path)
{
    const auto text = detail::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return polygons_from_json(j);
}

inline void write_polygons(const PolygonSet& set, const std::filesystem::path& path)
{
    set.validate();
    detail::write_file(path, polygons_to_json(set).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Rasterization

namespace detail {

// x coordinate where edge a-b crosses the horizontal line y, for edges that
// straddle it under the half-open rule (ya > y) != (yb > y).
inline double edge_crossing(const Point& a, const Point& b, double y) noexcept
{
    return (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x;
}

inline void fill_polygon(const Polygon& poly, PixelMask& mask, std::vector<double>& xs)
{
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (const auto& ring : poly.rings) {
        for (const auto& v : ring) {
            ymin = std::min(ymin, v.y);
            ymax = std::max(ymax, v.y);
        }
    }
    const long long r_lo = std::max(0LL, static_cast<long long>(std::floor(ymin - 0.5)));
    const long long r_hi = std::min(static_cast<long long>(mask.height) - 1, static_cast<long long>(std::ceil(ymax)));
    for (long long r = r_lo; r <= r_hi; ++r) {
        const double y = static_cast<double>(r) + 0.5;
        xs.clear();
        for (const auto& ring : poly.rings) {
            const std::size_t n = ring.size();
            for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
                const Point& a = ring[i];
                const Point& b = ring[j];
                if ((a.y > y) != (b.y > y)) {
                    xs.push_back(edge_crossing(a, b, y));
                }
            }
        }
        std::sort(xs.begin(), xs.end());
        // A center px is inside iff an odd number of crossings lie strictly
        // to its right, i.e. xs[2k] <= px < xs[2k+1].
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            const double lo = xs[k];
            const double hi = xs[k + 1];
            const long long c0 = std::max(0LL, static_cast<long long>(std::ceil(lo - 0.5)));
            const long long c_end = std::min(static_cast<long long>(mask.width), static_cast<long long>(std::ceil(hi - 0.5)) + 1);
            for (long long c = c0; c < c_end; ++c) {
                const double px = static_cast<double>(c) + 0.5;
                if (px >= lo && px < hi) {
                    mask.inside[static_cast<std::size_t>(r) * mask.width + static_cast<std::size_t>(c)] = 1;
                }
            }
        }
    }
}

}  // namespace detail

// Pixel (r, c) is inside iff its center lies inside some polygon under the
// even-odd rule over that polygon's rings (holes subtract).
inline PixelMask rasterize(const PolygonSet& polys, std::uint32_t height, std::uint32_t width)
{
    if (height == 0 || width == 0) {
        throw ValidationError("rasterize: height and width must be positive");
    }
    for (const auto& p : polys.polygons) {
        for (const auto& ring : p.rings) {
            if (ring.size() < 3) {
                throw ValidationError("rasterize: polygon '" + p.id + "' has a ring with fewer than 3 vertices");
            }
        }
    }
    PixelMask mask(height, width);
    std::vector<double> xs;
    for (const auto& p : polys.polygons) {
        detail::fill_polygon(p, mask, xs);
    }
    return mask;
}

inline PixelMask rasterize(const Polygon& poly, std::uint32_t height, std::uint32_t width)
{
    PolygonSet one;
    one.polygons.push_back(poly);
    return rasterize(one, height, width);
}

}  // namespace tilecascade
