#include <gtest/gtest.h>

#include "tilecascade/cascade.hpp"
#include "test_util.hpp"

using namespace tilecascade;

namespace {

struct RandomCase {
    Scene scene;
    ScoreGrid grid;
};

RandomCase random_case(Rng& rng)
{
    const auto rows = static_cast<std::uint32_t>(rng.between(1, 8));
    const auto cols = static_cast<std::uint32_t>(rng.between(1, 8));
    RandomCase c{Scene("s", 1, rows * kTileSize, cols * kTileSize), ScoreGrid("s", rows, cols)};
    for (auto& v : c.scene.data) v = static_cast<float>(rng.uniform());
    for (auto& p : c.grid.prob_positive) p = static_cast<float>(rng.uniform());
    return c;
}

bool bbox_touches_positive_tile(const BBox& b, const ScoreGrid& g, double thr)
{
    for (std::uint32_t r = 0; r < g.rows; ++r)
        for (std::uint32_t c = 0; c < g.cols; ++c) {
            if (g.at(r, c) < thr) continue;
            const std::int64_t r0 = r * kTileSize, c0 = c * kTileSize;
            if (b.r0 < r0 + kTileSize && r0 < b.r1 && b.c0 < c0 + kTileSize && c0 < b.c1) return true;
        }
    return false;
}

}  // namespace

TEST(Cascade, CropBboxAnchoring)
{
    EXPECT_EQ(crop_bbox(8, 16, 64), (BBox{-24, -16, 40, 48}));
    EXPECT_EQ(crop_bbox(5, 5, 3), (BBox{4, 4, 7, 7}));
}

TEST(Cascade, AcceptAllEqualsCandidates)
{
    Rng rng(1);
    for (int k = 0; k < 100; ++k) {
        const auto c = random_case(rng);
        const auto regions = candidates(c.grid);
        const auto dets = detect_from_scores(c.scene, c.grid, [](const Crop&) { return 1.0; }, CascadeConfig{});
        ASSERT_EQ(dets.detections.size(), regions.size());
        for (std::size_t i = 0; i < regions.size(); ++i) {
            const auto& d = dets.detections[i];
            ASSERT_EQ(d.center_r, regions[i].center_r);
            ASSERT_EQ(d.center_c, regions[i].center_c);
            ASSERT_EQ(d.region_tiles, regions[i].tiles.size());
            ASSERT_GE(d.region_tiles, 1u);
            ASSERT_EQ(d.bbox, crop_bbox(d.center_r, d.center_c, kCropSize));
            ASSERT_TRUE(bbox_touches_positive_tile(d.bbox, c.grid, kDecisionThreshold));
        }
    }
}

TEST(Cascade, RejectAllIsEmpty)
{
    Rng rng(2);
    const auto c = random_case(rng);
    const auto dets = detect_from_scores(c.scene, c.grid, [](const Crop&) { return 0.0; }, CascadeConfig{});
    EXPECT_TRUE(dets.detections.empty());
    EXPECT_EQ(dets.scene_id, "s");
}

TEST(Cascade, MonotoneInAcceptThreshold)
{
    Rng rng(3);
    const auto score = [](const Crop& c) {
        return static_cast<double>(fnv1a64(std::to_string(c.center_r) + "," + std::to_string(c.center_c)) % 1000) / 1000.0;
    };
    for (int k = 0; k < 50; ++k) {
        const auto c = random_case(rng);
        CascadeConfig cfg;
        std::size_t prev = SIZE_MAX;
        for (double t = 0.0; t <= 1.0; t += 0.05) {
            cfg.accept_threshold = t;
            const auto n = detect_from_scores(c.scene, c.grid, score, cfg).detections.size();
            ASSERT_LE(n, prev);
            prev = n;
        }
    }
}

TEST(Cascade, NetworkPathMatchesScorerPath)
{
    Rng rng(4);
    const auto hpn = build_hpn(1, 9, 16);
    CascadeConfig cfg;
    cfg.crop_size = 16;
    cfg.accept_threshold = 0.3;
    for (int k = 0; k < 10; ++k) {
        const auto c = random_case(rng);
        const auto a = detect_from_scores(c.scene, c.grid, hpn, cfg);
        const auto b = detect_from_scores(c.scene, c.grid, [&](const Crop& crop) { return classify(hpn, crop, 0.0).prob; }, cfg);
        ASSERT_EQ(a, b);
    }
}

TEST(Cascade, EndToEndShapesAndDeterminism)
{
    Rng rng(5);
    Scene s("s", 2, 64, 80);
    for (auto& v : s.data) v = static_cast<float>(rng.normal());
    const auto hrn = build_hrn(2, 1);
    const auto hpn = build_hpn(2, 2);
    const auto a = detect(s, nullptr, hrn, hpn);
    EXPECT_EQ(a, detect(s, nullptr, hrn, hpn));
    const auto all = detect(s, nullptr, hrn, [](const Crop&) { return 1.0; });
    EXPECT_EQ(all.detections.size(), candidates(infer_dense(hrn, s, nullptr)).size());
    EXPECT_LE(a.detections.size(), all.detections.size());
}

TEST(Cascade, PerTileCropsRejected)
{
    Rng rng(6);
    const auto c = random_case(rng);
    CascadeConfig cfg;
    cfg.per_tile_crops = true;
    EXPECT_THROW(detect_from_scores(c.scene, c.grid, [](const Crop&) { return 1.0; }, cfg), ConfigError);
}

TEST(Cascade, DetectionJsonRoundTrip)
{
    DetectionSet set{"scene_a", "abc", {{"scene_a", 8, 16, crop_bbox(8, 16, 64), 2, 0.75}, {"scene_a", 100, 40, crop_bbox(100, 40, 64), 1, 1.0}}};
    const auto j = to_json(set);
    EXPECT_EQ(j.at("detections")[0].at("center"), nlohmann::json::array({8, 16}));
    EXPECT_EQ(j.at("detections")[0].at("bbox"), nlohmann::json::array({-24, -16, 40, 48}));
    EXPECT_EQ(detection_set_from_json(j), set);
    test::TempDir dir;
    write_detections(set, dir.path() / "d.json");
    EXPECT_EQ(read_detections(dir.path() / "d.json"), set);
    detail::write_file(dir.path() / "bad.json", "{\"scene_id\": 1");
    EXPECT_THROW(read_detections(dir.path() / "bad.json"), FormatError);
}
