#include <algorithm>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "tilecascade/hrn.hpp"
#include "tilecascade/synth.hpp"
#include "test_util.hpp"
#include "../oracles.hpp"

using namespace tilecascade;

namespace {

std::vector<SceneTile> make_tiles(std::size_t pos, std::size_t neg, std::size_t ignored = 0)
{
    std::vector<SceneTile> tiles;
    std::uint32_t k = 0;
    auto add = [&](TileClass c, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i, ++k) tiles.push_back({k % 3, {k / 100, k % 100, 0.0, c}});
    };
    add(TileClass::negative, neg / 2);
    add(TileClass::positive, pos);
    add(TileClass::ignored, ignored);
    add(TileClass::negative, neg - neg / 2);
    return tiles;
}

Scene random_scene(Rng& rng, std::uint32_t bands, std::uint32_t h, std::uint32_t w)
{
    Scene s("r", bands, h, w);
    for (auto& v : s.data) v = static_cast<float>(rng.normal());
    return s;
}

}  // namespace

TEST(Hrn, ArchitectureAndGrid)
{
    const auto net = build_hrn(3, 1);
    int convs = 0;
    for (const auto& l : net.layers()) convs += l.kind == nn::LayerKind::conv2d;
    EXPECT_EQ(convs, 4);
    EXPECT_EQ(net.nominal_output(), (nn::Shape{1, 2, 1, 1}));
    EXPECT_EQ(net.infer_output({1, 3, 64, 64}), (nn::Shape{1, 2, 4, 4}));
    EXPECT_THROW(build_hrn(0, 1), ValidationError);
}

TEST(Sampling, RatioApplied)
{
    const auto tiles = make_tiles(100, 10000);
    const auto s = sample_training_set(tiles, 18.0, 1);
    EXPECT_EQ(s.size(), 100u + 1800u);
}

TEST(Sampling, ClampsAtAvailability)
{
    const auto tiles = make_tiles(100, 500, 40);
    const auto s = sample_training_set(tiles, 18.0, 1);
    EXPECT_EQ(s.size(), 600u);
}

TEST(Sampling, KeepsPositivesNoDuplicatesDeterministic)
{
    Rng rng(2);
    for (int k = 0; k < 30; ++k) {
        const auto tiles = make_tiles(rng.between(1, 50), rng.between(0, 2000), rng.between(0, 30));
        const double ratio = rng.uniform(0.5, 30.0);
        const auto seed = rng.next();
        const auto s = sample_training_set(tiles, ratio, seed);
        EXPECT_EQ(s, sample_training_set(tiles, ratio, seed));
        std::size_t pos_in = 0;
        for (const auto& t : tiles) pos_in += t.tile.label == TileClass::positive;
        std::size_t pos_out = 0;
        std::set<std::pair<std::uint32_t, std::uint32_t>> seen;
        for (const auto& t : s) {
            ASSERT_NE(t.tile.label, TileClass::ignored);
            pos_out += t.tile.label == TileClass::positive;
            ASSERT_TRUE(seen.insert({t.tile.row, t.tile.col}).second);
        }
        ASSERT_EQ(pos_out, pos_in);
    }
    EXPECT_THROW(sample_training_set(make_tiles(0, 10), 18.0, 1), ConfigError);
}

TEST(Select, PaperExample)
{
    const std::vector<SnapshotRecord> rs = {{10, "a", 0.95, 0.40}, {20, "b", 0.90, 0.55}, {30, "c", 0.85, 0.70}};
    const auto s = select_snapshot(rs, 0.5);
    EXPECT_EQ(s.record.path, "b");
    EXPECT_FALSE(s.degraded);
}

TEST(Select, DegradedFallback)
{
    const std::vector<SnapshotRecord> rs = {{10, "a", 0.95, 0.40}, {20, "b", 0.90, 0.45}, {30, "c", 0.99, 0.10}};
    const auto s = select_snapshot(rs, 0.5);
    EXPECT_EQ(s.record.path, "b");
    EXPECT_TRUE(s.degraded);
}

TEST(Select, LaterEpochWinsTie)
{
    const std::vector<SnapshotRecord> rs = {{10, "a", 0.9, 0.6}, {20, "b", 0.9, 0.6}};
    EXPECT_EQ(select_snapshot(rs, 0.5).record.epoch, 20);
    EXPECT_THROW(select_snapshot(std::vector<SnapshotRecord>{}, 0.5), ValidationError);
}

TEST(Select, MatchesBruteForceAndOrderInvariant)
{
    Rng rng(3);
    const double grid[] = {0.2, 0.4, 0.5, 0.6, 0.8};
    for (int k = 0; k < 1000; ++k) {
        std::vector<SnapshotRecord> rs(static_cast<std::size_t>(rng.between(1, 8)));
        for (std::size_t i = 0; i < rs.size(); ++i) {
            rs[i] = {static_cast<int>(10 * (i + 1)), std::to_string(i), grid[rng.below(5)], grid[rng.below(5)]};
        }
        const double floor = grid[rng.below(5)];
        const auto want = oracle::brute_select(rs, floor);
        const auto got = select_snapshot(rs, floor);
        ASSERT_EQ(got.record, want.record);
        ASSERT_EQ(got.degraded, want.degraded);
        rng.shuffle(rs);
        ASSERT_EQ(select_snapshot(rs, floor).record, want.record);
    }
}

TEST(Snapshot, JsonRoundTrip)
{
    const SnapshotRecord r{30, "hrn/hrn_epoch_0030.cnnc", 0.9375, 0.5};
    EXPECT_EQ(snapshot_from_json(nlohmann::json::parse(to_json(r).dump())), r);
    EXPECT_EQ(hrn_snapshot_path("d", 30).filename(), "hrn_epoch_0030.cnnc");
}

TEST(Dense, GridShapeAndMasking)
{
    Rng rng(4);
    const auto net = build_hrn(3, 5);
    const auto scene = random_scene(rng, 3, 64, 64);
    const auto g = infer_dense(net, scene);
    EXPECT_EQ(g.rows, 4u);
    EXPECT_EQ(g.cols, 4u);
    for (float p : g.prob_positive) {
        EXPECT_GT(p, 0.0f);
        EXPECT_LT(p, 1.0f);
    }
    const ValidityMask none(64, 64, false);
    const auto z = infer_dense(net, scene, &none);
    for (float p : z.prob_positive) EXPECT_EQ(p, 0.0f);

    ValidityMask one(64, 64);
    one.valid[20 * 64 + 40] = 0;
    const auto m = infer_dense(net, scene, &one);
    for (std::uint32_t r = 0; r < 4; ++r)
        for (std::uint32_t c = 0; c < 4; ++c) EXPECT_EQ(m.at(r, c), (r == 1 && c == 2) ? 0.0f : g.at(r, c));
}

TEST(Dense, SmallerThanTileIsEmpty)
{
    Rng rng(5);
    const auto g = infer_dense(build_hrn(2, 1), random_scene(rng, 2, 12, 40));
    EXPECT_EQ(g.rows, 0u);
    EXPECT_TRUE(g.prob_positive.empty());
}

TEST(Dense, AgreesWithPerTileWindow)
{
    Rng rng(6);
    for (int k = 0; k < 5; ++k) {
        const auto net = build_hrn(3, rng.next());
        const auto scene = random_scene(rng, 3, 16 * static_cast<std::uint32_t>(rng.between(3, 6)),
                                        16 * static_cast<std::uint32_t>(rng.between(3, 6)));
        const auto g = infer_dense(net, scene);
        // Interior tiles only: their receptive-field halo lies inside the scene.
        for (std::uint32_t r = 1; r + 1 < g.rows; ++r) {
            for (std::uint32_t c = 1; c + 1 < g.cols; ++c) {
                const auto w = tile_window(scene, r, c, 1);
                const nn::Tensor x({1, 3, 48, 48}, w.data);
                const auto p = nn::softmax_prob(nn::forward(net, x), kPositiveClass);
                ASSERT_EQ(p.size(), 9u);
                ASSERT_NEAR(p[4], g.at(r, c), 1e-5) << r << "," << c;
            }
        }
    }
}

TEST(Train, ScheduleDeterminismAndSnapshots)
{
    SynthConfig sc;
    sc.height = 96;
    sc.width = 96;
    sc.min_objects = 1;
    sc.max_objects = 2;
    sc.min_radius = 12;
    sc.max_radius = 16;
    sc.decoys = 0;
    sc.seed = 21;
    std::vector<LabeledScene> scenes;
    for (const auto& s : generate(sc, 3)) {
        scenes.push_back({s.scene, std::nullopt,
                          label_tiles(grid_scene(s.scene), rasterize(s.polygons, s.scene.height, s.scene.width))});
    }
    HrnConfig cfg;
    cfg.epochs = 20;
    cfg.snapshot_interval = 10;
    cfg.neg_pos_ratio = 3;
    cfg.lr = 0.005f;
    cfg.seed = 9;
    test::TempDir a, b;
    const auto ra = train_hrn(std::span(scenes).first(2), std::span(scenes).last(1), cfg, a.path(), "h");
    const auto rb = train_hrn(std::span(scenes).first(2), std::span(scenes).last(1), cfg, b.path(), "h");
    ASSERT_EQ(ra.snapshots.size(), 2u);
    EXPECT_EQ(ra.snapshots[0].epoch, 10);
    EXPECT_EQ(ra.snapshots[1].epoch, 20);
    EXPECT_EQ(ra.epoch_losses.size(), 20u);
    EXPECT_EQ(ra.epoch_losses, rb.epoch_losses);
    for (int e : {10, 20}) {
        EXPECT_EQ(detail::read_file(hrn_snapshot_path(a.path(), e)), detail::read_file(hrn_snapshot_path(b.path(), e)));
    }
    const auto ck = nn::load_checkpoint(hrn_snapshot_path(a.path(), 20));
    EXPECT_EQ(ck.meta.epoch, 20);
    EXPECT_EQ(ck.meta.train_config_hash, "h");
}

TEST(Train, ConfigValidation)
{
    HrnConfig c;
    c.epochs = 25;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.neg_pos_ratio = 0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.momentum = 1.0f;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_NO_THROW(HrnConfig{}.validate());
}

TEST(Train, WindowCellsMatchTilePositions)
{
    std::vector<SceneTile> s = {{0, {5, 6, 1.0, TileClass::positive}}, {0, {4, 4, 0.0, TileClass::negative}},
                                {1, {0, 0, 0.0, TileClass::negative}}};
    const auto w = group_windows(s, 4);
    ASSERT_EQ(w.size(), 2u);
    EXPECT_EQ(w[0].row0, 4u);
    EXPECT_EQ(w[0].col0, 4u);
    // 6x6 logit grid; tile (5, 6) sits at (2, 3), tile (4, 4) at (1, 1).
    EXPECT_EQ(w[0].cells, (std::vector<std::uint32_t>{2 * 6 + 3, 1 * 6 + 1}));
    EXPECT_EQ(w[0].labels, (std::vector<int>{1, 0}));
    EXPECT_EQ(w[1].cells, (std::vector<std::uint32_t>{7}));
}
