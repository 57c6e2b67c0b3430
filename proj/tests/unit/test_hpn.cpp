#include <set>

#include <gtest/gtest.h>

#include "tilecascade/hpn.hpp"
#include "test_util.hpp"

using namespace tilecascade;

namespace {

Crop random_crop(Rng& rng, std::uint32_t size, std::uint32_t bands)
{
    Crop c{0, 0, size, bands, std::vector<float>(static_cast<std::size_t>(bands) * size * size)};
    for (auto& v : c.data) v = static_cast<float>(rng.normal());
    return c;
}

// Reference D4 action built from the two generators by repeated application.
Crop rot90_cw(const Crop& in)
{
    Crop out = in;
    const std::uint32_t n = in.size;
    for (std::uint32_t b = 0; b < in.bands; ++b)
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = 0; j < n; ++j) out.at(b, i, j) = in.at(b, n - 1 - j, i);
    return out;
}

Crop hflip(const Crop& in)
{
    Crop out = in;
    const std::uint32_t n = in.size;
    for (std::uint32_t b = 0; b < in.bands; ++b)
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = 0; j < n; ++j) out.at(b, i, j) = in.at(b, i, n - 1 - j);
    return out;
}

Crop reference_d4(Crop c, int t)
{
    for (int k = 0; k < t % 4; ++k) c = rot90_cw(c);
    return t >= 4 ? hflip(c) : c;
}

// Separable toy data: positives carry a bright centered square.
std::vector<AugmentedExample> toy_set(Rng& rng, int n, std::uint32_t size)
{
    std::vector<AugmentedExample> out;
    for (int k = 0; k < n; ++k) {
        Crop c = random_crop(rng, size, 2);
        const bool pos = k % 2 == 0;
        if (pos) {
            for (std::uint32_t b = 0; b < 2; ++b)
                for (std::uint32_t i = size / 4; i < 3 * size / 4; ++i)
                    for (std::uint32_t j = size / 4; j < 3 * size / 4; ++j) c.at(b, i, j) += 2.0f;
        }
        out.push_back({c, pos, 0, "toy"});
    }
    return out;
}

}  // namespace

TEST(HpnNet, ShapeLayersAndParameterCount)
{
    const auto net = build_hpn(3, 1);
    int convs = 0, fcs = 0;
    for (const auto& l : net.layers()) {
        convs += l.kind == nn::LayerKind::conv2d;
        fcs += l.kind == nn::LayerKind::fc;
    }
    EXPECT_EQ(convs, 8);
    EXPECT_EQ(fcs, 1);
    EXPECT_EQ(net.nominal_output(), (nn::Shape{1, 2, 1, 1}));
    // 3->16, 16->16, 16->32, 32->32, 32->64, then three 64->64 convs, fc 1024->2.
    const std::size_t expect = (16 * 3 * 9 + 16) + (16 * 16 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32)
                               + (64 * 32 * 9 + 64) + 3 * (64 * 64 * 9 + 64) + (2 * 1024 + 2);
    EXPECT_EQ(net.parameter_count(), expect);
    EXPECT_EQ(expect, 147986u);
    EXPECT_THROW(build_hpn(0, 1), ValidationError);
}

TEST(D4, Rot90OnTwoByTwo)
{
    Crop c{0, 0, 2, 1, {1, 2, 3, 4}};
    EXPECT_EQ(apply_d4(c, 1).data, (std::vector<float>{3, 1, 4, 2}));
    EXPECT_EQ(apply_d4(c, 4).data, (std::vector<float>{2, 1, 4, 3}));
}

TEST(D4, ConstantCropIsFixed)
{
    Crop c{0, 0, 5, 2, std::vector<float>(50, 3.5f)};
    for (const auto& e : d4_augment(c)) EXPECT_EQ(e.data, c);
}

TEST(D4, GroupLawOnRandomCrops)
{
    Rng rng(1);
    for (int k = 0; k < 100; ++k) {
        const Crop c = random_crop(rng, static_cast<std::uint32_t>(rng.between(2, 9)), static_cast<std::uint32_t>(rng.between(1, 3)));
        const auto orbit = d4_augment(c, "s");
        ASSERT_EQ(orbit.size(), 8u);
        std::set<std::vector<float>> distinct;
        for (int t = 0; t < 8; ++t) {
            ASSERT_EQ(orbit[t].transform_id, t);
            ASSERT_TRUE(orbit[t].positive);
            ASSERT_EQ(orbit[t].data, reference_d4(c, t));
            ASSERT_EQ(apply_d4(orbit[t].data, d4_inverse(t)), c);
            distinct.insert(orbit[t].data.data);
            for (int u = 0; u < 8; ++u) {
                ASSERT_EQ(apply_d4(orbit[t].data, u), apply_d4(c, d4_compose(t, u))) << t << " then " << u;
            }
        }
        ASSERT_EQ(distinct.size(), 8u);
    }
}

TEST(D4, NonSquareRejected)
{
    Crop c{0, 0, 3, 1, std::vector<float>(6)};
    EXPECT_THROW(apply_d4(c, 0), ValidationError);
    EXPECT_THROW(apply_d4(Crop{0, 0, 2, 1, std::vector<float>(4)}, 8), ValidationError);
}

TEST(Positives, SquareCentroid)
{
    const Polygon sq{"sq", {{{10, 10}, {20, 10}, {20, 20}, {10, 20}}}};
    const auto c = polygon_centroid(sq);
    ASSERT_TRUE(c);
    EXPECT_DOUBLE_EQ(c->x, 15.0);
    EXPECT_DOUBLE_EQ(c->y, 15.0);
    Scene s("s", 1, 40, 40);
    const auto pc = positives_from_gt(s, PolygonSet{{sq}});
    ASSERT_EQ(pc.crops.size(), 1u);
    EXPECT_EQ(pc.crops[0].center_r, 15);
    EXPECT_EQ(pc.crops[0].center_c, 15);
    EXPECT_EQ(pc.crops[0].size, 64u);
}

TEST(Positives, LShapeMatchesRasterCentroid)
{
    const Polygon l{"L", {{{4, 4}, {40, 4}, {40, 14}, {14, 14}, {14, 50}, {4, 50}}}};
    const auto c = polygon_centroid(l);
    ASSERT_TRUE(c);
    const auto m = rasterize(l, 64, 64);
    double sx = 0, sy = 0;
    for (std::uint32_t r = 0; r < 64; ++r)
        for (std::uint32_t x = 0; x < 64; ++x)
            if (m.at(r, x)) {
                sx += x + 0.5;
                sy += r + 0.5;
            }
    EXPECT_NEAR(c->x, sx / m.count(), 1.0);
    EXPECT_NEAR(c->y, sy / m.count(), 1.0);
}

TEST(Positives, DegenerateSkippedEdgePadded)
{
    Scene s("s", 1, 32, 32);
    std::fill(s.data.begin(), s.data.end(), 1.0f);
    const PolygonSet set{{{"flat", {{{0, 0}, {5, 0}, {10, 0}}}}, {"edge", {{{0, 0}, {4, 0}, {4, 4}, {0, 4}}}}}};
    const auto pc = positives_from_gt(s, set);
    EXPECT_EQ(pc.skipped, (std::vector<std::string>{"flat"}));
    ASSERT_EQ(pc.crops.size(), 1u);
    EXPECT_EQ(pc.crops[0].at(0, 0, 0), 0.0f);
    EXPECT_EQ(pc.crops[0].at(0, 63, 63), 0.0f);
    EXPECT_EQ(pc.crops[0].at(0, 32, 32), 1.0f);
}

TEST(Positives, ZeroJitterIsCentroidOrbit)
{
    Rng rng(4);
    Scene s("s", 2, 96, 96);
    for (auto& v : s.data) v = static_cast<float>(rng.normal());
    const PolygonSet set{{{"a", {{{10, 12}, {40, 12}, {40, 30}, {10, 30}}}}, {"b", {{{60, 60}, {90, 64}, {70, 90}}}}}};
    std::vector<AugmentedExample> expected;
    for (const auto& c : positives_from_gt(s, set).crops) {
        const auto orbit = d4_augment(c, "s");
        expected.insert(expected.end(), orbit.begin(), orbit.end());
    }
    EXPECT_EQ(jittered_positives(s, set, kCropSize, 0, 9), expected);
}

TEST(Positives, JitteredCropsStayWithinBound)
{
    Rng rng(5);
    Scene s("s", 1, 128, 128);
    for (auto& v : s.data) v = static_cast<float>(rng.normal());
    const PolygonSet set{{{"a", {{{30, 30}, {70, 30}, {70, 60}, {30, 60}}}}, {"flat", {{{0, 0}, {5, 0}, {10, 0}}}}}};
    const auto centered = positives_from_gt(s, set).crops.at(0);
    const auto got = jittered_positives(s, set, kCropSize, 8, 11);
    ASSERT_EQ(got.size(), static_cast<std::size_t>(kD4Order));
    EXPECT_EQ(got[0].data, centered);
    std::set<std::pair<std::int64_t, std::int64_t>> centers;
    for (int t = 0; t < kD4Order; ++t) {
        const auto& e = got[static_cast<std::size_t>(t)];
        EXPECT_TRUE(e.positive);
        EXPECT_EQ(e.transform_id, t);
        EXPECT_LE(std::abs(e.data.center_r - centered.center_r), 8);
        EXPECT_LE(std::abs(e.data.center_c - centered.center_c), 8);
        EXPECT_EQ(apply_d4(e.data, d4_inverse(t)), extract_crop(s, e.data.center_r, e.data.center_c, kCropSize));
        centers.insert({e.data.center_r, e.data.center_c});
    }
    EXPECT_GT(centers.size(), 1u);
    EXPECT_EQ(jittered_positives(s, set, kCropSize, 8, 11), got);
    HpnConfig cfg;
    cfg.position_jitter = 33;
    EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Mining, OverlapWithGtMinesNothing)
{
    Scene s("s", 1, 64, 64);
    ScoreGrid g("s", 4, 4);
    g.at(1, 1) = 0.9f;
    std::vector<TileLabel> labels;
    for (std::uint32_t r = 0; r < 4; ++r)
        for (std::uint32_t c = 0; c < 4; ++c) labels.push_back({r, c, (r == 1 && c == 1) ? 0.1 : 0.0, TileClass::negative});
    EXPECT_TRUE(mine_negatives(g, labels, s).empty());
    EXPECT_TRUE(mine_negatives(ScoreGrid("s", 4, 4), labels, s).empty());
}

TEST(Mining, TwoAdjacentTilesOneCrop)
{
    Scene s("s", 1, 64, 64);
    ScoreGrid g("s", 4, 4);
    g.at(0, 0) = 0.7f;
    g.at(0, 1) = 0.6f;
    std::vector<TileLabel> labels;
    for (std::uint32_t r = 0; r < 4; ++r)
        for (std::uint32_t c = 0; c < 4; ++c) labels.push_back({r, c, 0.0, TileClass::negative});
    const auto m = mine_negatives(g, labels, s);
    ASSERT_EQ(m.size(), 1u);
    EXPECT_EQ(m[0].crop.center_r, 8);
    EXPECT_EQ(m[0].crop.center_c, 16);
    EXPECT_EQ(m[0].region_tiles, 2u);
    const auto j = to_json(m[0]);
    EXPECT_EQ(j.at("region_tile_count"), 2);
    EXPECT_EQ(j.at("center_c"), 16);
}

TEST(Mining, SharesCandidateRule)
{
    Rng rng(2);
    for (int k = 0; k < 50; ++k) {
        const auto rows = static_cast<std::uint32_t>(rng.between(1, 8));
        const auto cols = static_cast<std::uint32_t>(rng.between(1, 8));
        Scene s("s", 1, rows * 16, cols * 16);
        ScoreGrid g("s", rows, cols);
        for (auto& p : g.prob_positive) p = static_cast<float>(rng.uniform());
        std::vector<TileLabel> labels;
        for (std::uint32_t r = 0; r < rows; ++r)
            for (std::uint32_t c = 0; c < cols; ++c) labels.push_back({r, c, 0.0, TileClass::negative});
        const auto regions = candidates(g);
        const auto mined = mine_negatives(g, labels, s);
        ASSERT_EQ(mined.size(), regions.size());
        for (std::size_t i = 0; i < regions.size(); ++i) {
            ASSERT_EQ(mined[i].crop.center_r, regions[i].center_r);
            ASSERT_EQ(mined[i].crop.center_c, regions[i].center_c);
        }
    }
}

TEST(Assemble, CapSubsamplesNegatives)
{
    Rng rng(3);
    std::vector<AugmentedExample> pos(10, {random_crop(rng, 4, 1), true, 0, "p"});
    std::vector<MinedNegative> neg;
    for (int k = 0; k < 40; ++k) neg.push_back({"n", random_crop(rng, 4, 1), 1});
    const auto set = assemble_hpn_set(pos, neg, 2.7, 5);
    EXPECT_EQ(set.size(), 10u + 27u);
    EXPECT_EQ(set, assemble_hpn_set(pos, neg, 2.7, 5));
    EXPECT_EQ(assemble_hpn_set(pos, std::span(neg).first(20), 2.7, 5).size(), 30u);
}

TEST(Classify, ThresholdsAndBatching)
{
    Rng rng(4);
    const auto net = build_hpn(2, 7, 16);
    std::vector<Crop> crops;
    for (int k = 0; k < 40; ++k) crops.push_back(random_crop(rng, 16, 2));
    const auto batch = classify_batch(net, crops, 0.5);
    for (std::size_t i = 0; i < crops.size(); ++i) {
        const auto one = classify(net, crops[i], 0.5);
        ASSERT_EQ(one, batch[i]);
        ASSERT_TRUE(classify(net, crops[i], 0.0).accept);
        ASSERT_FALSE(classify(net, crops[i], 1.0).accept);
        for (double t = 0.0; t < 1.0; t += 0.1) {
            if (!classify(net, crops[i], t).accept) ASSERT_FALSE(classify(net, crops[i], t + 0.1).accept);
        }
    }
    EXPECT_THROW(classify(net, random_crop(rng, 32, 2), 0.5), ValidationError);
    EXPECT_THROW(classify(net, random_crop(rng, 16, 3), 0.5), ValidationError);
}

TEST(TrainHpn, SeparableDeterministicAndChecked)
{
    Rng rng(5);
    const auto train = toy_set(rng, 64, 16);
    const auto val = toy_set(rng, 40, 16);
    HpnConfig cfg;
    cfg.crop_size = 16;
    cfg.seed = 3;
    cfg.lr = 0.003f;
    test::TempDir a, b;
    const auto ra = train_hpn(train, val, cfg, a.path(), "x");
    const auto rb = train_hpn(train, val, cfg, b.path(), "x");
    EXPECT_EQ(ra.epoch_losses.size(), 60u);
    EXPECT_EQ(detail::read_file(ra.final_path), detail::read_file(rb.final_path));
    EXPECT_EQ(detail::read_file(ra.best_path), detail::read_file(rb.best_path));
    const auto net = nn::load_checkpoint(ra.final_path).network;
    EXPECT_GE(hpn_accuracy(net, val), 0.95);
    EXPECT_GE(ra.best_val_accuracy, 0.95);

    std::vector<AugmentedExample> only_pos;
    for (const auto& e : train) if (e.positive) only_pos.push_back(e);
    EXPECT_THROW(train_hpn(only_pos, val, cfg, a.path()), ConfigError);
}
