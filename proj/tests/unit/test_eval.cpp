#include <gtest/gtest.h>

#include "tilecascade/eval.hpp"
#include "../oracles.hpp"

using namespace tilecascade;

namespace {

Detection det(std::int64_t r0, std::int64_t c0, std::int64_t r1, std::int64_t c1)
{
    return {"s", (r0 + r1) / 2, (c0 + c1) / 2, {r0, c0, r1, c1}, 1, 1.0};
}

Polygon rect(std::string id, double x0, double y0, double x1, double y1)
{
    return {std::move(id), {{{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}}};
}

}  // namespace

TEST(Match, SpecExamples)
{
    const PolygonSet one{{rect("a", 10, 10, 20, 20)}};
    const auto gt1 = rasterize(one, 64, 64);
    EXPECT_EQ(match(DetectionSet{"s", "", {det(0, 0, 32, 32)}}, one, gt1), (MetricsCounts{1, 0, 0}));

    const PolygonSet two{{rect("a", 10, 10, 20, 20), rect("b", 40, 40, 50, 50)}};
    const auto gt2 = rasterize(two, 64, 64);
    const DetectionSet dets{"s", "", {det(0, 0, 12, 12), det(15, 15, 30, 30), det(0, 50, 8, 64)}};
    EXPECT_EQ(match(dets, two, gt2), (MetricsCounts{2, 1, 1}));

    const PolygonSet three{{rect("a", 1, 1, 5, 5), rect("b", 10, 10, 15, 15), rect("c", 20, 20, 25, 25)}};
    EXPECT_EQ(match(DetectionSet{}, three, rasterize(three, 32, 32)), (MetricsCounts{0, 0, 3}));
}

TEST(Match, InvalidPixelsExcluded)
{
    const PolygonSet polys{{rect("a", 2, 2, 6, 6), rect("b", 20, 20, 26, 26)}};
    const auto gt = rasterize(polys, 32, 32);
    ValidityMask v(32, 32);
    for (std::uint32_t r = 18; r < 32; ++r)
        for (std::uint32_t c = 18; c < 32; ++c) v.valid[r * 32 + c] = 0;
    // The second detection touches an invalid pixel; polygon b lies wholly in the invalid block.
    const DetectionSet dets{"s", "", {det(0, 0, 8, 8), det(15, 15, 19, 19)}};
    EXPECT_EQ(match(dets, polys, gt, &v), (MetricsCounts{1, 0, 0}));
    EXPECT_THROW(match(dets, polys, gt, std::make_unique<ValidityMask>(16, 32).get()), ValidationError);
}

TEST(Match, AgreesWithBruteForce)
{
    Rng rng(1);
    for (int k = 0; k < 500; ++k) {
        const auto H = static_cast<std::uint32_t>(rng.between(8, 128));
        const auto W = static_cast<std::uint32_t>(rng.between(8, 128));
        PolygonSet polys;
        const auto np = rng.between(0, 10);
        for (std::uint64_t i = 0; i < np; ++i) {
            Ring ring;
            const double cx = rng.uniform(0, W), cy = rng.uniform(0, H);
            const auto nv = rng.between(3, 6);
            for (std::uint64_t v = 0; v < nv; ++v) ring.push_back({cx + rng.uniform(-12, 12), cy + rng.uniform(-12, 12)});
            polys.polygons.push_back({"p" + std::to_string(i), {ring}});
        }
        DetectionSet dets{"s", "", {}};
        const auto nd = rng.between(0, 20);
        for (std::uint64_t i = 0; i < nd; ++i) {
            const auto r0 = static_cast<std::int64_t>(rng.between(0, H + 16)) - 16;
            const auto c0 = static_cast<std::int64_t>(rng.between(0, W + 16)) - 16;
            dets.detections.push_back(det(r0, c0, r0 + static_cast<std::int64_t>(rng.between(1, 40)),
                                          c0 + static_cast<std::int64_t>(rng.between(1, 40))));
        }
        std::optional<ValidityMask> v;
        if (rng.below(2)) {
            v.emplace(H, W);
            const auto r0 = rng.below(H), c0 = rng.below(W);
            for (std::uint32_t r = static_cast<std::uint32_t>(r0); r < std::min<std::uint64_t>(H, r0 + 20); ++r)
                for (std::uint32_t c = static_cast<std::uint32_t>(c0); c < std::min<std::uint64_t>(W, c0 + 20); ++c)
                    v->valid[static_cast<std::size_t>(r) * W + c] = 0;
        }
        const ValidityMask* vp = v ? &*v : nullptr;
        const auto got = match(dets, polys, rasterize(polys, H, W), vp);
        ASSERT_EQ(got, oracle::brute_match(dets, polys, H, W, vp)) << "case " << k;
        ASSERT_LE(got.fn, polys.polygons.size());
    }
}

TEST(Match, ExtraDetectionOnMatchedPolygon)
{
    const PolygonSet polys{{rect("a", 10, 10, 30, 30), rect("b", 40, 40, 50, 50)}};
    const auto gt = rasterize(polys, 64, 64);
    DetectionSet dets{"s", "", {det(5, 5, 15, 15)}};
    const auto before = match(dets, polys, gt);
    dets.detections.push_back(det(20, 20, 35, 35));
    const auto after = match(dets, polys, gt);
    EXPECT_EQ(after.tp, before.tp + 1);
    EXPECT_EQ(after.fp, before.fp);
    EXPECT_EQ(after.fn, before.fn);
}

TEST(Metrics, TableRowsReproduced)
{
    EXPECT_NEAR(f_measure(0.956, 0.929), 0.942, 0.0005);
    EXPECT_NEAR(f_measure(0.953, 0.937), 0.945, 0.0005);
}

TEST(Metrics, Formulas)
{
    EXPECT_EQ(metrics({0, 0, 0}), (Metrics{0, 0, 0}));
    const auto m = metrics({3, 1, 2});
    EXPECT_DOUBLE_EQ(m.recall, 0.6);
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.f_measure, 2 * 0.6 * 0.75 / 1.35);
    EXPECT_EQ(metrics({0, 5, 5}), (Metrics{0, 0, 0}));
}

TEST(Metrics, FBounds)
{
    for (std::uint64_t tp = 0; tp < 12; ++tp)
        for (std::uint64_t fp = 0; fp < 12; ++fp)
            for (std::uint64_t fn = 0; fn < 12; ++fn) {
                const auto m = metrics({tp, fp, fn});
                ASSERT_LE(m.f_measure, 2 * std::min(m.precision, m.recall) + 1e-12);
                ASSERT_LE(m.f_measure, std::max(m.precision, m.recall) + 1e-12);
                ASSERT_GE(m.f_measure, 0.0);
            }
}

TEST(Report, SingleSceneMicroEqualsMacro)
{
    const auto r = report({{"a", {3, 1, 2}}});
    EXPECT_EQ(r.micro, r.scenes[0].metrics);
    EXPECT_EQ(r.macro, r.scenes[0].metrics);
}

TEST(Report, MicroVersusMacro)
{
    const auto r = report({{"a", {9, 1, 1}}, {"b", {1, 0, 9}}}, "fp");
    EXPECT_EQ(r.pooled, (MetricsCounts{10, 1, 10}));
    EXPECT_DOUBLE_EQ(r.micro.recall, 0.5);
    EXPECT_DOUBLE_EQ(r.macro.recall, 0.5);
    EXPECT_NEAR(r.micro.precision, 10.0 / 11.0, 1e-12);
    EXPECT_NEAR(r.macro.precision, 0.95, 1e-12);
    const auto j = to_json(r);
    EXPECT_EQ(j.at("config"), "fp");
    EXPECT_EQ(j.at("scenes").size(), 2u);
    EXPECT_EQ(j.at("micro").at("counts").at("tp"), 10);
    EXPECT_NEAR(j.at("macro").at("precision").get<double>(), 0.95, 1e-12);
}

TEST(Report, PooledMatchesBruteForce)
{
    Rng rng(2);
    for (int k = 0; k < 100; ++k) {
        std::vector<std::pair<std::string, MetricsCounts>> rows;
        MetricsCounts sum;
        const auto n = rng.between(1, 6);
        for (std::uint64_t i = 0; i < n; ++i) {
            const MetricsCounts c{rng.below(20), rng.below(20), rng.below(20)};
            rows.emplace_back("s" + std::to_string(i), c);
            sum.tp += c.tp;
            sum.fp += c.fp;
            sum.fn += c.fn;
        }
        const auto r = report(rows);
        ASSERT_EQ(r.pooled, sum);
        ASSERT_EQ(r.micro, metrics(sum));
    }
}

TEST(Report, EmptyRejected)
{
    EXPECT_THROW(report({}), ValidationError);
}

TEST(Report, TableLayout)
{
    const auto t = to_table(report({{"scene_b", {13, 1, 1}}, {"scene_d", {1, 0, 0}}}));
    const std::string expected = "            scene_b  scene_d    micro    macro\n"
                                 "Recall        0.929    1.000    0.933    0.964\n"
                                 "Precision     0.929    1.000    0.933    0.964\n"
                                 "F-measure     0.929    1.000    0.933    0.964\n";
    EXPECT_EQ(t, expected);
}
