#include <cstring>

#include <gtest/gtest.h>

#include "tilecascade/hpn.hpp"
#include "tilecascade/hrn.hpp"
#include "tilecascade/nn/checkpoint.hpp"
#include "test_util.hpp"

using namespace tilecascade;
using namespace tilecascade::nn;

namespace {

Network random_net(Rng& rng)
{
    const int C = static_cast<int>(rng.between(1, 4));
    const int O = static_cast<int>(rng.between(1, 6));
    const int S = 2 * static_cast<int>(rng.between(2, 5));
    return Network({LayerSpec::conv(C, O, 3, 1), LayerSpec::relu(), LayerSpec::maxpool2(), LayerSpec::conv(O, O, 1, 0),
                    LayerSpec::flatten(), LayerSpec::fc(O * (S / 2) * (S / 2), 2)},
                   {1, C, S, S}, rng.next());
}

}  // namespace

TEST(Checkpoint, RoundTripBytesAndOutputs)
{
    Rng rng(11);
    for (int k = 0; k < 100; ++k) {
        const Network net = random_net(rng);
        const CheckpointMeta meta{static_cast<std::int64_t>(rng.below(100)), "cfg" + std::to_string(k)};
        const auto bytes = encode_checkpoint(net, meta);
        const auto back = decode_checkpoint(bytes);
        ASSERT_EQ(back.meta, meta);
        ASSERT_EQ(back.network.layers(), net.layers());
        ASSERT_EQ(back.network.params(), net.params());
        ASSERT_EQ(encode_checkpoint(back.network, back.meta), bytes);

        Tensor x(net.nominal_input());
        for (auto& v : x.values) v = static_cast<float>(rng.normal());
        const auto a = forward(net, x);
        const auto b = forward(back.network, x);
        ASSERT_EQ(std::memcmp(a.values.data(), b.values.data(), a.values.size() * 4), 0);
    }
}

TEST(Checkpoint, TwoSavesIdentical)
{
    test::TempDir dir;
    const auto net = build_hrn(3, 5);
    save_checkpoint(net, {10, "h"}, dir.path() / "a.cnnc");
    save_checkpoint(net, {10, "h"}, dir.path() / "b.cnnc");
    EXPECT_EQ(tilecascade::detail::read_file(dir.path() / "a.cnnc"), tilecascade::detail::read_file(dir.path() / "b.cnnc"));
    const auto hpn = build_hpn(3, 5);
    save_checkpoint(hpn, {1, "p"}, dir.path() / "p.cnnc");
    EXPECT_EQ(load_checkpoint(dir.path() / "p.cnnc").network.params(), hpn.params());
}

TEST(Checkpoint, TruncatedIsCorruption)
{
    Rng rng(12);
    const auto bytes = encode_checkpoint(random_net(rng), {1, "x"});
    for (std::size_t cut : {std::size_t{6}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
        EXPECT_THROW(decode_checkpoint(bytes.substr(0, cut)), CorruptionError) << cut;
    }
}

TEST(Checkpoint, MagicVersionAndShapeTable)
{
    Rng rng(13);
    const auto bytes = encode_checkpoint(random_net(rng), {1, "x"});
    auto bad = bytes;
    bad[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad), FormatError);
    bad = bytes;
    bad[4] = 9;
    EXPECT_THROW(decode_checkpoint(bad), FormatError);

    Network net({LayerSpec::fc(3, 2)}, {1, 3, 1, 1}, 1);
    auto fc = encode_checkpoint(net, {1, "x"});
    // "CNNC" ver count | kind in out | nparams | ndim d0 d1 ...
    const std::size_t d0 = 4 + 4 + 4 + 1 + 8 + 4 + 4;
    std::uint32_t v = 7;
    std::memcpy(fc.data() + d0, &v, 4);
    EXPECT_THROW(decode_checkpoint(fc), FormatError);
}

TEST(Checkpoint, TrailingBytesAreCorruption)
{
    Rng rng(14);
    auto bytes = encode_checkpoint(random_net(rng), {1, "x"});
    bytes.push_back('\0');
    EXPECT_THROW(decode_checkpoint(bytes), CorruptionError);
}
