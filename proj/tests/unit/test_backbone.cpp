#include <cmath>

#include "doctest.h"

#include "../support/gradcheck.hpp"
#include "dub3d/backbone.hpp"
#include "dub3d/error.hpp"

using namespace dub3d;
using dub3d::testing::random_tensor;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

}  // namespace

TEST_SUITE("backbone") {
    TEST_CASE("presets validate and carry the expected constants") {
        auto t = backbone_preset("swin-t");
        CHECK(t.embed_dim == 96);
        CHECK(t.depths == std::array<std::int64_t, 4>{2, 2, 6, 2});
        CHECK(t.heads == std::array<std::int64_t, 4>{3, 6, 12, 24});
        CHECK(t.window == Dims3{8, 7, 7});
        CHECK(t.patch == Dims3{2, 4, 4});
        auto d = backbone_preset("desk");
        CHECK(d.embed_dim == 32);
        CHECK(d.depths == std::array<std::int64_t, 4>{1, 1, 2, 1});
        CHECK_NOTHROW(validate_backbone(t));
        CHECK_THROWS_AS(backbone_preset("swin-xl"), ConfigError);
        auto bad = t;
        bad.heads[0] = 5;
        CHECK_THROWS_AS(validate_backbone(bad), ConfigError);
    }

    TEST_CASE("stage shapes follow patch and merge arithmetic") {
        auto t = backbone_stage_shapes(backbone_preset("swin-t"), 16, 224, 224);
        CHECK(t[0] == Shape{8, 56, 56, 96});
        CHECK(t[1] == Shape{8, 28, 28, 192});
        CHECK(t[2] == Shape{8, 14, 14, 384});
        CHECK(t[3] == Shape{8, 7, 7, 768});
        auto d = backbone_stage_shapes(backbone_preset("desk"), 8, 56, 56);
        CHECK(d[3] == Shape{4, 2, 2, 256});
    }

    TEST_CASE("patch embedding shapes") {
        NoGradGuard guard;
        ParamStore store(1);
        PatchEmbed3D rgb(store, "rgb", backbone_preset("swin-t", 3));
        PatchEmbed3D flow(store, "flow", backbone_preset("swin-t", 2));
        CHECK(rgb(Tensor::zeros({16, 224, 224, 3})).shape() == Shape{8, 56, 56, 96});
        CHECK(flow(Tensor::zeros({16, 224, 224, 2})).shape() == Shape{8, 56, 56, 96});
        CHECK_THROWS(rgb(Tensor::zeros({1, 224, 224, 3})));
        CHECK_THROWS(rgb(Tensor::zeros({2, 222, 224, 3})));
    }

    TEST_CASE("zero clip embeds to the projection bias") {
        ParamStore store(2);
        PatchEmbed3D embed(store, "pe", backbone_preset("desk"));
        const Param* bias = store.find("pe.proj.bias");
        REQUIRE(bias != nullptr);
        Tensor b = bias->value;
        b.data_mut()[0] = 0.75;
        Tensor y = embed(Tensor::zeros({4, 8, 8, 3}));
        for (std::int64_t i = 0; i < y.numel(); i += 32) CHECK(y.data()[i] == 0.75);
    }

    TEST_CASE("window counting") {
        auto layout = make_window_layout({8, 56, 56}, {8, 7, 7}, {0, 0, 0});
        CHECK(layout.num_windows() == 64);
        CHECK(layout.window_tokens() == 392);
        CHECK_THROWS(make_window_layout({8, 56, 56}, {8, 7, 7}, {0, 7, 0}));
        auto clamped = make_window_layout({4, 2, 2}, {8, 7, 7}, {4, 3, 3});
        CHECK(clamped.window == Dims3{4, 2, 2});
        CHECK_FALSE(clamped.shifted());
    }

    TEST_CASE("partition is a pure reshape without shift") {
        Rng rng(3);
        Tensor x = random_tensor({2, 4, 4, 3}, rng);
        auto layout = make_window_layout({2, 4, 4}, {2, 2, 2}, {0, 0, 0});
        Tensor w = window_partition(x, layout);
        CHECK(w.shape() == Shape{4, 8, 3});
        // first window, second token is (t=0, h=0, w=1)
        CHECK(w.at({0, 1, 2}) == x.at({0, 0, 1, 2}));
        // second window starts at (0, 0, 2)
        CHECK(w.at({1, 0, 0}) == x.at({0, 0, 2, 0}));
        CHECK(bitwise_equal(window_reverse(w, layout), x));
    }

    TEST_CASE("partition round trip for every shift on small grids") {
        Rng rng(4);
        for (std::int64_t t = 1; t <= 4; t += 3) {
            for (std::int64_t h = 3; h <= 8; h += 5) {
                Tensor x = random_tensor({t, h, h, 2}, rng);
                for (int mask = 0; mask < 8; ++mask) {
                    const Dims3 window{2, 4, 4};
                    const Dims3 shift{(mask & 1) ? 1 : 0, (mask & 2) ? 2 : 0, (mask & 4) ? 2 : 0};
                    auto layout = make_window_layout({t, h, h}, window, shift);
                    CHECK(bitwise_equal(window_reverse(window_partition(x, layout), layout), x));
                }
            }
        }
    }

    TEST_CASE("shift mask separates cyclic seam regions") {
        auto layout = make_window_layout({4, 4, 4}, {2, 2, 2}, {1, 1, 1});
        Tensor mask = shifted_window_mask(layout);
        REQUIRE(mask.defined());
        CHECK(mask.shape() == Shape{8, 8, 8});
        // the first window is away from every seam
        for (int i = 0; i < 64; ++i) CHECK(mask.data()[i] == 0.0);
        // the last window touches the seam on every axis: all 8 tokens are in distinct regions
        for (int i = 0; i < 8; ++i) {
            for (int j = 0; j < 8; ++j) CHECK(mask.at({7, i, j}) == (i == j ? 0.0 : -1e9));
        }
        CHECK_FALSE(shifted_window_mask(make_window_layout({4, 4, 4}, {2, 2, 2}, {0, 0, 0})).defined());
    }

    TEST_CASE("attention rows sum to one and masked weights vanish") {
        Rng rng(5);
        ParamStore store(5);
        SwinBlock block(store, "b", 8, 2, {2, 2, 2}, 4.0);
        ForwardContext ctx;
        Tensor weights;
        Tensor x = random_tensor({4, 4, 4, 8}, rng, -2, 2, false);
        block(x, true, ctx, &weights);
        auto layout = make_window_layout({4, 4, 4}, {2, 2, 2}, {1, 1, 1});
        Tensor mask = shifted_window_mask(layout);
        const auto nW = weights.dim(0), heads = weights.dim(1), n = weights.dim(2);
        double worst_row = 0.0, worst_masked = 0.0;
        for (std::int64_t w = 0; w < nW; ++w)
            for (std::int64_t hh = 0; hh < heads; ++hh)
                for (std::int64_t i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                        const double v = weights.at({w, hh, i, j});
                        s += v;
                        if (mask.at({w, i, j}) != 0.0) worst_masked = std::max(worst_masked, v);
                    }
                    worst_row = std::max(worst_row, std::abs(s - 1.0));
                }
        CHECK(worst_row <= 1e-9);
        CHECK(worst_masked < 1e-12);
    }

    TEST_CASE("shift is a no-op when one window covers the grid") {
        Rng rng(6);
        ParamStore store(6);
        SwinBlock block(store, "b", 8, 2, {2, 2, 2}, 4.0);
        ForwardContext ctx;
        Tensor x = random_tensor({2, 2, 2, 8}, rng, -1, 1, false);
        CHECK(bitwise_equal(block(x, false, ctx), block(x, true, ctx)));
    }

    TEST_CASE("block preserves shape and its input gradient is correct") {
        Rng rng(7);
        ParamStore store(7);
        SwinBlock block(store, "b", 8, 2, {2, 2, 2}, 2.0);
        ForwardContext ctx;
        for (bool shifted : {false, true}) {
            Tensor x = random_tensor({2, 4, 4, 8}, rng);
            CHECK(block(x, shifted, ctx).shape() == x.shape());
            auto r = dub3d::testing::grad_check(
                [&](const std::vector<Tensor>& v) { return block(v[0], shifted, ctx); }, {x}, rng);
            CHECK(r.rel_error < 1e-3);
        }
    }

    TEST_CASE("patch merging shapes and constant input") {
        NoGradGuard guard;
        ParamStore store(8);
        PatchMerging big(store, "m96", 96);
        CHECK(big(Tensor::zeros({8, 56, 56, 96})).shape() == Shape{8, 28, 28, 192});
        PatchMerging small(store, "m4", 4);
        Tensor odd = Tensor::full({8, 7, 7, 4}, 0.3);
        Tensor y = small(odd);
        CHECK(y.shape() == Shape{8, 4, 4, 8});
        Rng rng(8);
        Tensor x = Tensor::zeros({2, 4, 4, 4});
        for (std::int64_t i = 0; i < x.numel(); ++i) x.data_mut()[i] = 0.1 * static_cast<double>(i % 4);
        Tensor c = small(x);
        for (std::int64_t i = 0; i < c.numel(); ++i) CHECK(c.data()[i] == doctest::Approx(c.data()[i % 8]));
    }

    TEST_CASE("desk backbone forward shapes and determinism") {
        ParamStore store(9);
        Backbone bb(store, "video", backbone_preset("desk"));
        Rng rng(9);
        Tensor clip = random_tensor({8, 56, 56, 3}, rng, -1, 1, false);
        ForwardContext ctx;
        auto a = bb.forward(clip, ctx, true);
        auto b = bb.forward(clip, ctx, true);
        CHECK(a.tokens.shape() == Shape{4, 2, 2, 256});
        CHECK(a.pooled.shape() == Shape{256});
        REQUIRE(a.stage_outputs.size() == 4);
        CHECK(a.stage_outputs[0].shape() == Shape{4, 14, 14, 32});
        CHECK(bitwise_equal(a.pooled, b.pooled));
    }

    TEST_CASE("input channels only change the patch projection") {
        ParamStore s3(1), s2(1);
        Backbone b3(s3, "x", backbone_preset("swin-t", 3));
        Backbone b2(s2, "x", backbone_preset("swin-t", 2));
        CHECK(s3.count() - s2.count() == 2 * 4 * 4 * 96);
        CHECK(s3.count() - s3.count_with_prefix("x.patch_embed") ==
              s2.count() - s2.count_with_prefix("x.patch_embed"));
    }
}
