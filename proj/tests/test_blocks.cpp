#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <thread>

#include "cvr/blocks.hpp"
#include "cvr/errors.hpp"
#include "cvr/grad_check.hpp"
#include "cvr/model.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cvr;
using namespace cvr::nn;
using cvr::testing::bit_equal;
using cvr::testing::max_abs_diff;
using cvr::testing::random_tensor;
using cvr::testing::sigmoid_ref;
using namespace cvr::testing;

TEST_SUITE("blocks") {

TEST_CASE("DM trivial cases") {
    Rng rng(1);
    ParamStore store;
    const DenoisingModule dm(store, "dm", DmConfig{3, 2}, rng);
    CHECK(dm.config().pool_factor() == 2);
    CHECK(DmConfig{3, 3}.pool_factor() == 4);
    CHECK(DmConfig{3, 4}.pool_factor() == 8);
    CHECK_THROWS_AS(DmConfig(DmConfig{3, 5}).validate(), ConfigError);

    for (double v : dm.forward(Tensor(Shape(2, 3, 4, 8, 8), 0.0)).data()) CHECK(v == 0.0);

    for (auto& [path, e] : store)
        for (double& v : e.tensor.mutable_data()) v = 0.0;
    const Tensor y = dm.forward(Tensor(Shape(1, 3, 4, 8, 8), 1.0));
    CHECK(y.shape() == Shape(1, 3, 4, 8, 8));
    for (double v : y.data()) CHECK(v == doctest::Approx(0.731059).epsilon(1e-6));

    CHECK_THROWS_AS(dm.forward(Tensor(Shape(1, 4, 2, 8, 8), 1.0)), DimensionError);
}

TEST_CASE("DM matches the loop oracle") {
    for (std::size_t i = 2; i <= 4; ++i) {
        Rng rng(10 + i);
        ParamStore store;
        const DenoisingModule dm(store, "dm", DmConfig{3, i}, rng);
        randomize(store, rng);
        // Extents that are not multiples of r exercise ceil-mode pooling.
        const Tensor x = random_tensor(Shape(2, 3, 3, 11, 9), rng, -2, 2);
        const Grid want = dm_oracle(Grid(x), store.get("dm.conv.weight"), store.get("dm.conv.bias"), 1u << (i - 1));
        CHECK(max_abs_diff(dm.forward(x), want.v) < 1e-10);
    }
}

TEST_CASE("DM never amplifies its input") {
    Rng rng(2);
    for (int trial = 0; trial < 5; ++trial) {
        ParamStore store;
        const DenoisingModule dm(store, "dm", DmConfig{4, 2 + static_cast<std::size_t>(trial % 3)}, rng);
        randomize(store, rng, -2, 2);
        Tensor x = random_tensor(Shape(1, 4, 3, 8, 8), rng, -5, 5);
        x.mutable_data()[7] = 0.0;
        const Tensor y = dm.forward(x);
        for (std::size_t k = 0; k < x.numel(); ++k) {
            CHECK(std::abs(y.data()[k]) <= std::abs(x.data()[k]));
            if (x.data()[k] != 0.0) CHECK(std::abs(y.data()[k]) < std::abs(x.data()[k]));
        }
    }
}

TEST_CASE("MSB structure") {
    Rng rng(3);
    ParamStore store;
    const MultiScaleBlock msb(store, "m", MsbConfig{16, 64, 32, {1, 2, 2}, true, false}, rng);
    // Four 16-channel branches.
    CHECK(store.get("m.branch2.spatial.weight").shape() == Shape(16, 16, 1, 3, 3));
    CHECK(store.get("m.branch2.temporal.weight").shape().t() == 1);
    CHECK(store.get("m.branch3.temporal.weight").shape().t() == 3);
    CHECK(store.get("m.branch4.temporal.weight").shape().t() == 5);
    CHECK(store.contains("m.branch4.dm.conv.weight"));
    CHECK(store.contains("m.shortcut.weight"));
    CHECK_FALSE(store.contains("m.branch1.spatial.weight"));

    ParamStore fixed_store;
    const MultiScaleBlock fixed(fixed_store, "m", MsbConfig{16, 64, 32, {1, 2, 2}, true, true}, rng);
    for (const char* b : {"m.branch2", "m.branch3", "m.branch4"})
        CHECK(fixed_store.get(std::string(b) + ".temporal.weight").shape().t() == 3);

    const Tensor x = random_tensor(Shape(2, 16, 4, 8, 8), rng);
    const Tensor a = msb.forward(x);
    CHECK(a.shape() == Shape(2, 32, 4, 4, 4));
    CHECK(fixed.forward(x).shape() == a.shape());

    CHECK_THROWS_AS(MultiScaleBlock(store, "bad", MsbConfig{16, 18, 16}, rng), ConfigError);
    ParamStore id_store;
    const MultiScaleBlock same(id_store, "s", MsbConfig{8, 8, 8}, rng);
    CHECK_FALSE(id_store.contains("s.shortcut.weight"));
}

TEST_CASE("MSB composes its parts as described") {
    for (const CascadeMode mode : {CascadeMode::cascaded, CascadeMode::literal}) {
        Rng rng(4);
        ParamStore store;
        MsbConfig cfg{8, 8, 12, {2, 1, 1}, true, false, mode};
        const MultiScaleBlock msb(store, "m", cfg, rng);
        randomize(store, rng);
        const Tensor x = random_tensor(Shape(1, 8, 6, 5, 5), rng);

        auto conv = [&](const std::string& p, const Tensor& in, Triple stride, Triple pad) {
            return conv3d(in, store.get(p + ".weight"), store.get(p + ".bias"), stride, pad);
        };
        auto dm = [&](std::size_t i, const Tensor& in) {
            const std::string p = "m.branch" + std::to_string(i) + ".dm.conv";
            const Grid g = dm_oracle(Grid(in), store.get(p + ".weight"), store.get(p + ".bias"), 1u << (i - 1));
            return Tensor(g.s, g.v);
        };
        auto st = [&](std::size_t i, const Tensor& in) {
            const std::string p = "m.branch" + std::to_string(i);
            const std::size_t k = 2 * i - 3;
            const Tensor h = relu(conv(p + ".spatial", dm(i, in), {1, 1, 1}, {0, 1, 1}));
            return relu(conv(p + ".temporal", h, {1, 1, 1}, {k / 2, 0, 0}));
        };
        const Tensor y = relu(conv("m.entry", x, {2, 1, 1}, {0, 0, 0}));
        const auto xs = split_channels(y, 4);
        const Tensor o2 = st(2, xs[1]);
        const Tensor o3 = st(3, add(xs[2], o2));
        const Tensor carry = mode == CascadeMode::cascaded ? o3 : st(3, xs[2]);
        const Tensor o4 = st(4, add(xs[3], carry));
        const Tensor z = conv("m.fuse", concat_channels(std::vector<Tensor>{xs[0], o2, o3, o4}), {1, 1, 1}, {0, 0, 0});
        const Tensor want = relu(add(z, conv("m.shortcut", x, {2, 1, 1}, {0, 0, 0})));
        const Tensor got = msb.forward(x);
        CHECK(max_abs_diff(got, std::vector<double>(want.data().begin(), want.data().end())) < 1e-10);
    }
}

TEST_CASE("MSB is lighter than the plain bottleneck") {
    for (std::size_t w : {32u, 64u, 128u}) {
        ParamStore ms, bs;
        Rng rng(5);
        MultiScaleBlock(ms, "m", MsbConfig{w, w / 2, w}, rng);
        BottleneckBlock(bs, "b", BottleneckConfig{w, w / 2, w}, rng);
        CHECK(ms.parameter_count() == msb_param_oracle(w, w / 2, w, true, false, false));
        CHECK(bs.parameter_count() == bottleneck_param_oracle(w, w / 2, w, false));
        CHECK(ms.parameter_count() < bs.parameter_count());
    }
    ParamStore ms, fs, bs;
    Rng rng(6);
    MultiScaleBlock(ms, "m", MsbConfig{16, 32, 64, {1, 2, 2}, false, false}, rng);
    MultiScaleBlock(fs, "m", MsbConfig{16, 32, 64, {1, 1, 1}, true, true}, rng);
    BottleneckBlock(bs, "b", BottleneckConfig{16, 32, 64, {1, 2, 2}, true}, rng);
    CHECK(ms.parameter_count() == msb_param_oracle(16, 32, 64, false, false, true));
    CHECK(fs.parameter_count() == msb_param_oracle(16, 32, 64, true, true, true));
    CHECK(bs.parameter_count() == bottleneck_param_oracle(16, 32, 64, true) + 9 * 32 * 32 + 32);

    // The model-level drop when the motion stream swaps bottlenecks for MSBs.
    ModelConfig c = apply_variant(ModelConfig{}, "b1");
    const std::size_t plain = TwoStreamModel(c).parameter_count();
    c.mvr_block = MvrBlock::msb;
    c.msb_dm = false;
    CHECK(TwoStreamModel(c).parameter_count() < plain);
}

TEST_CASE("bottleneck block") {
    Rng rng(7);
    ParamStore store;
    const BottleneckBlock b(store, "b", BottleneckConfig{8, 4, 16, {2, 2, 2}, true}, rng);
    CHECK(store.get("b.temporal.weight").shape() == Shape(4, 4, 3, 1, 1));
    CHECK(store.contains("b.dm.conv.weight"));
    const Tensor y = b.forward(random_tensor(Shape(1, 8, 4, 6, 6), rng));
    CHECK(y.shape() == Shape(1, 16, 2, 3, 3));
    for (double v : y.data()) CHECK(v >= 0.0);
}

TEST_CASE("SMC configuration") {
    Rng rng(8);
    ParamStore store;
    const SelectiveMotionComplement smc(store, "smc", SmcConfig{256}, rng);
    CHECK(store.get("smc.spatial_squeeze.weight").shape() == Shape(16, 256, 1, 1, 1));
    CHECK(store.get("smc.spatial_expand.weight").shape() == Shape(256, 16, 1, 1, 1));
    CHECK(store.get("smc.channel.weight").shape() == Shape(1, 1, 1, 1, 3));
    CHECK_THROWS_AS(smc.forward(Tensor(Shape(1, 256, 1, 2, 2)), Tensor(Shape(1, 256, 1, 2, 3))), DimensionError);
}

TEST_CASE("SMC matches the loop oracle") {
    Rng rng(9);
    ParamStore store;
    const SelectiveMotionComplement smc(store, "smc", SmcConfig{12, 4, 3}, rng);
    randomize(store, rng, -1, 1);
    const Tensor fi = random_tensor(Shape(2, 12, 3, 4, 5), rng);
    const Tensor fp = random_tensor(Shape(2, 12, 3, 4, 5), rng);
    const Grid want = smc_oracle(Grid(fi), Grid(fp), store, "smc");
    CHECK(max_abs_diff(smc.forward(fi, fp), want.v) < 1e-10);
}

TEST_CASE("SMC with zero motion returns the RGB feature") {
    Rng rng(10);
    ParamStore store;
    const SelectiveMotionComplement smc(store, "smc", SmcConfig{16, 16, 3}, rng);
    zero_biases(store);
    const Tensor fi = random_tensor(Shape(1, 16, 2, 3, 3), rng);
    CHECK(bit_equal(smc.forward(fi, Tensor(fi.shape(), 0.0)), fi));
}

TEST_CASE("CMA matches the loop oracle") {
    Rng rng(11);
    ParamStore store;
    const CrossModalityAugment cma(store, "cma", CmaConfig{6, 3}, rng);
    randomize(store, rng, -1, 1);
    const Tensor fi = random_tensor(Shape(2, 6, 2, 3, 2), rng);
    const Tensor fp = random_tensor(Shape(2, 6, 2, 3, 2), rng);
    const CmaResult r = cma.forward_detailed(fi, fp);
    CHECK(r.fused.shape() == Shape(2, 3, 2, 3, 2));
    CHECK(r.attn_rgb.shape() == Shape(2, 1, 1, 12, 12));
    CHECK(max_abs_diff(r.fused, cma_oracle(Grid(fi), Grid(fp), store, "cma", 3).v) < 1e-10);
    for (const Tensor& a : {r.attn_rgb, r.attn_mvr})
        for (std::size_t row = 0; row < 24; ++row) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 12; ++j) sum += a.data()[row * 12 + j];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    CHECK_THROWS_AS(cma.forward(fi, Tensor(Shape(2, 6, 2, 3, 3))), DimensionError);
}

TEST_CASE("CMA at a single position sums the values") {
    Rng rng(12);
    ParamStore store;
    const CrossModalityAugment cma(store, "cma", CmaConfig{5, 4}, rng);
    randomize(store, rng, -1, 1);
    const Tensor fi = random_tensor(Shape(3, 5, 1, 1, 1), rng);
    const Tensor fp = random_tensor(Shape(3, 5, 1, 1, 1), rng);
    const CmaResult r = cma.forward_detailed(fi, fp);
    for (double a : r.attn_rgb.data()) CHECK(a == 1.0);
    const Tensor vi = cma.projection(2)(fi);
    const Tensor vp = cma.projection(5)(fp);
    for (std::size_t k = 0; k < r.fused.numel(); ++k)
        CHECK(r.fused.data()[k] == doctest::Approx(vi.data()[k] + vp.data()[k]).epsilon(1e-14));
}

TEST_CASE("CMA keys carry no bias") {
    Rng rng(13);
    ParamStore store;
    const CrossModalityAugment cma(store, "cma", CmaConfig{4, 3}, rng);
    CHECK_FALSE(store.contains("cma.key_rgb.bias"));
    CHECK_FALSE(store.contains("cma.key_mvr.bias"));
    CHECK(store.contains("cma.query_rgb.bias"));
    CHECK(store.contains("cma.value_mvr.bias"));
    CHECK(store.parameter_count() == 6 * 4 * 3 + 4 * 3);
}

TEST_CASE("classifier head") {
    Rng rng(14);
    ParamStore store;
    const ClsHead head(store, "h", 6, 4, rng);
    randomize(store, rng);
    const Tensor x = random_tensor(Shape(2, 6, 2, 3, 3), rng);
    const Tensor z = head.forward(x);
    REQUIRE(z.shape() == Shape(2, 4, 1, 1, 1));
    const Tensor& w = store.get("h.fc.weight");
    const Tensor& b = store.get("h.fc.bias");
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t k = 0; k < 4; ++k) {
            double acc = b.data()[k];
            for (std::size_t c = 0; c < 6; ++c) {
                double m = 0.0;
                for (std::size_t i = 0; i < 18; ++i) m += x.data()[(n * 6 + c) * 18 + i];
                acc += w(k, c, 0, 0, 0) * m / 18.0;
            }
            CHECK(z(n, k, 0, 0, 0) == doctest::Approx(acc).epsilon(1e-13));
        }
    // Zero weights leave the bias.
    for (double& v : store.get("h.fc.weight").mutable_data()) v = 0.0;
    const Tensor zb = head.forward(x);
    for (std::size_t k = 0; k < 4; ++k) CHECK(zb(1, k, 0, 0, 0) == b.data()[k]);
    const Tensor pooled = pool(Tensor(Shape(1, 6, 2, 3, 3), 2.5), PoolMode::avg_global);
    for (double v : pooled.data()) CHECK(v == 2.5);
    CHECK_THROWS_AS(head.forward(Tensor(Shape(1, 5, 1, 1, 1))), DimensionError);
}

TEST_CASE("score fusion") {
    const Tensor z(Shape(1, 3, 1, 1, 1), {0.5, -1.0, 2.0});
    CHECK(max_abs_diff(fuse_scores(z, z, z), std::vector<double>{0.5, -1.0, 2.0}) < 1e-15);
    const Tensor s = fuse_scores(Tensor(Shape(1, 2, 1, 1, 1), {3, 0}), Tensor(Shape(1, 2, 1, 1, 1), {0, 3}),
                                 Tensor(Shape(1, 2, 1, 1, 1), 0.0));
    CHECK(s.data()[0] == 1.0);
    CHECK(s.data()[1] == 1.0);

    Rng rng(15);
    const Tensor a = random_tensor(Shape(4, 5, 1, 1, 1), rng, -3, 3);
    const Tensor b = random_tensor(Shape(4, 5, 1, 1, 1), rng, -3, 3);
    const Tensor c = random_tensor(Shape(4, 5, 1, 1, 1), rng, -3, 3);
    const Tensor abc = fuse_scores(a, b, c);
    for (const Tensor& perm : {fuse_scores(b, c, a), fuse_scores(c, a, b), fuse_scores(b, a, c)})
        CHECK(max_abs_diff(perm.data(), abc.data()) < 1e-15);
    const Tensor shift(Shape(4, 5, 1, 1, 1), 7.25);
    CHECK(argmax_classes(fuse_scores(add(a, shift), add(b, shift), add(c, shift))) == argmax_classes(abc));
    CHECK_THROWS_AS(fuse_scores(a, b, Tensor(Shape(4, 4, 1, 1, 1))), DimensionError);

    CHECK(argmax_classes(Tensor(Shape(2, 3, 1, 1, 1), {1, 4, 4, 2, 2, 2})) == std::vector<int>{1, 0});
}

TEST_CASE("block gradients pass grad_check") {
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 12;
    auto check = [&](const char* name, ParamStore& store, const std::function<Tensor()>& f) {
        const auto r = grad_check(f, store, opts);
        INFO(name << ": worst " << r.worst_path << "[" << r.worst_index << "] analytic " << r.worst_analytic
                  << " numeric " << r.worst_numeric);
        CHECK(r.max_rel_error < 1e-4);
    };
    Rng rng(16);
    SUBCASE("DM") {
        for (std::size_t i = 2; i <= 4; ++i) {
            ParamStore store;
            const DenoisingModule dm(store, "dm", DmConfig{3, i}, rng);
            Tensor x = store.add("x", random_tensor(Shape(2, 3, 3, 9, 7), rng));
            const Tensor w = random_tensor(Shape(2, 3, 3, 9, 7), rng);
            check("dm", store, [&] { return sum(mul(dm.forward(x), w)); });
        }
    }
    SUBCASE("MSB") {
        for (const CascadeMode mode : {CascadeMode::cascaded, CascadeMode::literal}) {
            ParamStore store;
            const MultiScaleBlock msb(store, "m", MsbConfig{4, 8, 6, {2, 2, 2}, true, false, mode}, rng);
            randomize(store, rng);
            Tensor x = store.add("x", random_tensor(Shape(1, 4, 6, 6, 6), rng));
            const Tensor w = random_tensor(Shape(1, 6, 3, 3, 3), rng);
            check("msb", store, [&] { return sum(mul(msb.forward(x), w)); });
        }
    }
    SUBCASE("bottleneck") {
        ParamStore store;
        const BottleneckBlock b(store, "b", BottleneckConfig{4, 4, 8, {1, 2, 2}, true}, rng);
        randomize(store, rng);
        Tensor x = store.add("x", random_tensor(Shape(1, 4, 4, 6, 6), rng));
        const Tensor w = random_tensor(Shape(1, 8, 4, 3, 3), rng);
        check("bottleneck", store, [&] { return sum(mul(b.forward(x), w)); });
    }
    SUBCASE("SMC") {
        ParamStore store;
        const SelectiveMotionComplement smc(store, "smc", SmcConfig{8, 4, 3}, rng);
        randomize(store, rng);
        Tensor fi = store.add("fi", random_tensor(Shape(2, 8, 2, 3, 3), rng));
        Tensor fp = store.add("fp", random_tensor(Shape(2, 8, 2, 3, 3), rng));
        const Tensor w = random_tensor(Shape(2, 8, 2, 3, 3), rng);
        check("smc", store, [&] { return sum(mul(smc.forward(fi, fp), w)); });
    }
    SUBCASE("CMA and head") {
        ParamStore store;
        const CrossModalityAugment cma(store, "cma", CmaConfig{6, 3}, rng);
        const ClsHead head(store, "h", 3, 4, rng);
        randomize(store, rng);
        Tensor fi = store.add("fi", random_tensor(Shape(2, 6, 2, 2, 3), rng));
        Tensor fp = store.add("fp", random_tensor(Shape(2, 6, 2, 2, 3), rng));
        const std::vector<int> labels{2, 0};
        check("cma", store, [&] { return cross_entropy(head.forward(cma.forward(fi, fp)), labels); });
    }
}

TEST_CASE("full model passes grad_check") {
    ModelConfig c = small_model_config();
    TwoStreamModel model(c);
    Rng rng(17);
    for (auto& [path, e] : model.params())
        if (path.ends_with(".bias"))
            for (double& v : e.tensor.mutable_data()) v = rng.uniform(-0.2, 0.2);
    model.set_rgb_normalization({0.4, 0.5, 0.6}, {0.2, 0.25, 0.3});
    const Tensor rgb = random_tensor(Shape(2, 3, 4, 16, 16), rng, 0, 1);
    const Tensor mvr = random_tensor(Shape(2, 5, 4, 16, 16), rng);
    const std::vector<int> labels{0, 2};
    GradCheckOptions opts;
    opts.max_coords_per_tensor = 4;
    const auto r = grad_check(
        [&] {
            const ModelOutput o = model.forward(rgb, mvr);
            return add(cross_entropy(o.score, labels), cross_entropy(o.z_fused, labels));
        },
        model.params(), opts);
    INFO("worst " << r.worst_path << "[" << r.worst_index << "] analytic " << r.worst_analytic << " numeric "
                  << r.worst_numeric);
    CHECK(r.max_rel_error < 1e-4);
    CHECK(r.coords_checked > 100);
}

TEST_CASE("model configuration and variants") {
    const TwoStreamModel full(ModelConfig{});
    CHECK(full.parameter_count() > 50000);
    CHECK(full.parameter_count() < 500000);
    CHECK(full.params().contains("smc4.channel.weight"));
    CHECK(full.params().contains("cma.value_mvr.weight"));
    CHECK(full.params().get("cma.key_rgb.weight").shape() == Shape(8, 128, 1, 1, 1));
    CHECK(full.params().contains("fused.head.fc.bias"));
    for (const auto& [path, e] : full.params()) CHECK(e.trainable == !path.starts_with("input."));

    ModelConfig wide;
    wide.widths = {256, 512, 1024, 2048};
    CHECK(wide.key_dim() == 128);

    for (const auto& name : variant_names()) {
        const ModelConfig c = apply_variant(ModelConfig{}, name);
        CHECK_NOTHROW(c.validate());
    }
    const ModelConfig b2 = apply_variant(ModelConfig{}, "B2");
    CHECK(b2.interaction == Interaction::none);
    CHECK_FALSE(b2.cma);
    const TwoStreamModel b2_model(b2);
    for (const auto& [path, e] : b2_model.params()) {
        CHECK_FALSE(path.starts_with("smc"));
        CHECK_FALSE(path.starts_with("cma"));
    }
    CHECK(apply_variant(ModelConfig{}, "b2+smc").interaction == Interaction::smc);
    CHECK(apply_variant(ModelConfig{}, "b2+cma").cma);
    CHECK(apply_variant(ModelConfig{}, "b1+msb*").msb_fixed_temporal);
    CHECK(apply_variant(ModelConfig{}, "b1+dm").mvr_block == MvrBlock::bottleneck_dm);
    CHECK_FALSE(apply_variant(ModelConfig{}, "rgb-only").mvr_stream);
    try {
        apply_variant(ModelConfig{}, "b3");
        FAIL("unknown variant accepted");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("b2+cma") != std::string::npos);
    }

    ModelConfig bad;
    bad.widths = {16, 32, 66, 128};
    try {
        bad.validate();
        FAIL("invalid plan accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("stage 3") != std::string::npos);
    }
    bad = ModelConfig{};
    bad.blocks = {1, 1};
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    const ModelConfig back = ModelConfig::from_kv(small_model_config().to_kv());
    CHECK(back.to_kv().str() == small_model_config().to_kv().str());
    KeyValues kv = ModelConfig{}.to_kv();
    kv.set("mystery", 1);
    CHECK_THROWS_AS(ModelConfig::from_kv(kv), ConfigError);
}

TEST_CASE("model forward") {
    TwoStreamModel model(small_model_config());
    Rng rng(18);
    const Tensor rgb = random_tensor(Shape(2, 3, 4, 16, 16), rng, 0, 1);
    const Tensor mvr = random_tensor(Shape(2, 5, 4, 16, 16), rng);
    const ModelOutput o = model.forward(rgb, mvr);
    CHECK(o.heads().size() == 3);
    CHECK(o.score.shape() == Shape(2, 3, 1, 1, 1));
    CHECK(max_abs_diff(o.score.data(), fuse_scores(o.z_rgb, o.z_mvr, o.z_fused).data()) < 1e-15);
    CHECK_THROWS_AS(model.forward(Tensor(), mvr), PreconditionError);
    CHECK_THROWS_AS(model.forward(mvr, mvr), DimensionError);

    // Zero heads give a zero score for zero input.
    for (auto& [path, e] : model.params())
        if (path.find("head") != std::string::npos)
            for (double& v : e.tensor.mutable_data()) v = 0.0;
    const ModelOutput z = model.forward(Tensor(rgb.shape(), 0.0), Tensor(mvr.shape(), 0.0));
    for (double v : z.score.data()) CHECK(v == 0.0);

    const TwoStreamModel single(apply_variant(small_model_config(), "mvr-only"));
    const ModelOutput m = single.forward(Tensor(), mvr);
    CHECK(m.heads().size() == 1);
    CHECK(bit_equal(m.score, m.z_mvr));
}

TEST_CASE("concurrent inference matches serial inference") {
    const TwoStreamModel model(small_model_config());
    Rng rng(19);
    const Tensor rgb = random_tensor(Shape(1, 3, 4, 16, 16), rng, 0, 1);
    const Tensor mvr = random_tensor(Shape(1, 5, 4, 16, 16), rng);
    const Tensor serial = model.forward(rgb, mvr).score;
    std::vector<Tensor> results(4);
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < results.size(); ++i)
        workers.emplace_back([&, i] {
            NoGradGuard guard;
            results[i] = model.forward(rgb, mvr).score;
        });
    for (auto& w : workers) w.join();
    for (const auto& r : results) CHECK(bit_equal(r, serial));
}

TEST_CASE("checkpoint round trip") {
    ModelConfig c = small_model_config();
    c.seed = 5;
    TwoStreamModel model(c);
    model.set_rgb_normalization({0.1, 0.2, 0.3}, {0.5, 0.6, 0.7});
    Rng rng(20);
    const Tensor rgb = random_tensor(Shape(1, 3, 4, 16, 16), rng, 0, 1);
    const Tensor mvr = random_tensor(Shape(1, 5, 4, 16, 16), rng);
    const auto bytes = model.serialize();
    const TwoStreamModel back = TwoStreamModel::deserialize(bytes);
    CHECK(back.config().to_kv().str() == c.to_kv().str());
    CHECK(bit_equal(back.forward(rgb, mvr).score, model.forward(rgb, mvr).score));
    CHECK(back.params().get("input.rgb_std").data()[2] == 0.7);
    CHECK(back.serialize() == bytes);

    const auto path = std::filesystem::temp_directory_path() / "cvr_model_roundtrip.ckpt";
    model.save(path);
    CHECK(read_checkpoint_config(path).seed == 5);
    CHECK(TwoStreamModel::load(path).serialize() == bytes);
    std::filesystem::remove(path);

    auto trailing = bytes;
    trailing.push_back(1);
    CHECK_THROWS_AS(TwoStreamModel::deserialize(trailing), ParseError);
    CHECK_THROWS_AS(TwoStreamModel::deserialize(std::span<const std::uint8_t>(bytes).first(bytes.size() - 3)),
                    ParseError);
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(TwoStreamModel::deserialize(bad), ParseError);

    // Same config, different seed: loading restores the original weights.
    const TwoStreamModel other(small_model_config());
    CHECK_FALSE(bit_equal(other.forward(rgb, mvr).score, model.forward(rgb, mvr).score));
}

}  // TEST_SUITE
