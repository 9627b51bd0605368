#include "cvr/grad_suite.hpp"

#include <algorithm>
#include <chrono>

#include "cvr/blocks.hpp"
#include "cvr/model.hpp"
#include "cvr/ops.hpp"

namespace cvr::nn {

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(shape.numel());
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor(shape, std::move(v));
}

void randomize(ParamStore& store, Rng& rng) {
    for (auto& [path, e] : store)
        for (double& v : e.tensor.mutable_data()) v = rng.uniform(-0.5, 0.5);
}

}  // namespace

std::vector<BlockGradReport> run_gradient_suite(const GradCheckOptions& options) {
    std::vector<BlockGradReport> out;
    Rng rng(options.seed * 7919 + 16);
    auto check = [&](const char* name, ParamStore& store, const std::function<Tensor()>& f) {
        const auto t0 = std::chrono::steady_clock::now();
        BlockGradReport r;
        r.block = name;
        r.result = grad_check(f, store, options);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    };

    {
        // r = 4 on a 9x7 map exercises ceil-mode pooling and upsampling.
        ParamStore store;
        const DenoisingModule dm(store, "dm", DmConfig{3, 3}, rng);
        randomize(store, rng);
        Tensor x = store.add("x", random_tensor(Shape(2, 3, 3, 9, 7), rng));
        const Tensor w = random_tensor(Shape(2, 3, 3, 9, 7), rng);
        check("dm", store, [&] { return sum(mul(dm.forward(x), w)); });
    }
    {
        ParamStore store;
        const MultiScaleBlock msb(store, "msb", MsbConfig{4, 8, 6, {2, 2, 2}}, rng);
        randomize(store, rng);
        Tensor x = store.add("x", random_tensor(Shape(1, 4, 6, 6, 6), rng));
        const Tensor w = random_tensor(Shape(1, 6, 3, 3, 3), rng);
        check("msb", store, [&] { return sum(mul(msb.forward(x), w)); });
    }
    {
        ParamStore store;
        const BottleneckBlock b(store, "bottleneck", BottleneckConfig{4, 4, 8, {1, 2, 2}, true}, rng);
        randomize(store, rng);
        Tensor x = store.add("x", random_tensor(Shape(1, 4, 4, 6, 6), rng));
        const Tensor w = random_tensor(Shape(1, 8, 4, 3, 3), rng);
        check("bottleneck", store, [&] { return sum(mul(b.forward(x), w)); });
    }
    {
        ParamStore store;
        const SelectiveMotionComplement smc(store, "smc", SmcConfig{8, 4, 3}, rng);
        randomize(store, rng);
        Tensor fi = store.add("fi", random_tensor(Shape(2, 8, 2, 3, 3), rng));
        Tensor fp = store.add("fp", random_tensor(Shape(2, 8, 2, 3, 3), rng));
        const Tensor w = random_tensor(Shape(2, 8, 2, 3, 3), rng);
        check("smc", store, [&] { return sum(mul(smc.forward(fi, fp), w)); });
    }
    {
        ParamStore store;
        const CrossModalityAugment cma(store, "cma", CmaConfig{6, 3}, rng);
        randomize(store, rng);
        Tensor fi = store.add("fi", random_tensor(Shape(2, 6, 2, 2, 3), rng));
        Tensor fp = store.add("fp", random_tensor(Shape(2, 6, 2, 2, 3), rng));
        const Tensor w = random_tensor(Shape(2, 3, 2, 2, 3), rng);
        check("cma", store, [&] { return sum(mul(cma.forward(fi, fp), w)); });
    }
    {
        ParamStore store;
        const ClsHead head(store, "head", 6, 4, rng);
        randomize(store, rng);
        Tensor x = store.add("x", random_tensor(Shape(3, 6, 2, 2, 2), rng));
        const std::vector<int> labels{3, 0, 1};
        check("head", store, [&] { return cross_entropy(head.forward(x), labels); });
    }
    {
        ModelConfig c;
        c.num_classes = 3;
        c.stem_width = 4;
        c.widths = {8, 16};
        c.blocks = {1, 1};
        c.temporal_strides = {1, 2};
        c.spatial_strides = {1, 2};
        c.smc_ratio = 4;
        c.cma_key_dim = 2;
        c.seed = options.seed;
        TwoStreamModel model(c);
        // Nonzero biases keep every ReLU path active without drowning the
        // smallest gradients in round-off.
        for (auto& [path, e] : model.params())
            if (path.ends_with(".bias"))
                for (double& v : e.tensor.mutable_data()) v = rng.uniform(-0.2, 0.2);
        model.set_rgb_normalization({0.4, 0.5, 0.6}, {0.2, 0.25, 0.3});
        const Tensor rgb = random_tensor(Shape(2, 3, 4, 16, 16), rng, 0.0, 1.0);
        const Tensor mvr = random_tensor(Shape(2, 5, 4, 16, 16), rng);
        const std::vector<int> labels{0, 2};
        GradCheckOptions model_opts = options;
        model_opts.max_coords_per_tensor = std::min<std::size_t>(options.max_coords_per_tensor, 4);
        const auto t0 = std::chrono::steady_clock::now();
        BlockGradReport r;
        r.block = "model";
        r.result = grad_check(
            [&] {
                const ModelOutput o = model.forward(rgb, mvr);
                return add(cross_entropy(o.score, labels), cross_entropy(o.z_fused, labels));
            },
            model.params(), model_opts);
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace cvr::nn
