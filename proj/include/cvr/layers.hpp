#pragma once

#include <cstddef>
#include <string>

#include "cvr/ops.hpp"
#include "cvr/param_store.hpp"
#include "cvr/rng.hpp"

namespace cvr::nn {

struct ConvSpec {
    std::size_t in = 1;
    std::size_t out = 1;
    Triple kernel{1, 1, 1};
    Triple stride{1, 1, 1};
    Triple padding{0, 0, 0};
    bool bias = true;

    std::size_t parameter_count() const {
        return out * in * kernel[0] * kernel[1] * kernel[2] + (bias ? out : 0);
    }
};

// Convolution whose weight ("<path>.weight") and bias ("<path>.bias") live in
// a ParamStore. Weights use Kaiming-uniform fan-in init, biases start at 0.
class Conv3d {
public:
    Conv3d() = default;
    Conv3d(ParamStore& store, const std::string& path, const ConvSpec& spec, Rng& rng);

    Tensor operator()(const Tensor& x) const { return conv3d(x, weight_, bias_, spec_.stride, spec_.padding); }

    const ConvSpec& spec() const { return spec_; }
    const Tensor& weight() const { return weight_; }
    const Tensor& bias() const { return bias_; }

private:
    ConvSpec spec_;
    Tensor weight_;
    Tensor bias_;
};

inline ConvSpec pointwise_spec(std::size_t in, std::size_t out, Triple stride = {1, 1, 1}) {
    return ConvSpec{in, out, {1, 1, 1}, stride, {0, 0, 0}, true};
}

inline ConvSpec spatial3x3_spec(std::size_t in, std::size_t out) {
    return ConvSpec{in, out, {1, 3, 3}, {1, 1, 1}, {0, 1, 1}, true};
}

inline ConvSpec temporal_spec(std::size_t in, std::size_t out, std::size_t k) {
    return ConvSpec{in, out, {k, 1, 1}, {1, 1, 1}, {k / 2, 0, 0}, true};
}

}  // namespace cvr::nn
