#include <cmath>

#include "cvr/errors.hpp"
#include "cvr/layers.hpp"

namespace cvr::nn {

Conv3d::Conv3d(ParamStore& store, const std::string& path, const ConvSpec& spec, Rng& rng) : spec_(spec) {
    if (spec.in == 0 || spec.out == 0) throw ConfigError(path + ": convolution with zero channels");
    for (std::size_t a = 0; a < 3; ++a) {
        if (spec.kernel[a] == 0 || spec.stride[a] == 0) throw ConfigError(path + ": zero kernel or stride");
    }
    const std::size_t fan_in = spec.in * spec.kernel[0] * spec.kernel[1] * spec.kernel[2];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(spec.out * fan_in);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    weight_ = store.add(path + ".weight",
                        Tensor(Shape{spec.out, spec.in, spec.kernel[0], spec.kernel[1], spec.kernel[2]}, std::move(w)));
    if (spec.bias) bias_ = store.add(path + ".bias", Tensor(Shape{1, spec.out, 1, 1, 1}, 0.0));
}

}  // namespace cvr::nn
