#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>

#include "cvr/param_store.hpp"
#include "cvr/tensor.hpp"

namespace cvr {

struct GradCheckOptions {
    double eps = 1e-5;
    // Coordinates sampled per tensor; tensors at or below this size are checked fully.
    std::size_t max_coords_per_tensor = 24;
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_path;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

// Compares reverse-mode gradients of a scalar graph against central
// differences over the trainable entries of `params`. The graph must be
// deterministic; it is evaluated twice up front to confirm that.
GradCheckResult grad_check(const std::function<Tensor()>& graph, ParamStore& params,
                           const GradCheckOptions& options = {});

}  // namespace cvr
