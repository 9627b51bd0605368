#include "cvr/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "cvr/errors.hpp"
#include "cvr/rng.hpp"

namespace cvr {

namespace {

double evaluate(const std::function<Tensor()>& graph) {
    NoGradGuard guard;
    const Tensor out = graph();
    return out.item();
}

std::vector<std::size_t> sample_coordinates(std::size_t numel, std::size_t budget, Rng& rng) {
    std::vector<std::size_t> idx(numel);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (numel <= budget) return idx;
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < budget; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(numel - i));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(budget);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& graph, ParamStore& params,
                           const GradCheckOptions& options) {
    if (!(options.eps > 0.0)) throw PreconditionError("grad_check: eps must be > 0");

    const double first = evaluate(graph);
    const double second = evaluate(graph);
    if (first != second && !(std::isnan(first) && std::isnan(second))) {
        throw StateError("grad_check aborted: graph is not deterministic (" + std::to_string(first) +
                         " vs " + std::to_string(second) + ")");
    }

    params.zero_grad();
    graph().backward();

    GradCheckResult result;
    Rng rng(options.seed);
    for (auto& [path, entry] : params) {
        if (!entry.trainable) continue;
        Tensor& tensor = entry.tensor;
        const std::vector<double> analytic(tensor.grad().begin(), tensor.grad().end());
        const auto coords = sample_coordinates(tensor.numel(), options.max_coords_per_tensor, rng);
        for (std::size_t i : coords) {
            auto values = tensor.mutable_data();
            const double saved = values[i];
            values[i] = saved + options.eps;
            const double plus = evaluate(graph);
            values[i] = saved - options.eps;
            const double minus = evaluate(graph);
            values[i] = saved;

            const double numeric = (plus - minus) / (2.0 * options.eps);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            const double rel = std::abs(analytic[i] - numeric) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error || std::isnan(rel)) {
                result.max_rel_error = std::isnan(rel) ? INFINITY : rel;
                result.worst_path = path;
                result.worst_index = i;
                result.worst_analytic = analytic[i];
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

}  // namespace cvr
