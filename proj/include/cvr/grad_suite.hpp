#pragma once

#include <string>
#include <vector>

#include "cvr/grad_check.hpp"

namespace cvr::nn {

struct BlockGradReport {
    std::string block;
    GradCheckResult result;
    double seconds = 0.0;
};

// Gradient checks of each block at reduced widths with random weights, then
// the full two-stream model at a small stage plan: dm, msb, bottleneck, smc,
// cma, head, model.
std::vector<BlockGradReport> run_gradient_suite(const GradCheckOptions& options);

}  // namespace cvr::nn
