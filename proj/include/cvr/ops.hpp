#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "cvr/tensor.hpp"

namespace cvr {

using Triple = std::array<std::size_t, 3>;  // (T, H, W)

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

// 3D cross-correlation. weight is (Cout, Cin, kT, kH, kW); bias, when
// defined, holds Cout values in any shape.
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias = {},
              Triple stride = {1, 1, 1}, Triple padding = {0, 0, 0});

// ---------------------------------------------------------------------------
// Pooling and resizing
// ---------------------------------------------------------------------------

enum class PoolMode {
    max3d_same,           // kernel 3, stride 1, padding 1 over (T, H, W)
    max_global,           // max over (T, H, W)
    avg_temporal_global,  // mean over T
    avg_spatial,          // r x r windows, stride r, ceil mode
    avg_global,           // mean over (T, H, W)
};

PoolMode parse_pool_mode(std::string_view name);

Tensor pool(const Tensor& input, PoolMode mode, std::size_t r = 1);

// Duplicates the single temporal slice of a T=1 tensor.
Tensor repeat_temporal(const Tensor& input, std::size_t t);

// Half-pixel-center bilinear resampling of the (H, W) planes.
Tensor resize_bilinear(const Tensor& input, std::size_t h, std::size_t w);

// ---------------------------------------------------------------------------
// Pointwise
// ---------------------------------------------------------------------------

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// Broadcasting binary ops: per axis, extents must match or one must be 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, double factor);

// ---------------------------------------------------------------------------
// Matrix views. The last two axes (H, W) are rows and columns; (N, C, T)
// index the batch.
// ---------------------------------------------------------------------------

Tensor softmax_last(const Tensor& x);
Tensor matmul_batched(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
std::vector<Tensor> split_channels(const Tensor& x, std::size_t k);
Tensor concat_channels(std::span<const Tensor> parts);

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean cross-entropy of logits (N, K, 1, 1, 1) against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace cvr
