#pragma once

#include <span>
#include <vector>

#include "msct/autograd.hpp"
#include "msct/tensor.hpp"

namespace msct {

// Elementwise, with NumPy-style right-aligned broadcasting where it makes
// sense. Every op records itself on the active tape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor gelu(const Tensor& a);

// Structure.
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, const std::vector<int>& axes);
Tensor transpose_last2(const Tensor& a);
Tensor expand(const Tensor& a, const Shape& target);
Tensor narrow(const Tensor& a, int axis, std::int64_t start, std::int64_t length);
Tensor concat(std::span<const Tensor> parts, int axis);
std::vector<Tensor> split(const Tensor& a, int axis, std::span<const std::int64_t> sizes);

// Reductions.
Tensor sum_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis, bool keepdims = false);
Tensor mean_axis(const Tensor& a, int axis, bool keepdims = false);

/// Batched matrix product over the trailing two axes; leading axes
/// broadcast. Gradients reduce over broadcast dimensions.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Rows of the last axis are replaced by softmax(scale * row), computed
/// with max subtraction. scale must be positive.
Tensor softmax_rows(const Tensor& a, double scale_factor);

/// Normalization over the last axis with learnable gain and shift.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

/// Per-channel 2D correlation over the trailing (T, D) plane of a
/// [B, G, T, D] tensor with one odd-sized square kernel per channel
/// ([G, k, k]), zero same-padding so shapes are preserved.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& kernels);

/// x[..., K] * w[K, N] + b[N].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// Broadcast helpers shared with fused ops.
Shape broadcast_shapes(const Shape& a, const Shape& b);
/// Sum-reduce `g` down to `target` (inverse of broadcasting).
Tensor reduce_to_shape(const Tensor& g, const Shape& target);

}  // namespace msct
