#pragma once

// Differentiable primitives. Unless stated otherwise an op treats its input
// as a stack of rows over the last axis.

#include <vector>

#include "luvit/tensor.hpp"

namespace luvit {

// Linear algebra -------------------------------------------------------------

/// [M x K] * [K x N].
template <typename S> Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);

/// Batched product over the leading axis: op(a)[G x M x K] * op(b)[G x K x N].
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b, bool transpose_a = false, bool transpose_b = false);

/// y = x W^T (+ bias). x is [... x in], W is [out x in], bias is [out] or undefined.
template <typename S> Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias = {});

// Elementwise ----------------------------------------------------------------

template <typename S> Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);
template <typename S> Tensor<S> scale(const Tensor<S>& x, double factor);
/// x + y where y's shape equals the trailing axes of x's shape.
template <typename S> Tensor<S> add_broadcast(const Tensor<S>& x, const Tensor<S>& y);
/// Exact (erf) GELU.
template <typename S> Tensor<S> gelu(const Tensor<S>& x);
template <typename S> Tensor<S> silu(const Tensor<S>& x);

// Layout ---------------------------------------------------------------------

template <typename S> Tensor<S> reshape(const Tensor<S>& x, const Shape& shape);
/// Generic axis permutation: out.shape[i] = x.shape[axes[i]].
template <typename S> Tensor<S> permute(const Tensor<S>& x, const std::vector<int>& axes);
/// Swaps the two axes of a 2D tensor.
template <typename S> Tensor<S> transpose(const Tensor<S>& x);
/// Selects rows (over the last axis) by index; indices may repeat.
template <typename S> Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<Index>& rows);
/// Stacks the rows of a on top of the rows of b; both must share the last extent.
template <typename S> Tensor<S> concat_rows(const Tensor<S>& a, const Tensor<S>& b);

// Reductions (64-bit accumulation) -------------------------------------------

template <typename S> Tensor<S> sum(const Tensor<S>& x);
template <typename S> Tensor<S> mean(const Tensor<S>& x);
/// Mean over one axis; that axis is removed from the result shape.
template <typename S> Tensor<S> mean(const Tensor<S>& x, int axis);

// Normalisation and probabilities --------------------------------------------

/// Softmax over the last axis with per-row max subtraction.
template <typename S> Tensor<S> softmax_rows(const Tensor<S>& x);
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps = 1e-6);
template <typename S> Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gain, double eps = 1e-6);

/// Mean over rows of -sum_c q_c log softmax(logits)_c with q = (1 - s) onehot + s / C.
template <typename S>
Tensor<S> cross_entropy_with_label_smoothing(const Tensor<S>& logits, const std::vector<int>& labels,
                                             double smoothing);

/// Rotary position embedding over [G x T x D] (D even), pairs (2i, 2i+1).
template <typename S> Tensor<S> rope(const Tensor<S>& x, double base = 10000.0);

}  // namespace luvit
