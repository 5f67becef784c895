#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "twm/numerics/tensor.hpp"

// Differentiable tensor primitives. Every function records itself on the
// tape when an input requires a gradient. Shapes must match exactly unless
// a function documents its broadcasting rule.

namespace twm {

// Element-wise.
template <typename T> Tensor<T> neg(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> log(const Tensor<T>& x);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
template <typename T> Tensor<T> silu(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
/// ln(1 + e^x), stable for large |x|.
template <typename T> Tensor<T> softplus(const Tensor<T>& x);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
/// x + row, where row has shape [x.shape.back()] and is broadcast over the leading dims.
template <typename T> Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
/// Sums the last axis away.
template <typename T> Tensor<T> sum_last(const Tensor<T>& x);

// Linear algebra.
/// [m,k] x [k,n] -> [m,n]
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x[..., in] W[in, out] + b[out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);
/// Batched [B,m,k] x [B,k,n] -> [B,m,n]; with transpose_b the second operand is [B,n,k].
template <typename T> Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false);

// Shape manipulation (copies).
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& axes);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t length);
/// Picks entries along `axis` (duplicates allowed; gradients accumulate).
template <typename T> Tensor<T> index_select(const Tensor<T>& x, int axis, std::span<const std::int64_t> index);

// Neural-network primitives.
/// Normalizes the last axis, then applies gain and bias (either may be undefined).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
template <typename T> Tensor<T> softmax_last(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax_last(const Tensor<T>& x);
/// Softmax over the last axis of x[..., Tq, Tk] restricted to entries where
/// visible[q*Tk + k] is true. Hidden entries get probability exactly 0.
template <typename T> Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> visible);
/// out[..., q, k] = x[..., q, index[q*Tk + k]] for x[..., Tq, R]; index -1 yields 0.
template <typename T>
Tensor<T> rel_gather(const Tensor<T>& x, std::span<const std::int64_t> index, std::int64_t keys);
/// out[...] = x[..., index[...]] for x[..., C].
template <typename T> Tensor<T> gather_last(const Tensor<T>& x, std::span<const std::int64_t> index);
/// Forward value is the given one-hot sample, the gradient flows to probs unchanged.
template <typename T> Tensor<T> straight_through(const Tensor<T>& sample, const Tensor<T>& probs);

/// x[B,Ci,H,W] conv w[Co,Ci,k,k] (+ b[Co]) with square stride/padding.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int padding);
/// Adjoint of conv2d: x[B,Ci,H,W], w[Ci,Co,k,k]; output side (H-1)*stride - 2*padding + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride,
                           int padding);

}  // namespace twm
