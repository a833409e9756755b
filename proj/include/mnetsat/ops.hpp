#pragma once

#include <vector>

#include "mnetsat/tape.hpp"
#include "mnetsat/tensor.hpp"

namespace mnetsat::ops {

// Elementwise binary ops. `b` must have the same shape as `a` or be
// broadcastable to it (extent-1 axes or a scalar); gradients to `b` are
// sum-reduced over the broadcast axes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> div(Var<T> a, Var<T> b);

template <typename T> Var<T> add_scalar(Var<T> x, T c);
template <typename T> Var<T> mul_scalar(Var<T> x, T c);

template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> transpose2d(Var<T> x);

template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> slice(Var<T> x, const std::vector<int64_t>& starts,
                                   const std::vector<int64_t>& sizes);
template <typename T> Var<T> concat(const std::vector<Var<T>>& xs, int axis);

enum class Reduce { kSum, kMean, kMax };

template <typename T>
Var<T> reduce(Reduce op, Var<T> x, std::vector<int> axes, bool keepdims);
template <typename T> Var<T> reduce_all(Reduce op, Var<T> x);  // scalar output

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> softmax(Var<T> x, int axis);
template <typename T> Var<T> sqrt(Var<T> x);
template <typename T> Var<T> log(Var<T> x);
template <typename T> Var<T> clamp(Var<T> x, T lo, T hi);

namespace kernels {

// c = op(a) x op(b) for 2-D tensors, plain value-level matmul.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a, bool trans_b);

// Sums `g` down to `target` under the broadcast rules above.
template <typename T>
Tensor<T> reduce_to_shape(const Tensor<T>& g, const Shape& target);

}  // namespace kernels

}  // namespace mnetsat::ops
