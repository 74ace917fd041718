#pragma once

#include <cstddef>
#include <vector>

#include "sphereat/diffcore/tape.hpp"

namespace sphereat::diff {

/// Lower/upper clamp applied to arccos inputs.
inline constexpr double kArccosClamp = 1e-7;

// Binary elementwise ops accept `b` with the same shape as `a`, a single
// element, or (for rank-2 `a` of shape (r,c)) shape (1,c), (c) or (r,1).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var divide(Var a, Var b);

/// (m,k) x (k,n) -> (m,n); (m,k) x (k) -> (m).
Var matmul(Var a, Var b);

Var relu(Var a);
Var negate(Var a);
Var scale(Var a, double c);
Var log(Var a);
Var exp(Var a);
/// arccos after clamping to [-1+1e-7, 1-1e-7]; the derivative is taken at the clamped point.
Var arccos(Var a);

/// Scalar reductions, result shape (1).
Var sum(Var a);
Var mean(Var a);

/// Rank-2 reductions keep the reduced axis with extent 1. Rank-1 inputs reduce to shape (1).
Var sum_axis(Var a, std::size_t axis);
Var l2norm_axis(Var a, std::size_t axis);
/// Ties resolve to the lowest index.
Var max_axis(Var a, std::size_t axis);

Var concat(const std::vector<Var>& parts, std::size_t axis);

/// Row-wise log-softmax via max-shifted log-sum-exp (rank 1 or 2).
Var log_softmax(Var logits);

Var reshape(Var a, Shape shape);

/// Valid (unpadded) stride-1 convolution. x: (N,C,H,W), w: (O,C,k,k), b: (O).
Var conv2d(Var x, Var w, Var b);
/// Non-overlapping max pooling with window `k` (floor on ragged edges).
Var maxpool2d(Var x, std::size_t k);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return divide(a, b); }
inline Var operator-(Var a) { return negate(a); }
inline Var operator*(Var a, double c) { return scale(a, c); }
inline Var operator*(double c, Var a) { return scale(a, c); }

/// Stable log-softmax on a plain tensor (rank 1 or 2).
Tensor stable_log_softmax(const Tensor& logits);

}  // namespace sphereat::diff
