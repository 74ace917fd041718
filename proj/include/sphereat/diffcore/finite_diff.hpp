#pragma once

#include <functional>

#include "sphereat/diffcore/tensor.hpp"

namespace sphereat::diff {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate of x.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h);

/// ||a - b|| / max(||a||, ||b||), and 0 when both vanish.
double relative_error(const Tensor& a, const Tensor& b);

}  // namespace sphereat::diff
