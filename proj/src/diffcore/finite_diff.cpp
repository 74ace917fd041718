#include "sphereat/diffcore/finite_diff.hpp"

#include <cmath>

namespace sphereat::diff {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractViolation("finite_diff_grad: step must be positive");
  Tensor probe = x;
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    probe[i] = xi + h;
    const double up = f(probe);
    probe[i] = xi - h;
    const double down = f(probe);
    probe[i] = xi;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_grad: objective returned a non-finite value at coordinate " + std::to_string(i));
    }
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw ContractViolation("relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

}  // namespace sphereat::diff
