#include "sphereat/diffcore/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace sphereat::diff {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

static void check_extents(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw ContractViolation("tensor extents must be positive, got " + shape_str(shape));
  }
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ContractViolation("tensor data length " + std::to_string(data_.size()) +
                            " does not match shape " + shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

double& Tensor::at(std::size_t r, std::size_t c) {
  if (rank() != 2) throw ContractViolation("at(r,c) requires a rank-2 tensor, got " + shape_str(shape_));
  return data_[r * shape_[1] + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (rank() != 2) throw ContractViolation("at(r,c) requires a rank-2 tensor, got " + shape_str(shape_));
  return data_[r * shape_[1] + c];
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

std::size_t Tensor::row_size() const { return shape_.empty() ? 0 : data_.size() / shape_[0]; }

std::span<double> Tensor::row(std::size_t r) {
  const auto n = row_size();
  return std::span<double>(data_).subspan(r * n, n);
}

std::span<const double> Tensor::row(std::size_t r) const {
  const auto n = row_size();
  return std::span<const double>(data_).subspan(r * n, n);
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ContractViolation("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::span<double> Tensor::grad() {
  if (!grad_) throw ContractViolation("tensor has no gradient slot");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw ContractViolation("tensor has no gradient slot");
  return *grad_;
}

void Tensor::set_grad(std::vector<double> g) {
  if (g.size() != data_.size()) throw ContractViolation("gradient length does not match tensor");
  grad_ = std::move(g);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ContractViolation("max_abs_diff shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() == 0 || begin >= end || end > t.dim(0)) {
    throw ContractViolation("slice_rows [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " +
                            shape_str(t.shape()));
  }
  Shape s = t.shape();
  s[0] = end - begin;
  const auto n = t.row_size();
  return Tensor(std::move(s), std::vector<double>(t.storage().begin() + static_cast<std::ptrdiff_t>(begin * n),
                                                  t.storage().begin() + static_cast<std::ptrdiff_t>(end * n)));
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows) {
  if (t.rank() == 0 || rows.empty()) throw ContractViolation("gather_rows needs a non-empty row list");
  Shape s = t.shape();
  s[0] = rows.size();
  const auto n = t.row_size();
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (auto r : rows) {
    if (r >= t.dim(0)) throw ContractViolation("gather_rows index " + std::to_string(r) + " out of range");
    auto src = t.row(r);
    out.insert(out.end(), src.begin(), src.end());
  }
  return Tensor(std::move(s), std::move(out));
}

}  // namespace sphereat::diff
