#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sphereat/errors.hpp"

namespace sphereat::diff {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Dense row-major float64 array with an optional gradient slot.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  /// 2-D element access; requires rank 2.
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  /// Value of a single-element tensor.
  double item() const;

  /// Row `r` of the tensor viewed as (dim(0), size/dim(0)).
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;
  std::size_t row_size() const;

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  bool has_grad() const { return grad_.has_value(); }
  std::span<double> grad();
  std::span<const double> grad() const;
  void set_grad(std::vector<double> g);
  void clear_grad() { grad_.reset(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
  std::optional<std::vector<double>> grad_;
};

/// Largest |a_i - b_i|; shapes must agree.
double max_abs_diff(const Tensor& a, const Tensor& b);
double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// Rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end);
/// Rows in the given order along axis 0.
Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& rows);

}  // namespace sphereat::diff
