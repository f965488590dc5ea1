#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "rifle/rng.hpp"

namespace rifle {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t element_count(const Shape& shape);

/// Dense row-major array of doubles.
///
/// A default-constructed Tensor is an empty placeholder (rank 0, no data);
/// every other tensor has a nonempty shape of positive extents and exactly
/// element_count(shape) elements.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// Rank-2 tensor from nested rows, e.g. matrix({{1, 2}, {3, 4}}).
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::size_t row, std::size_t col) { return data_[row * shape_[1] + col]; }
  double at(std::size_t row, std::size_t col) const { return data_[row * shape_[1] + col]; }

  /// Same data under a new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  void fill(double value);
  bool all_finite() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double scale);

  /// this += scale * other
  Tensor& add_scaled(const Tensor& other, double scale);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

Tensor operator+(Tensor a, const Tensor& b);
Tensor operator-(Tensor a, const Tensor& b);
Tensor operator*(Tensor a, double scale);
Tensor operator*(double scale, Tensor a);

/// Standard matrix product of [m x k] and [k x n]. Throws ShapeError naming
/// both shapes on mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Matrix transpose of a rank-2 tensor.
Tensor transpose(const Tensor& a);

/// sqrt of the sum of squared elements.
double frobenius_norm(const Tensor& t);

/// Sum of squared elements.
double squared_norm(const Tensor& t);

/// Elementwise i.i.d. Gaussian(mean, std^2) draws in row-major order.
Tensor gaussian_init(const Shape& shape, double mean, double std, Rng& rng);

/// Bitwise comparison of element storage (distinguishes -0.0 from 0.0).
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace rifle
