#include "rifle/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>

#include "rifle/errors.hpp"
#include "rifle/kernels.hpp"

namespace rifle {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t element_count(const Shape& shape) {
  if (shape.empty()) return 0;
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw InvalidArgument("tensor shape must be nonempty");
  for (auto d : shape) {
    if (d == 0) throw InvalidArgument("tensor shape " + to_string(shape) + " has a zero extent");
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()) + " differ");
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(element_count(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (data_.size() != element_count(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + to_string(shape_));
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw ShapeError("ragged rows in Tensor::matrix");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (element_count(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return Tensor(std::move(shape), std::move(data_));
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  require_same_shape(*this, other, "operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  require_same_shape(*this, other, "operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Tensor& Tensor::operator*=(double scale) {
  for (double& v : data_) v *= scale;
  return *this;
}

Tensor& Tensor::add_scaled(const Tensor& other, double scale) {
  require_same_shape(*this, other, "add_scaled");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * other.data_[i];
  return *this;
}

Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
Tensor operator*(Tensor a, double scale) { return a *= scale; }
Tensor operator*(double scale, Tensor a) { return a *= scale; }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  Tensor c({a.dim(0), b.dim(1)});
  kernels::parallel::gemm_nn(a.dim(0), a.dim(1), b.dim(1), a.data(), b.data(), c.data(), false);
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  Tensor t({a.dim(1), a.dim(0)});
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

double squared_norm(const Tensor& t) {
  double sum = 0.0;
  for (double v : t.data()) sum += v * v;
  return sum;
}

double frobenius_norm(const Tensor& t) { return std::sqrt(squared_norm(t)); }

Tensor gaussian_init(const Shape& shape, double mean, double std, Rng& rng) {
  if (!(std >= 0.0)) throw InvalidArgument("gaussian_init: std must be >= 0");
  Tensor t(shape);
  for (double& v : t.data()) v = rng.normal(mean, std);
  return t;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return a.size() == 0 ||
         std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace rifle
