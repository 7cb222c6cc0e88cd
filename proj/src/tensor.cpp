#include "livi/tensor.hpp"

#include "livi/errors.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace livi {

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {
  for (auto d : dims_)
    if (d == 0) throw DimensionError("Shape: dimensions must be positive");
}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  for (auto d : dims_)
    if (d == 0) throw DimensionError("Shape: dimensions must be positive");
}

std::size_t Shape::numel() const {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::size_t Shape::rows() const {
  if (dims_.empty()) return 1;
  if (dims_.size() > 2) throw DimensionError("Shape: matrix view requires rank <= 2, got " + str());
  return dims_[0];
}

std::size_t Shape::cols() const {
  if (dims_.size() <= 1) return 1;
  if (dims_.size() > 2) throw DimensionError("Shape: matrix view requires rank <= 2, got " + str());
  return dims_[1];
}

std::string Shape::str() const {
  std::string s = "[";
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims_[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw DimensionError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_.str());
}

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

Tensor Tensor::from(const Matrix& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.mat() = m;
  return t;
}

Tensor Tensor::from(const Vector& v) {
  return Tensor::vector(std::vector<double>(v.data(), v.data() + v.size()));
}

double Tensor::item() const {
  if (data_.size() != 1) throw DimensionError("Tensor::item on shape " + shape_.str());
  return data_[0];
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::reshaped(Shape s) const {
  if (s.numel() != data_.size())
    throw DimensionError("reshape: " + shape_.str() + " -> " + s.str());
  return Tensor(std::move(s), data_);
}

}  // namespace livi
