#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace livi {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;
using VectorMap = Eigen::Map<Vector>;
using ConstVectorMap = Eigen::Map<const Vector>;

/// Dimensions of a dense tensor. Rank 0 is a scalar.
class Shape {
public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;

  /// Rows/cols when viewed as a matrix: scalars are 1x1, vectors are n x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  bool operator==(const Shape&) const = default;
  std::string str() const;

private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major float64 storage with a shape.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);
  static Tensor from(const Matrix& m);
  static Tensor from(const Vector& v);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const;

  MatrixMap mat() { return {data_.data(), static_cast<Eigen::Index>(shape_.rows()),
                            static_cast<Eigen::Index>(shape_.cols())}; }
  ConstMatrixMap mat() const { return {data_.data(), static_cast<Eigen::Index>(shape_.rows()),
                                       static_cast<Eigen::Index>(shape_.cols())}; }
  VectorMap vec() { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }
  ConstVectorMap vec() const { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

  void fill(double v);
  Tensor reshaped(Shape s) const;

private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace livi
