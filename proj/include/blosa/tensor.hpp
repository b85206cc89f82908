#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "blosa/memory.hpp"

namespace blosa {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Raised by graph operations whose operand shapes do not conform.
class ShapeError : public std::invalid_argument {
public:
  ShapeError(std::string op, const std::string& detail)
      : std::invalid_argument(op + ": " + detail), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

private:
  std::string op_;
};

Index shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename Scalar>
constexpr std::string_view dtype_name();
template <>
constexpr std::string_view dtype_name<float>() { return "f32"; }
template <>
constexpr std::string_view dtype_name<double>() { return "f64"; }

// Dense row-major tensor. Rank 0 holds one element. Storage is drawn through
// the counting allocator so live element counts are observable.
template <typename Scalar>
class Tensor {
public:
  using Buffer = std::vector<Scalar, CountingAllocator<Scalar>>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;
  using ArrayMap = Eigen::Map<Eigen::Array<Scalar, Eigen::Dynamic, 1>>;
  using ConstArrayMap = Eigen::Map<const Eigen::Array<Scalar, Eigen::Dynamic, 1>>;

  Tensor() = default;
  explicit Tensor(Shape shape, Scalar fill = Scalar(0))
      : shape_(std::move(shape)), data_(static_cast<std::size_t>(checked_size(shape_)), fill) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values) : Tensor(std::move(shape)) {
    if (static_cast<Index>(values.size()) != size()) {
      throw ShapeError("tensor", "initializer has " + std::to_string(values.size()) +
                                     " values for shape " + shape_string(shape_));
    }
    std::copy(values.begin(), values.end(), data_.begin());
  }

  template <typename Derived>
  static Tensor from_matrix(const Eigen::MatrixBase<Derived>& m) {
    Tensor t({m.rows(), m.cols()});
    t.matrix() = m;
    return t;
  }
  static Tensor vector(std::initializer_list<Scalar> values) {
    return Tensor({static_cast<Index>(values.size())}, values);
  }
  static Tensor scalar(Scalar v) { return Tensor(Shape{}, v); }

  const Shape& shape() const noexcept { return shape_; }
  Index rank() const noexcept { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const noexcept { return static_cast<Index>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  Scalar* data() noexcept { return data_.data(); }
  const Scalar* data() const noexcept { return data_.data(); }
  std::span<Scalar> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const Scalar> values() const noexcept { return {data_.data(), data_.size()}; }

  Scalar& operator[](Index i) { return data_[static_cast<std::size_t>(i)]; }
  Scalar operator[](Index i) const { return data_[static_cast<std::size_t>(i)]; }
  Scalar& operator()(Index i, Index j) { return data_[static_cast<std::size_t>(i * cols() + j)]; }
  Scalar operator()(Index i, Index j) const {
    return data_[static_cast<std::size_t>(i * cols() + j)];
  }
  Scalar& operator()(Index i, Index j, Index k) {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data_[static_cast<std::size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  /// Number of columns of the matrix view: the last axis (1 for rank 0).
  Index cols() const noexcept { return shape_.empty() ? 1 : shape_.back(); }
  /// Number of rows of the matrix view: the product of all leading axes.
  Index rows() const noexcept { return cols() == 0 ? 0 : size() / cols(); }

  MatrixMap matrix() noexcept { return MatrixMap(data(), rows(), cols()); }
  ConstMatrixMap matrix() const noexcept { return ConstMatrixMap(data(), rows(), cols()); }
  ArrayMap array() noexcept { return ArrayMap(data(), size()); }
  ConstArrayMap array() const noexcept { return ConstArrayMap(data(), size()); }

  void fill(Scalar v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same buffer, new shape of equal size.
  Tensor reshaped(Shape shape) const {
    if (checked_size(shape) != size()) {
      throw ShapeError("reshape", "cannot view " + shape_string(shape_) + " as " +
                                      shape_string(shape));
    }
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> t(shape_);
    for (Index i = 0; i < size(); ++i) t[i] = static_cast<Other>((*this)[i]);
    return t;
  }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw ShapeError("tensor", "negative axis length in " + shape_string(shape));
    }
    return shape_size(shape);
  }

  Shape shape_;
  Buffer data_;
};

inline Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace blosa
