#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsmcl {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Dense row-major matrix of 64-bit reals; the only math backend used here.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ")";
  return os.str();
}

/// N-dimensional array of doubles: a shape plus flat row-major storage.
/// Rank 1 and 2 cover everything the model needs; higher ranks are legal
/// values but only elementwise primitives accept them. The matrix view
/// `mat()` folds all leading axes into rows and keeps the last axis as
/// columns, so "per-row" operations mean "over the last axis".
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, Eigen::VectorXd values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (numel(shape_) != data_.size())
      throw std::invalid_argument("Tensor: shape " + shape_to_string(shape_) +
                                  " does not match " +
                                  std::to_string(data_.size()) + " values");
    check_dims(shape_);
  }

  static Tensor zeros(Shape shape) {
    check_dims(shape);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(numel(shape));
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor constant(Shape shape, double value) {
    check_dims(shape);
    Eigen::VectorXd v = Eigen::VectorXd::Constant(numel(shape), value);
    return Tensor(std::move(shape), std::move(v));
  }

  static Tensor scalar(double value) { return constant({1}, value); }

  static Tensor from_matrix(const Matrix& m) {
    Eigen::VectorXd v(m.size());
    Eigen::Map<Matrix>(v.data(), m.rows(), m.cols()) = m;
    return Tensor({m.rows(), m.cols()}, std::move(v));
  }

  static Tensor row(std::initializer_list<double> values) {
    Eigen::VectorXd v(static_cast<Index>(values.size()));
    Index i = 0;
    for (double x : values) v[i++] = x;
    return Tensor({1, static_cast<Index>(values.size())}, std::move(v));
  }

  static Tensor vector(std::initializer_list<double> values) {
    Eigen::VectorXd v(static_cast<Index>(values.size()));
    Index i = 0;
    for (double x : values) v[i++] = x;
    return Tensor({static_cast<Index>(values.size())}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  bool defined() const { return !shape_.empty(); }
  bool is_scalar() const { return data_.size() == 1; }

  /// Columns of the matrix view: the last axis.
  Index cols() const { return shape_.empty() ? 0 : shape_.back(); }
  /// Rows of the matrix view: all leading axes folded together.
  Index rows() const { return shape_.empty() ? 0 : size() / cols(); }

  double value() const {
    if (!is_scalar())
      throw std::invalid_argument("Tensor: value() on non-scalar " +
                                  shape_to_string(shape_));
    return data_[0];
  }

  double operator[](Index i) const { return data_[i]; }
  double& operator[](Index i) { return data_[i]; }

  Eigen::Map<const Matrix> mat() const {
    return Eigen::Map<const Matrix>(data_.data(), rows(), cols());
  }
  Eigen::Map<Matrix> mat() {
    return Eigen::Map<Matrix>(data_.data(), rows(), cols());
  }

  const Eigen::VectorXd& flat() const { return data_; }
  Eigen::VectorXd& flat() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const { return data_.allFinite(); }

  bool all_zero() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (data_[i] != 0.0) return false;
    return true;
  }

  std::string shape_str() const { return shape_to_string(shape_); }

 private:
  static Index numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), Index{1},
                           std::multiplies<Index>());
  }
  static void check_dims(const Shape& s) {
    for (Index d : s)
      if (d <= 0)
        throw std::invalid_argument("Tensor: non-positive dimension in " +
                                    shape_to_string(s));
  }

  Shape shape_;
  Eigen::VectorXd data_;
};

}  // namespace dsmcl
