#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace tenv {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Dims = std::vector<std::size_t>;

/// Number of elements described by a dimension vector (1 for an empty one).
std::size_t dims_product(std::span<const std::size_t> dims);

/// Dense m-way array of doubles.
///
/// Storage is colexicographic: the first index varies fastest, so entry
/// (i_1, ..., i_m) (zero-based) lives at i_1 + r_1 * (i_2 + r_2 * (...)).
/// An order-2 tensor therefore shares its flat layout with a column-major
/// Matrix of the same shape.
///
/// Every extent is at least 1. The only order-0 tensor is the scalar produced
/// by contracting the last remaining mode (see Tensor::scalar).
class Tensor {
 public:
  Tensor();
  explicit Tensor(Dims dims);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor from_matrix(const Matrix& m);

  const Dims& dims() const { return dims_; }
  std::size_t dim(std::size_t k) const { return dims_.at(k); }
  std::size_t order() const { return dims_.size(); }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  Eigen::Map<const Vector> flat() const {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }
  Eigen::Map<Vector> flat() {
    return {data_.data(), static_cast<Eigen::Index>(data_.size())};
  }

  double& operator[](std::size_t j) { return data_[j]; }
  double operator[](std::size_t j) const { return data_[j]; }

  /// Multi-index access, zero-based.
  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;
  std::size_t linear_index(std::span<const std::size_t> idx) const;

  /// Value of an order-0 tensor.
  double value() const;

  /// Copy of an order-2 tensor as a matrix.
  Matrix to_matrix() const;

  double frobenius_norm() const;
  double squared_norm() const;

  Tensor& operator+=(const Tensor& other);
  Tensor& operator-=(const Tensor& other);
  Tensor& operator*=(double s);

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, double s) { return a *= s; }
  friend Tensor operator*(double s, Tensor a) { return a *= s; }

  /// Bitwise equality of dims and data.
  friend bool operator==(const Tensor& a, const Tensor& b);

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// Stacks entries in storage order.
Vector vec(const Tensor& t);

/// Inverse of vec for the given dimensions.
Tensor fold_vec(std::span<const double> values, const Dims& dims);

/// Mode-k unfolding (zero-based k): rows indexed by mode k, columns by the
/// remaining modes in increasing order, lower modes fastest. Returns a copy.
Matrix matricize(const Tensor& t, std::size_t k);

/// Inverse of matricize. Throws DimensionError if the shape is inconsistent.
Tensor fold(const Matrix& mat, std::size_t k, const Dims& dims);

/// t x_k c: multiplies every mode-k fiber by c (c.cols() == r_k).
Tensor mode_product(const Tensor& t, const Matrix& c, std::size_t k);

/// Contracts mode k with v; the result has order m-1 (a scalar when m == 1).
Tensor mode_vec_product(const Tensor& t, const Vector& v, std::size_t k);

/// [[core; factors[0], ..., factors[m-1]]] = core x_1 F_1 x_2 ... x_m F_m.
Tensor tucker(const Tensor& core, std::span<const Matrix> factors);

/// Kronecker product mats[0] (x) mats[1] (x) ... in the given order.
Matrix kron(std::span<const Matrix> mats);

/// <a, b> = vec(a)^T vec(b).
double inner(const Tensor& a, const Tensor& b);

}  // namespace tenv
