#include "tenv/tensor.hpp"

#include "tenv/error.hpp"

#include <numeric>
#include <sstream>
#include <string>

namespace tenv {

namespace {

std::string dims_str(const Dims& dims) {
  std::ostringstream os;
  os << '(';
  for (std::size_t k = 0; k < dims.size(); ++k) os << (k ? "," : "") << dims[k];
  os << ')';
  return os.str();
}

void check_dims(const Dims& dims) {
  if (dims.empty()) throw DimensionError("tensor order must be at least 1");
  for (auto r : dims)
    if (r == 0) throw DimensionError("tensor extent must be positive: " + dims_str(dims));
}

// Sizes of the modes below k and above k.
std::pair<std::size_t, std::size_t> split_at(const Dims& dims, std::size_t k) {
  std::size_t left = 1, right = 1;
  for (std::size_t j = 0; j < k; ++j) left *= dims[j];
  for (std::size_t j = k + 1; j < dims.size(); ++j) right *= dims[j];
  return {left, right};
}

void check_mode(const Tensor& t, std::size_t k) {
  if (k >= t.order())
    throw DimensionError("mode " + std::to_string(k) + " out of range for order " +
                         std::to_string(t.order()));
}

}  // namespace

std::size_t dims_product(std::span<const std::size_t> dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor() : dims_{}, data_(1, 0.0) {}

Tensor::Tensor(Dims dims) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(dims_product(dims_), 0.0);
}

Tensor::Tensor(Dims dims, std::vector<double> data)
    : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (data_.size() != dims_product(dims_))
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match dims " + dims_str(dims_));
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.data_[0] = value;
  return t;
}

Tensor Tensor::from_matrix(const Matrix& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  Eigen::Map<Matrix>(t.data_.data(), m.rows(), m.cols()) = m;
  return t;
}

std::size_t Tensor::linear_index(std::span<const std::size_t> idx) const {
  if (idx.size() != dims_.size()) throw DimensionError("index arity does not match tensor order");
  std::size_t j = 0, stride = 1;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] >= dims_[k]) throw DimensionError("index out of range");
    j += idx[k] * stride;
    stride *= dims_[k];
  }
  return j;
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  return data_[linear_index({idx.begin(), idx.size()})];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return data_[linear_index({idx.begin(), idx.size()})];
}

double Tensor::value() const {
  if (!dims_.empty()) throw DimensionError("value() requires an order-0 tensor");
  return data_[0];
}

Matrix Tensor::to_matrix() const {
  if (dims_.size() != 2) throw DimensionError("to_matrix() requires an order-2 tensor");
  return Eigen::Map<const Matrix>(data_.data(), static_cast<Eigen::Index>(dims_[0]),
                                  static_cast<Eigen::Index>(dims_[1]));
}

double Tensor::frobenius_norm() const { return flat().norm(); }

double Tensor::squared_norm() const { return flat().squaredNorm(); }

Tensor& Tensor::operator+=(const Tensor& other) {
  if (dims_ != other.dims_) throw DimensionError("tensor dims differ in addition");
  flat() += other.flat();
  return *this;
}

Tensor& Tensor::operator-=(const Tensor& other) {
  if (dims_ != other.dims_) throw DimensionError("tensor dims differ in subtraction");
  flat() -= other.flat();
  return *this;
}

Tensor& Tensor::operator*=(double s) {
  flat() *= s;
  return *this;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.dims_ == b.dims_ && a.data_ == b.data_;
}

Vector vec(const Tensor& t) { return t.flat(); }

Tensor fold_vec(std::span<const double> values, const Dims& dims) {
  return Tensor(dims, std::vector<double>(values.begin(), values.end()));
}

Matrix matricize(const Tensor& t, std::size_t k) {
  check_mode(t, k);
  const auto rk = t.dim(k);
  const auto [left, right] = split_at(t.dims(), k);
  Matrix out(static_cast<Eigen::Index>(rk), static_cast<Eigen::Index>(left * right));
  const double* src = t.data().data();
  for (std::size_t b = 0; b < right; ++b)
    for (std::size_t i = 0; i < rk; ++i)
      for (std::size_t a = 0; a < left; ++a)
        out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a + left * b)) =
            src[a + left * (i + rk * b)];
  return out;
}

Tensor fold(const Matrix& mat, std::size_t k, const Dims& dims) {
  check_dims(dims);
  if (k >= dims.size()) throw DimensionError("fold mode out of range");
  const auto rk = dims[k];
  const auto [left, right] = split_at(dims, k);
  if (static_cast<std::size_t>(mat.rows()) != rk ||
      static_cast<std::size_t>(mat.cols()) != left * right)
    throw DimensionError("fold: matrix " + std::to_string(mat.rows()) + "x" +
                         std::to_string(mat.cols()) + " does not unfold dims " + dims_str(dims) +
                         " along mode " + std::to_string(k));
  Tensor t(dims);
  double* dst = t.data().data();
  for (std::size_t b = 0; b < right; ++b)
    for (std::size_t i = 0; i < rk; ++i)
      for (std::size_t a = 0; a < left; ++a)
        dst[a + left * (i + rk * b)] =
            mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a + left * b));
  return t;
}

Tensor mode_product(const Tensor& t, const Matrix& c, std::size_t k) {
  check_mode(t, k);
  const auto rk = t.dim(k);
  if (static_cast<std::size_t>(c.cols()) != rk)
    throw DimensionError("mode_product: matrix has " + std::to_string(c.cols()) +
                         " columns, mode " + std::to_string(k) + " has extent " +
                         std::to_string(rk));
  const auto s = static_cast<std::size_t>(c.rows());
  const auto [left, right] = split_at(t.dims(), k);
  Dims out_dims = t.dims();
  out_dims[k] = s;
  if (s == 0) throw DimensionError("mode_product: zero-row matrix");
  Tensor out(out_dims);
  const auto L = static_cast<Eigen::Index>(left);
  const auto R = static_cast<Eigen::Index>(right);
  const auto Rk = static_cast<Eigen::Index>(rk);
  const auto S = static_cast<Eigen::Index>(s);
  if (left == 1) {
    Eigen::Map<const Matrix> in(t.data().data(), Rk, R);
    Eigen::Map<Matrix> res(out.data().data(), S, R);
    res.noalias() = c * in;
  } else {
    // Each slice over the upper modes is a left x r_k column-major block.
    for (Eigen::Index b = 0; b < R; ++b) {
      Eigen::Map<const Matrix> in(t.data().data() + b * L * Rk, L, Rk);
      Eigen::Map<Matrix> res(out.data().data() + b * L * S, L, S);
      res.noalias() = in * c.transpose();
    }
  }
  return out;
}

Tensor mode_vec_product(const Tensor& t, const Vector& v, std::size_t k) {
  check_mode(t, k);
  const auto rk = t.dim(k);
  if (static_cast<std::size_t>(v.size()) != rk)
    throw DimensionError("mode_vec_product: vector length " + std::to_string(v.size()) +
                         " does not match extent " + std::to_string(rk));
  const auto [left, right] = split_at(t.dims(), k);
  Dims out_dims = t.dims();
  out_dims.erase(out_dims.begin() + static_cast<std::ptrdiff_t>(k));
  Tensor out = out_dims.empty() ? Tensor::scalar(0.0) : Tensor(out_dims);
  const auto L = static_cast<Eigen::Index>(left);
  const auto Rk = static_cast<Eigen::Index>(rk);
  for (std::size_t b = 0; b < right; ++b) {
    Eigen::Map<const Matrix> in(t.data().data() + b * left * rk, L, Rk);
    Eigen::Map<Vector> res(out.data().data() + b * left, L);
    res.noalias() = in * v;
  }
  return out;
}

Tensor tucker(const Tensor& core, std::span<const Matrix> factors) {
  if (factors.size() != core.order())
    throw DimensionError("tucker: " + std::to_string(factors.size()) + " factors for order " +
                         std::to_string(core.order()));
  Tensor out = core;
  for (std::size_t k = 0; k < factors.size(); ++k) out = mode_product(out, factors[k], k);
  return out;
}

Matrix kron(std::span<const Matrix> mats) {
  if (mats.empty()) throw DimensionError("kron of an empty list");
  Matrix out = mats[0];
  for (std::size_t q = 1; q < mats.size(); ++q) {
    const Matrix& b = mats[q];
    Matrix next(out.rows() * b.rows(), out.cols() * b.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j)
        next.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = out(i, j) * b;
    out = std::move(next);
  }
  return out;
}

double inner(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw DimensionError("inner: dims differ");
  return a.flat().dot(b.flat());
}

}  // namespace tenv
