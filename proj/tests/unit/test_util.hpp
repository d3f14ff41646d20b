#pragma once

#include <tenv/covariance.hpp>
#include <tenv/linalg.hpp>
#include <tenv/tensor.hpp>

#include <random>

namespace testutil {

inline tenv::Matrix random_matrix(Eigen::Index r, Eigen::Index c, tenv::Rng& rng) {
  std::normal_distribution<double> normal;
  tenv::Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
  return m;
}

inline tenv::Tensor random_tensor(const tenv::Dims& dims, tenv::Rng& rng) {
  tenv::Tensor t(dims);
  std::normal_distribution<double> normal;
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

inline tenv::Matrix random_spd(Eigen::Index d, tenv::Rng& rng) {
  const tenv::Matrix a = random_matrix(d, d, rng);
  return a * a.transpose() + 0.5 * tenv::Matrix::Identity(d, d);
}

inline tenv::SeparableCovariance random_cov(const tenv::Dims& dims, tenv::Rng& rng) {
  std::vector<tenv::Matrix> f;
  for (auto r : dims) f.push_back(random_spd(static_cast<Eigen::Index>(r), rng));
  return tenv::SeparableCovariance(f, 1.7).normalized();
}

inline tenv::Matrix random_orthogonal(Eigen::Index d, tenv::Rng& rng) {
  return tenv::orthonormalize(random_matrix(d, d, rng));
}

// Dense Sigma^-1 (x) ... oracle: vec(e)^T Sigma^-1 vec(e) summed over samples.
inline double dense_quadratic(const tenv::Tensor& stack, const tenv::Matrix& dense) {
  const auto block = dense.rows();
  const auto n = static_cast<Eigen::Index>(stack.size()) / block;
  Eigen::Map<const tenv::Matrix> e(stack.data().data(), block, n);
  const tenv::Matrix inv = dense.inverse();
  return (e.transpose() * inv * e).trace();
}

}  // namespace testutil
