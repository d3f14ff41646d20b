#include "tenv/linalg.hpp"

#include "tenv/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tenv {

std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index, std::string_view label) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  // FNV-1a of the label.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : label) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return mix(mix(mix(master) ^ index) ^ h);
}

Eigen::LLT<Matrix> spd_cholesky(const Matrix& s, std::string_view what) {
  if (s.rows() != s.cols()) throw DimensionError(std::string(what) + " is not square");
  Eigen::LLT<Matrix> llt(s);
  if (llt.info() == Eigen::Success && s.allFinite()) return llt;
  const double trace = s.trace();
  if (!(trace > 0.0) || !s.allFinite())
    throw NumericalError(std::string(what) + " is not positive definite");
  Matrix jittered = s;
  jittered.diagonal().array() += 1e-10 * trace / static_cast<double>(s.rows());
  llt.compute(jittered);
  if (llt.info() != Eigen::Success)
    throw NumericalError(std::string(what) + " is not positive definite");
  return llt;
}

Matrix spd_inverse(const Matrix& s, std::string_view what) {
  Matrix inv = spd_cholesky(s, what).solve(Matrix::Identity(s.rows(), s.cols()));
  return symmetrize(inv);
}

double spd_log_det(const Matrix& s, std::string_view what) {
  const auto llt = spd_cholesky(s, what);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix gram_root(const Matrix& a) {
  const Eigen::Index c = a.cols();
  if (a.rows() < c) {
    Matrix padded = Matrix::Zero(c, c);
    padded.topRows(a.rows()) = a;
    return gram_root(padded);
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix r = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < c; ++j)
    if (r(j, j) < 0) r.row(j) *= -1.0;
  return r;
}

Matrix spd_root(const Matrix& s, std::string_view what) {
  return spd_cholesky(s, what).matrixU();
}

double gram_log_det(const Matrix& a, std::string_view what) {
  if (a.cols() == 0) return 0.0;
  Eigen::HouseholderQR<Matrix> qr(a);
  const auto d = qr.matrixQR().diagonal().head(std::min(a.rows(), a.cols())).cwiseAbs();
  if (a.rows() < a.cols() || !(d.minCoeff() > 0.0) || !d.allFinite())
    throw NumericalError(std::string(what) + " is not positive definite");
  return 2.0 * d.array().log().sum();
}

Matrix symmetrize(const Matrix& s) { return 0.5 * (s + s.transpose()); }

Matrix orthonormalize(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
  const Matrix& r = qr.matrixQR();
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

Matrix orthogonal_complement(const Matrix& g) {
  const Eigen::Index r = g.rows(), u = g.cols();
  if (u == 0) return Matrix::Identity(r, r);
  if (u == r) return Matrix(r, 0);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix full = qr.householderQ();
  return full.rightCols(r - u);
}

Matrix top_eigenvectors(const Matrix& s, Eigen::Index u) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  // Eigenvalues come ascending.
  return es.eigenvectors().rightCols(u).rowwise().reverse();
}

double containment_angle(const Matrix& inner, const Matrix& outer) {
  if (inner.cols() == 0) return 0.0;
  const Matrix qi = orthonormalize(inner);
  Matrix resid = qi;
  if (outer.cols() > 0) {
    const Matrix qo = orthonormalize(outer);
    resid -= qo * (qo.transpose() * qi);
  }
  Eigen::JacobiSVD<Matrix> svd(resid);
  const double s = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
  return std::asin(std::min(1.0, s));
}

Vector principal_angles(const Matrix& a, const Matrix& b) {
  const Matrix qa = orthonormalize(a), qb = orthonormalize(b);
  Eigen::JacobiSVD<Matrix> svd(qa.transpose() * qb);
  Vector c = svd.singularValues();
  Vector ang(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) ang(i) = std::acos(std::clamp(c(i), -1.0, 1.0));
  std::sort(ang.data(), ang.data() + ang.size());
  return ang;
}

Matrix random_semi_orthogonal(Eigen::Index r, Eigen::Index u, Rng& rng) {
  if (u == 0) return Matrix(r, 0);
  std::normal_distribution<double> normal;
  Matrix a(r, u);
  for (Eigen::Index j = 0; j < u; ++j)
    for (Eigen::Index i = 0; i < r; ++i) a(i, j) = normal(rng);
  return orthonormalize(a);
}

}  // namespace tenv
