#include "tenv/inference.hpp"

#include "tenv/error.hpp"
#include "tenv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tenv {

Tensor CoefficientCovariance::diagonal() const {
  Dims dims;
  for (const auto& f : factors) dims.push_back(static_cast<std::size_t>(f.rows()));
  dims.push_back(static_cast<std::size_t>(sigma_x_inv.rows()));
  Tensor out(dims);
  // Start from the predictor diagonal and expand one mode at a time, highest
  // mode first, so the result is the outer product of all diagonals.
  Vector d = scale * sigma_x_inv.diagonal();
  for (auto f = factors.rbegin(); f != factors.rend(); ++f) {
    const Vector fd = f->diagonal();
    Vector next(d.size() * fd.size());
    for (Eigen::Index a = 0; a < d.size(); ++a) next.segment(a * fd.size(), fd.size()) = d(a) * fd;
    d = std::move(next);
  }
  out.flat() = d;
  return out;
}

Matrix CoefficientCovariance::dense() const {
  std::vector<Matrix> mats{sigma_x_inv};
  for (auto f = factors.rbegin(); f != factors.rend(); ++f) mats.push_back(*f);
  return scale * kron(mats);
}

Matrix predictor_covariance(const Dataset& d) {
  const Vector mean = d.x.rowwise().mean();
  const Matrix xc = d.x.colwise() - mean;
  return symmetrize(xc * xc.transpose() / static_cast<double>(d.n()));
}

CoefficientCovariance u_ols(const Matrix& sigma_x, const SeparableCovariance& cov) {
  CoefficientCovariance out;
  out.sigma_x_inv = spd_inverse(sigma_x, "Sigma_X");
  out.factors = cov.factors;
  out.scale = cov.tau;
  out.kind = CoefficientCovariance::Kind::ols;
  return out;
}

CoefficientCovariance u_gamma(const Matrix& sigma_x, const EnvelopeBasis& basis,
                              std::span<const Matrix> omegas, double scale) {
  if (omegas.size() != basis.gammas.size()) throw DimensionError("u_gamma: one Omega per mode");
  CoefficientCovariance out;
  out.sigma_x_inv = spd_inverse(sigma_x, "Sigma_X");
  for (std::size_t k = 0; k < omegas.size(); ++k) {
    const Matrix& g = basis.gammas[k];
    if (omegas[k].rows() != g.cols() || omegas[k].cols() != g.cols())
      throw DimensionError("u_gamma: Omega shape does not match the basis of mode " + std::to_string(k));
    out.factors.push_back(symmetrize(g * omegas[k] * g.transpose()));
  }
  out.scale = scale;
  out.kind = CoefficientCovariance::Kind::gamma;
  return out;
}

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

PValueMap pvalue_map(const Tensor& b_hat, const CoefficientCovariance& cov, std::size_t n) {
  if (n < 2) throw DimensionError("pvalue_map: n must be at least 2");
  const Tensor var = cov.diagonal();
  if (var.dims() != b_hat.dims()) throw DimensionError("pvalue_map: coefficient and covariance dims differ");
  PValueMap out{Tensor(b_hat.dims()), Tensor(b_hat.dims()), n};
  const double rn = std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < b_hat.size(); ++j) {
    const double v = var[j];
    if (v < 0.0 || std::isnan(v)) throw NumericalError("pvalue_map: negative variance");
    if (v == 0.0 || b_hat[j] == 0.0) {
      out.z[j] = 0.0;
      out.p[j] = 1.0;
      continue;
    }
    out.z[j] = rn * b_hat[j] / std::sqrt(v);
    out.p[j] = two_sided_p(out.z[j]);
  }
  return out;
}

Tensor threshold_map(const Tensor& p, double alpha) {
  Tensor mask(p.dims());
  for (std::size_t j = 0; j < p.size(); ++j) mask[j] = p[j] < alpha ? 1.0 : 0.0;
  return mask;
}

Tensor bh_fdr(const Tensor& p, double q) {
  const std::size_t n = p.size();
  std::vector<double> sorted(p.data().begin(), p.data().end());
  std::sort(sorted.begin(), sorted.end());
  double cutoff = -1.0;
  for (std::size_t i = n; i-- > 0;) {
    if (sorted[i] <= static_cast<double>(i + 1) * q / static_cast<double>(n)) {
      cutoff = sorted[i];
      break;
    }
  }
  Tensor mask(p.dims());
  for (std::size_t j = 0; j < n; ++j) mask[j] = p[j] <= cutoff ? 1.0 : 0.0;
  return mask;
}

}  // namespace tenv
