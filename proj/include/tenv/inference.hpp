#pragma once

#include "tenv/covariance.hpp"
#include "tenv/estimators.hpp"
#include "tenv/tensor.hpp"

#include <vector>

namespace tenv {

/// scale * Sigma_X^-1 (x) F_m (x) ... (x) F_1, the asymptotic covariance of
/// sqrt(n) vec(B_hat) with the predictor mode outermost.
struct CoefficientCovariance {
  enum class Kind { ols, gamma };

  Matrix sigma_x_inv;
  std::vector<Matrix> factors;
  double scale = 1.0;
  Kind kind = Kind::ols;

  /// Diagonal laid out like B: dims (r_1, ..., r_m, p).
  Tensor diagonal() const;
  /// Dense matrix for small checks.
  Matrix dense() const;
};

/// Sigma_X = n^-1 X X^T of the centered predictors.
Matrix predictor_covariance(const Dataset& d);

CoefficientCovariance u_ols(const Matrix& sigma_x, const SeparableCovariance& cov);
/// Factors Gamma_k Omega_k Gamma_k^T and the scale of `cov`.
CoefficientCovariance u_gamma(const Matrix& sigma_x, const EnvelopeBasis& basis,
                              std::span<const Matrix> omegas, double scale = 1.0);

struct PValueMap {
  Tensor p;
  Tensor z;
  std::size_t n = 0;
};

/// Two-sided z-test per coefficient entry, z = sqrt(n) b / sqrt(var). Entries
/// with zero variance get z = 0 and p = 1.
PValueMap pvalue_map(const Tensor& b_hat, const CoefficientCovariance& cov, std::size_t n);

/// 2 (1 - Phi(|z|)).
double two_sided_p(double z);

/// 1 where p < alpha, else 0.
Tensor threshold_map(const Tensor& p, double alpha);
/// Benjamini-Hochberg step-up over all entries; 1 marks a rejection.
Tensor bh_fdr(const Tensor& p, double q);

}  // namespace tenv
