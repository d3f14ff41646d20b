#pragma once

#include "tenv/linalg.hpp"
#include "tenv/tensor.hpp"

#include <optional>
#include <span>
#include <vector>

namespace tenv {

/// Factors are combined as Sigma_m (x) ... (x) Sigma_1: the highest mode is the
/// leftmost Kronecker factor, which is what the first-index-fastest vec layout
/// requires. Every dense realization in this library reverses the factor list
/// before calling kron() for this reason.
inline constexpr bool kKroneckerDescending = true;

/// Separable covariance tau * Sigma_m (x) ... (x) Sigma_1 of an order-m tensor.
/// Never materialized except through dense() for small checks.
struct SeparableCovariance {
  std::vector<Matrix> factors;
  double tau = 1.0;

  SeparableCovariance() = default;
  /// Validates symmetry (1e-12 relative) and positive definiteness of every
  /// factor and tau > 0.
  SeparableCovariance(std::vector<Matrix> factors, double tau);

  /// Identity covariance with unit-Frobenius factors I/sqrt(r_k).
  static SeparableCovariance identity(const Dims& dims);

  std::size_t order() const { return factors.size(); }
  Dims dims() const;

  /// tau * kron(Sigma_m, ..., Sigma_1).
  Matrix dense() const;

  /// Same represented covariance with every factor at unit Frobenius norm.
  SeparableCovariance normalized() const;
};

/// Per-mode lower Cholesky factors, Sigma_k = L_k L_k^T, and sqrt(tau).
struct CholeskyFactors {
  std::vector<Matrix> lower;
  double sqrt_tau = 1.0;
};

CholeskyFactors cholesky(const SeparableCovariance& cov);

struct FlipFlopOptions {
  int max_sweeps = 100;
  double tol = 1e-8;  ///< largest change of a unit-norm factor ending the sweeps
  /// Also stop once a sweep lowers the objective by no more than this
  /// relative amount; 0 disables the check.
  double objective_tol = 1e-12;
};

struct FlipFlopResult {
  SeparableCovariance cov;          ///< normalized factors and tau
  std::vector<Matrix> raw_factors;  ///< factors before normalization
  /// log|Sigma| + n^-1 sum_i vec(e_i)^T Sigma^-1 vec(e_i) after each sweep.
  std::vector<double> objective;
  int sweeps = 0;
  bool converged = false;
};

/// Matrix-normal MLE of a separable covariance by alternating per-mode
/// updates. `stack` holds the n residuals along a trailing sample mode, dims
/// (r_1, ..., r_m, n). Starts from identity factors unless `init` is given.
FlipFlopResult flip_flop_mle(const Tensor& stack,
                             const std::optional<SeparableCovariance>& init = std::nullopt,
                             const FlipFlopOptions& opts = {});

/// Convenience overload for a list of equally shaped residual tensors.
FlipFlopResult flip_flop_mle(std::span<const Tensor> residuals,
                             const std::optional<SeparableCovariance>& init = std::nullopt,
                             const FlipFlopOptions& opts = {});

/// Divides every factor by its Frobenius norm and sets
/// tau = (n prod r)^-1 sum_i vec(e_i)^T (Sigma_m^-1 (x) ... (x) Sigma_1^-1) vec(e_i).
SeparableCovariance normalize_and_tau(std::span<const Matrix> factors, const Tensor& stack);

/// Applies Sigma_j^-1 along every mode j except `exclude_mode`. With no
/// excluded mode the result is additionally divided by tau, so that
/// vec(result) = Sigma^-1 vec(t). A partial product (some mode excluded)
/// carries no tau. `t` may carry one trailing sample mode beyond the
/// covariance order; it is left untouched.
Tensor whiten_apply(const Tensor& t, const SeparableCovariance& cov,
                    std::optional<std::size_t> exclude_mode = std::nullopt);

/// log |tau Sigma_m (x) ... (x) Sigma_1|.
double log_det(const SeparableCovariance& cov);

/// One draw sqrt(tau) [[Z; L_1, ..., L_m]] with Z standard normal.
Tensor sample_matrix_normal(const Dims& dims, const SeparableCovariance& cov, Rng& rng);

/// n independent draws stacked along a trailing sample mode. Identical to n
/// successive sample_matrix_normal calls on the same generator.
Tensor sample_matrix_normal_stack(const SeparableCovariance& cov, std::size_t n, Rng& rng);

/// sum_i X_i(k) W X_i(k)^T with W = (x)_{j != k} Sigma_j^-1 over the samples of
/// `stack`; `inv_lower[j]` is L_j^-1 for the factors being used (entry k is
/// ignored). The building block of every per-mode moment in the library.
Matrix whitened_mode_gram(const Tensor& stack, std::span<const Matrix> inv_lower, std::size_t k);

/// Upper-triangular R with R^T R equal to whitened_mode_gram, built by a
/// running Householder QR of the whitened unfoldings. Small eigenvalues of
/// the Gram keep their accuracy even when the Gram itself is too ill
/// conditioned to resolve them.
Matrix whitened_mode_root(const Tensor& stack, std::span<const Matrix> inv_lower, std::size_t k);

/// sum_i ||[[X_i; L_1^-1, ..., L_m^-1]]||^2 over the samples of `stack`.
double whitened_squared_norm(const Tensor& stack, std::span<const Matrix> inv_lower);

/// L^-1 for every factor, where factor = L L^T.
std::vector<Matrix> inverse_cholesky_factors(std::span<const Matrix> factors);

}  // namespace tenv
