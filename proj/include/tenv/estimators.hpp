#pragma once

#include "tenv/covariance.hpp"
#include "tenv/manifold.hpp"
#include "tenv/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tenv {

/// n paired observations: X is p x n, Y stacks the responses along a trailing
/// sample mode, dims (r_1, ..., r_m, n).
struct Dataset {
  Matrix x;
  Tensor y;
  Vector x_mean;  ///< removed by center(); zero otherwise
  Tensor y_mean;  ///< dims (r_1, ..., r_m)
  bool centered = false;

  Dataset() = default;
  /// Validates that sample counts agree and that Y has order >= 2.
  Dataset(Matrix x, Tensor y);

  std::size_t n() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t p() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t order() const { return y.order() - 1; }
  Dims response_dims() const { return {y.dims().begin(), y.dims().end() - 1}; }

  /// Response i as an order-m tensor.
  Tensor response(std::size_t i) const;
};

/// Removes the sample mean of X columns and of every response entry.
/// Throws DimensionError when n < 2.
Dataset center(const Dataset& d);
/// Adds the stored means back.
Dataset uncenter(const Dataset& d);

/// Semi-orthogonal per-mode bases with their orthogonal completions.
struct EnvelopeBasis {
  std::vector<Matrix> gammas;
  std::vector<Matrix> completions;

  EnvelopeBasis() = default;
  /// Checks orthonormality (1e-10) and builds the completions.
  explicit EnvelopeBasis(std::vector<Matrix> gammas);

  Dims envelope_dims() const;
  Matrix projection(std::size_t k) const { return gammas[k] * gammas[k].transpose(); }
};

struct EnvelopeModel {
  /// Core coefficient of dims (u_1, ..., u_m, p); absent when some u_k = 0.
  std::optional<Tensor> theta;
  EnvelopeBasis basis;
  std::vector<Matrix> omegas;
  std::vector<Matrix> omega0s;
};

enum class Estimator { ols, iterative, onestep };

std::string to_string(Estimator e);
/// Accepts "ols", "env-iterative", "env-onestep".
Estimator parse_estimator(const std::string& s);

struct FitOptions {
  bool center = true;
  double tol = 1e-6;    ///< relative change of the objective ending the outer loop
  int max_iter = 50;
  int random_starts = 3;
  std::uint64_t seed = 0;
  /// An outer step that raises the objective by more than this relative
  /// amount is rejected and the fit stops at the previous iterate.
  double objective_slack = 1e-9;
  FlipFlopOptions flip_flop;
  GrassmannOptions grassmann;
};

struct FitResult {
  Estimator estimator = Estimator::ols;
  Tensor b;                      ///< dims (r_1, ..., r_m, p)
  SeparableCovariance cov;
  std::optional<EnvelopeModel> model;
  /// Objective after each accepted outer iteration (one entry for the
  /// one-step and OLS fits).
  std::vector<double> objective_trace;
  /// Objective at the OLS fit with its flip-flop covariance.
  double initial_objective = 0.0;
  int iterations = 0;
  bool converged = false;
  int rejected_steps = 0;
  std::string stop_reason;
  double seconds = 0.0;
};

/// A (centered) dataset with the OLS quantities shared by every estimator.
class RegressionStats {
 public:
  /// Throws NumericalError if X X^T is singular or its condition number
  /// exceeds 1e12.
  explicit RegressionStats(Dataset d);

  const Dataset& data() const { return data_; }
  std::size_t n() const { return data_.n(); }
  std::size_t order() const { return data_.order(); }
  Dims response_dims() const { return data_.response_dims(); }
  const Matrix& hat() const { return hat_; }  ///< (X X^T)^-1 X
  const Tensor& b_ols() const { return b_ols_; }

  /// sum_i Y_i(k) W Y_i(k)^T, W = (x)_{j != k} Sigma_j^-1 given by inv_lower.
  Matrix response_gram(std::span<const Matrix> inv_lower, std::size_t k) const;

  /// Upper-triangular root of response_gram, see whitened_mode_root.
  Matrix response_root(std::span<const Matrix> inv_lower, std::size_t k) const;

  /// sum_i e_i(k) W e_i(k)^T for e_i = Y_i - b x_{m+1} X_i, formed from the
  /// residuals themselves. Expanding it around the response Gram loses the
  /// residual to cancellation once W amplifies the signal directions.
  Matrix residual_gram(const Tensor& b, std::span<const Matrix> inv_lower, std::size_t k) const;

  /// Stacked residuals Y - b x_{m+1} X^T.
  Tensor residuals(const Tensor& b) const;

 private:
  Dataset data_;
  Matrix hat_;
  Tensor b_ols_;
};

FitResult ols_fit(const Dataset& d, const FitOptions& opts = {});

/// Per-mode moment matrices. `projections[j]` is the current P_j for j != k
/// (entry k ignored); `cov` supplies the Sigma_j^-1 weights.
struct ModeMoments {
  Matrix m;       ///< whitened second moment of the partially projected residual
  Matrix n;       ///< whitened second moment of the response
  Matrix m_root;  ///< upper-triangular, m = m_root^T m_root
  Matrix n_root;  ///< upper-triangular, n = n_root^T n_root
};
ModeMoments compute_mn(std::size_t k, const RegressionStats& stats, const SeparableCovariance& cov,
                       std::span<const Matrix> projections);

/// Theta = Z x_{m+1} (X X^T)^-1 X with Z_i = [[Y_i; Gamma_1^T, ..., Gamma_m^T]].
std::optional<Tensor> update_theta(const RegressionStats& stats, const EnvelopeBasis& basis);

struct OmegaUpdate {
  std::vector<Matrix> omegas;
  std::vector<Matrix> omega0s;
  int sweeps = 0;
};

/// Alternating per-mode covariance update restricted to the envelope
/// structure: for mode k, with the current weights of the other modes,
/// Omega_k and Omega_0k are the Gamma_k and Gamma_0k blocks of the whitened
/// residual moment of e_i = Y_i - B X_i, B = [[B_ols; P_1, ..., P_m, I_p]].
/// The Omega_0k block depends only on the responses. Warm-started at
/// `cov_prev`; sweeps until the factors settle.
OmegaUpdate update_omegas(const RegressionStats& stats, const EnvelopeBasis& basis,
                          const SeparableCovariance& cov_prev, const FlipFlopOptions& opts = {});

/// B = [[b_ols; P_1, ..., P_m, I_p]] and
/// Sigma_k = Gamma_k Omega_k Gamma_k^T + Gamma_0k Omega_0k Gamma_0k^T, returned
/// normalized with the product of factor norms as tau.
std::pair<Tensor, SeparableCovariance> reconstruct(const EnvelopeBasis& basis, const Tensor& b_ols,
                                                   std::span<const Matrix> omegas,
                                                   std::span<const Matrix> omega0s);

/// log|Sigma| + n^-1 sum_i vec(Y_i - B X_i)^T Sigma^-1 vec(Y_i - B X_i).
double objective_l(const Tensor& b, const SeparableCovariance& cov, const RegressionStats& stats);
double objective_l(const Tensor& b, const SeparableCovariance& cov, const Dataset& d);

FitResult fit_iterative(const Dataset& d, std::span<const std::size_t> u,
                        const FitOptions& opts = {});
FitResult fit_onestep(const Dataset& d, std::span<const std::size_t> u,
                      const FitOptions& opts = {});
FitResult fit(const Dataset& d, Estimator e, std::span<const std::size_t> u,
              const FitOptions& opts = {});

struct ParameterCount {
  std::uint64_t full = 0;
  std::uint64_t envelope = 0;
  std::uint64_t saved = 0;
};

/// Free-parameter counts of the unrestricted separable model and the
/// envelope model, and the coefficient-side saving p (prod r - prod u).
ParameterCount parameter_count(std::span<const std::size_t> r, std::span<const std::size_t> u,
                               std::size_t p);

}  // namespace tenv
