#pragma once

#include "tenv/covariance.hpp"
#include "tenv/estimators.hpp"
#include "tenv/linalg.hpp"
#include "tenv/tensor.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tenv {

enum class ShapeKind { square, cross, disk, mask_file };

std::string to_string(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& s);

struct ShapeSpec {
  ShapeKind kind = ShapeKind::square;
  std::size_t size = 64;
  /// Disk radius in pixels; 0 selects 0.3 * size.
  double radius = 0.0;
  /// PGM mask for ShapeKind::mask_file; nonzero pixels are 1.
  std::string path;
};

/// Binary size x size signal. Square: centered block of side size/2.
/// Cross: centered bars of width size/8. Disk: (i-c)^2 + (j-c)^2 <= rho^2,
/// c = (size-1)/2.
Matrix make_shape(const ShapeSpec& spec);

/// Number of singular values above tol_ratio * sigma_max (0 for a zero matrix).
std::size_t numerical_rank(const Matrix& b, double tol_ratio = 1e-8);

/// Largest radius on a 0.01-pixel grid whose disk has the requested rank.
/// Throws if no radius gives that rank.
double calibrate_disk_radius(std::size_t size, std::size_t target_rank);

struct GroundTruth {
  Tensor b;                 ///< dims (r_1, ..., r_m, p)
  SeparableCovariance cov;  ///< covariance of the error term, sigma^2 included
  EnvelopeBasis basis;
  double sigma = 1.0;
};

/// Envelope-structured separable covariance whose material part along mode k
/// contains span(B_(k)). G_k holds the top u_k left singular vectors of the
/// mode-k unfolding of `b` (dims (r_1, ..., r_m, p)), Gamma_k = G_k O_k with a
/// random orthogonal O_k, and
/// Sigma_k = Gamma_k Omega_k Gamma_k^T + sigma0_sq Gamma_0k Omega_0k Gamma_0k^T
/// with Omega = A A^T, A uniform(0,1). Factors come back at unit Frobenius norm.
std::pair<SeparableCovariance, EnvelopeBasis> gen_envelope_covariance(
    const Tensor& b, std::span<const std::size_t> u, double sigma0_sq, Rng& rng);

/// Same construction starting from given semi-orthogonal G_k.
std::pair<SeparableCovariance, EnvelopeBasis> gen_envelope_covariance_from(
    std::span<const Matrix> g, double sigma0_sq, Rng& rng);

enum class Design { shape, tucker };

std::string to_string(Design d);
Design parse_design(const std::string& s);

struct ScenarioConfig {
  Design design = Design::tucker;
  Dims dims{20, 30, 40};
  std::size_t p = 5;
  std::size_t n = 100;
  double snr = 1.0;
  /// Fixes the noise level directly instead of solving it from the SNR;
  /// required when the signal is zero.
  std::optional<double> sigma;
  double sigma0_sq = 1.0;
  Dims u{2, 3, 4};          ///< envelope dims used to generate the data
  std::optional<Dims> fit_u;  ///< working dims of the fits; defaults to u
  std::size_t reps = 10;
  std::uint64_t seed = 1;
  ShapeSpec shape;
  /// Multiplies the shape signal; 0 gives a null model.
  double signal_scale = 1.0;
  std::vector<Estimator> estimators{Estimator::ols, Estimator::iterative};
  FitOptions fit;

  Dims working_u() const { return fit_u ? *fit_u : u; }
  /// Throws FormatError on inconsistent settings.
  void validate() const;
};

/// sigma with ||B||_F / (sigma sqrt(tau prod_k tr Sigma_k)) = snr.
double sigma_from_snr(const Tensor& b, const SeparableCovariance& cov, double snr);

/// Matrix-shaped signal (order-2 response, p = 1) with the balanced two-group
/// design: the first ceil(n/2) samples have X = 1, the rest X = 0.
std::pair<Dataset, GroundTruth> gen_dataset(const ScenarioConfig& config, const Matrix& shape, Rng& rng);

/// Tucker-structured signal B = [[Theta; Gamma_1, ..., Gamma_m, I_p]] with a
/// standard normal core, random bases, and standard normal predictors.
std::pair<Dataset, GroundTruth> gen_dataset_3way(const ScenarioConfig& config, Rng& rng);

/// Dispatches on config.design.
std::pair<Dataset, GroundTruth> gen_scenario(const ScenarioConfig& config, Rng& rng);

struct CpDataset {
  Vector y;
  Tensor x;  ///< dims (r_1, r_2, n)
  Matrix b;
};

/// Y_i = <B, X_i> + e_i with standard normal X_i and e_i.
CpDataset gen_cp_dataset(const Matrix& b, std::size_t n, Rng& rng);

/// ||b_hat - b_true||_F^2.
double error_metric(const Tensor& b_hat, const Tensor& b_true);

struct ReplicationRecord {
  std::size_t rep = 0;
  Estimator estimator = Estimator::ols;
  bool ok = false;
  std::string message;
  double error = 0.0;
  double truth_norm_sq = 0.0;
  double seconds = 0.0;
  std::vector<double> objective_trace;
  int rejected_steps = 0;
  int iterations = 0;
  bool converged = false;
};

struct EstimatorSummary {
  Estimator estimator = Estimator::ols;
  double mean = 0.0;
  /// Sample standard deviation / sqrt(R); NaN when fewer than 2 replications
  /// succeeded.
  double std_error = 0.0;
  std::size_t failures = 0;
  std::size_t succeeded = 0;
  double seconds = 0.0;
};

struct ReplicationSummary {
  std::vector<ReplicationRecord> records;  ///< ordered by (rep, estimator)
  std::vector<EstimatorSummary> summaries;
};

/// Seed of replication `rep`.
std::uint64_t replication_seed(std::uint64_t master, std::size_t rep);

/// Generates config.reps datasets and fits every configured estimator on
/// each. Replications are distributed over `threads` workers; results do not
/// depend on the worker count.
ReplicationSummary run_replications(const ScenarioConfig& config, std::size_t threads = 1);

}  // namespace tenv
