#include "tenv/estimators.hpp"

#include "tenv/error.hpp"
#include "tenv/linalg.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>

namespace tenv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Multiplies `t` along each of its first modes by the matching matrix; an
// empty matrix stands for the identity and is skipped.
Tensor project_modes(Tensor t, std::span<const Matrix> mats, std::optional<std::size_t> skip = {}) {
  for (std::size_t j = 0; j < mats.size(); ++j) {
    if (skip && *skip == j) continue;
    if (mats[j].size() == 0 && mats[j].rows() == 0) continue;
    t = mode_product(t, mats[j], j);
  }
  return t;
}

void check_envelope_dims(const Dims& r, std::span<const std::size_t> u) {
  if (u.size() != r.size())
    throw DimensionError("envelope dimension list has " + std::to_string(u.size()) +
                         " entries for a response of order " + std::to_string(r.size()));
  for (std::size_t k = 0; k < r.size(); ++k)
    if (u[k] > r[k])
      throw DimensionError("envelope dimension u_" + std::to_string(k + 1) + " = " +
                           std::to_string(u[k]) + " exceeds r_" + std::to_string(k + 1) + " = " +
                           std::to_string(r[k]));
}

double mode_denominator(const RegressionStats& stats, std::size_t k) {
  const Dims r = stats.response_dims();
  return static_cast<double>(stats.n() * (dims_product(r) / r[k]));
}

}  // namespace

// ---------------------------------------------------------------- Dataset

Dataset::Dataset(Matrix xx, Tensor yy) : x(std::move(xx)), y(std::move(yy)) {
  if (y.order() < 2) throw DimensionError("response stack needs a trailing sample mode");
  if (static_cast<std::size_t>(x.cols()) != y.dims().back())
    throw DimensionError("X has " + std::to_string(x.cols()) + " samples, Y has " +
                         std::to_string(y.dims().back()));
  if (x.rows() == 0) throw DimensionError("X has no predictors");
  x_mean = Vector::Zero(x.rows());
  y_mean = Tensor(response_dims());
}

Tensor Dataset::response(std::size_t i) const {
  const std::size_t block = y.size() / n();
  auto first = y.data().begin() + static_cast<std::ptrdiff_t>(i * block);
  return Tensor(response_dims(), std::vector<double>(first, first + static_cast<std::ptrdiff_t>(block)));
}

Dataset center(const Dataset& d) {
  if (d.n() < 2) throw DimensionError("centering needs at least 2 samples");
  Dataset out = d;
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto block = static_cast<Eigen::Index>(d.y.size()) / n;
  const Vector xm = d.x.rowwise().mean();
  out.x.colwise() -= xm;
  Eigen::Map<Matrix> ys(out.y.data().data(), block, n);
  const Vector ym = ys.rowwise().mean();
  ys.colwise() -= ym;
  out.x_mean = d.x_mean + xm;
  out.y_mean = d.y_mean;
  out.y_mean.flat() += ym;
  out.centered = true;
  return out;
}

Dataset uncenter(const Dataset& d) {
  Dataset out = d;
  const auto n = static_cast<Eigen::Index>(d.n());
  const auto block = static_cast<Eigen::Index>(d.y.size()) / n;
  out.x.colwise() += d.x_mean;
  Eigen::Map<Matrix> ys(out.y.data().data(), block, n);
  ys.colwise() += d.y_mean.flat();
  out.x_mean.setZero();
  out.y_mean.flat().setZero();
  out.centered = false;
  return out;
}

// ---------------------------------------------------------- EnvelopeBasis

EnvelopeBasis::EnvelopeBasis(std::vector<Matrix> g) : gammas(std::move(g)) {
  for (std::size_t k = 0; k < gammas.size(); ++k) {
    const Matrix& gk = gammas[k];
    if (gk.cols() > gk.rows()) throw DimensionError("envelope basis has more columns than rows");
    const Matrix gram = gk.transpose() * gk;
    if (gk.cols() > 0 &&
        (gram - Matrix::Identity(gk.cols(), gk.cols())).cwiseAbs().maxCoeff() > 1e-10)
      throw NumericalError("envelope basis for mode " + std::to_string(k) +
                           " is not semi-orthogonal");
    completions.push_back(orthogonal_complement(gk));
  }
}

Dims EnvelopeBasis::envelope_dims() const {
  Dims u;
  for (const auto& g : gammas) u.push_back(static_cast<std::size_t>(g.cols()));
  return u;
}

std::string to_string(Estimator e) {
  switch (e) {
    case Estimator::ols: return "ols";
    case Estimator::iterative: return "env-iterative";
    case Estimator::onestep: return "env-onestep";
  }
  return "?";
}

Estimator parse_estimator(const std::string& s) {
  if (s == "ols") return Estimator::ols;
  if (s == "env-iterative" || s == "iterative") return Estimator::iterative;
  if (s == "env-onestep" || s == "onestep") return Estimator::onestep;
  throw FormatError("unknown estimator '" + s + "' (expected ols, env-iterative or env-onestep)");
}

// -------------------------------------------------------- RegressionStats

RegressionStats::RegressionStats(Dataset d) : data_(std::move(d)) {
  const Matrix& x = data_.x;
  const Matrix xxt = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> es(xxt, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > 1e12)
    throw NumericalError("X X^T is singular or ill-conditioned (eigenvalues " + std::to_string(lo) +
                         " .. " + std::to_string(hi) + ")");
  Eigen::LLT<Matrix> llt(xxt);
  hat_ = llt.solve(x);
  const std::size_t m = data_.order();
  b_ols_ = mode_product(data_.y, hat_, m);
}

Matrix RegressionStats::response_gram(std::span<const Matrix> inv_lower, std::size_t k) const {
  return whitened_mode_gram(data_.y, inv_lower, k);
}

Matrix RegressionStats::response_root(std::span<const Matrix> inv_lower, std::size_t k) const {
  return whitened_mode_root(data_.y, inv_lower, k);
}

Matrix RegressionStats::residual_gram(const Tensor& b, std::span<const Matrix> inv_lower,
                                      std::size_t k) const {
  if (b.dims() != b_ols_.dims()) throw DimensionError("residual_gram: coefficient dims differ");
  return whitened_mode_gram(residuals(b), inv_lower, k);
}

Tensor RegressionStats::residuals(const Tensor& b) const {
  return data_.y - mode_product(b, data_.x.transpose(), data_.order());
}

// --------------------------------------------------------------- fitting

FitResult ols_fit(const Dataset& d, const FitOptions& opts) {
  const auto t0 = Clock::now();
  RegressionStats stats(opts.center ? center(d) : d);
  const auto ff = flip_flop_mle(stats.residuals(stats.b_ols()), std::nullopt, opts.flip_flop);
  FitResult res;
  res.estimator = Estimator::ols;
  res.b = stats.b_ols();
  res.cov = ff.cov;
  res.initial_objective = objective_l(res.b, res.cov, stats);
  res.objective_trace = {res.initial_objective};
  res.iterations = ff.sweeps;
  res.converged = ff.converged;
  res.stop_reason = ff.converged ? "covariance converged" : "covariance sweep limit";
  res.seconds = seconds_since(t0);
  return res;
}

ModeMoments compute_mn(std::size_t k, const RegressionStats& stats, const SeparableCovariance& cov,
                       std::span<const Matrix> projections) {
  const std::size_t m = stats.order();
  if (cov.order() != m || projections.size() != m || k >= m)
    throw DimensionError("compute_mn: inconsistent mode count");
  const auto inv_lower = inverse_cholesky_factors(cov.factors);
  const Tensor btilde = project_modes(stats.b_ols(), projections, k);
  const double scale = 1.0 / std::sqrt(mode_denominator(stats, k));
  ModeMoments out;
  out.m_root = scale * whitened_mode_root(stats.residuals(btilde), inv_lower, k);
  out.n_root = scale * stats.response_root(inv_lower, k);
  out.m = out.m_root.transpose() * out.m_root;
  out.n = out.n_root.transpose() * out.n_root;
  return out;
}

std::optional<Tensor> update_theta(const RegressionStats& stats, const EnvelopeBasis& basis) {
  const std::size_t m = stats.order();
  if (basis.gammas.size() != m) throw DimensionError("update_theta: basis order mismatch");
  for (const auto& g : basis.gammas)
    if (g.cols() == 0) return std::nullopt;
  Tensor z = stats.data().y;
  for (std::size_t k = 0; k < m; ++k) z = mode_product(z, basis.gammas[k].transpose(), k);
  return mode_product(z, stats.hat(), m);
}

OmegaUpdate update_omegas(const RegressionStats& stats, const EnvelopeBasis& basis,
                          const SeparableCovariance& cov_prev, const FlipFlopOptions& opts) {
  const std::size_t m = stats.order();
  if (basis.gammas.size() != m || cov_prev.order() != m)
    throw DimensionError("update_omegas: order mismatch");
  std::vector<Matrix> proj;
  for (std::size_t k = 0; k < m; ++k) proj.push_back(basis.projection(k));
  const Tensor resid = stats.residuals(project_modes(stats.b_ols(), proj));

  std::vector<Matrix> factors = cov_prev.factors;
  auto inv_lower = inverse_cholesky_factors(factors);
  OmegaUpdate out;
  out.omegas.resize(m);
  out.omega0s.resize(m);
  const double total = static_cast<double>(dims_product(stats.response_dims()));
  double prev_obj = std::numeric_limits<double>::infinity();
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double change = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const Matrix s = whitened_mode_gram(resid, inv_lower, k) / mode_denominator(stats, k);
      const Matrix& g = basis.gammas[k];
      const Matrix& g0 = basis.completions[k];
      Matrix omega = symmetrize(g.transpose() * s * g);
      Matrix omega0 = symmetrize(g0.transpose() * s * g0);
      Matrix next = symmetrize(g * omega * g.transpose() + g0 * omega0 * g0.transpose());
      Matrix linv = Matrix::Identity(next.rows(), next.cols());
      try {
        spd_cholesky(next, "mode " + std::to_string(k)).matrixL().solveInPlace(linv);
      } catch (const NumericalError&) {
        throw NumericalError("update_omegas: singular update for mode " + std::to_string(k));
      }
      change = std::max(change, (next / next.norm() - factors[k] / factors[k].norm()).norm());
      factors[k] = std::move(next);
      inv_lower[k] = std::move(linv);
      out.omegas[k] = std::move(omega);
      out.omega0s[k] = std::move(omega0);
    }
    ++out.sweeps;
    // After the last mode update the quadratic term equals n prod r, so the
    // objective reduces to the weighted log-determinants.
    double obj = total;
    for (std::size_t k = 0; k < m; ++k)
      obj += total / static_cast<double>(factors[k].rows()) * spd_log_det(factors[k]);
    const bool flat = prev_obj - obj <= opts.objective_tol * std::abs(obj);
    prev_obj = obj;
    if (m == 1 || change < opts.tol || flat) break;
  }
  return out;
}

std::pair<Tensor, SeparableCovariance> reconstruct(const EnvelopeBasis& basis, const Tensor& b_ols,
                                                   std::span<const Matrix> omegas,
                                                   std::span<const Matrix> omega0s) {
  const std::size_t m = basis.gammas.size();
  if (omegas.size() != m || omega0s.size() != m || b_ols.order() != m + 1)
    throw DimensionError("reconstruct: inconsistent mode count");
  std::vector<Matrix> proj, factors;
  for (std::size_t k = 0; k < m; ++k) {
    const Matrix& g = basis.gammas[k];
    const Matrix& g0 = basis.completions[k];
    if (omegas[k].rows() != g.cols() || omega0s[k].rows() != g0.cols())
      throw DimensionError("reconstruct: Omega shape does not match the basis of mode " +
                           std::to_string(k));
    proj.push_back(basis.projection(k));
    factors.push_back(symmetrize(g * omegas[k] * g.transpose() + g0 * omega0s[k] * g0.transpose()));
  }
  Tensor b = project_modes(b_ols, proj);
  return {std::move(b), SeparableCovariance(std::move(factors), 1.0).normalized()};
}

double objective_l(const Tensor& b, const SeparableCovariance& cov, const RegressionStats& stats) {
  if (cov.dims() != stats.response_dims()) throw DimensionError("objective_l: covariance dims differ");
  const auto inv_lower = inverse_cholesky_factors(cov.factors);
  if (b.dims() != stats.b_ols().dims()) throw DimensionError("objective_l: coefficient dims differ");
  const double quad = whitened_squared_norm(stats.residuals(b), inv_lower) / cov.tau;
  return log_det(cov) + quad / static_cast<double>(stats.n());
}

double objective_l(const Tensor& b, const SeparableCovariance& cov, const Dataset& d) {
  return objective_l(b, cov, RegressionStats(d));
}

namespace {

FitResult envelope_fit(const Dataset& d, std::span<const std::size_t> u, const FitOptions& opts,
                       bool iterate) {
  const auto t0 = Clock::now();
  RegressionStats stats(opts.center ? center(d) : d);
  const Dims r = stats.response_dims();
  const std::size_t m = r.size();
  check_envelope_dims(r, u);

  // Step 1: OLS coefficient and flip-flop covariance.
  const auto ff = flip_flop_mle(stats.residuals(stats.b_ols()), std::nullopt, opts.flip_flop);
  SeparableCovariance cov = ff.cov;

  FitResult res;
  res.estimator = iterate ? Estimator::iterative : Estimator::onestep;
  res.initial_objective = objective_l(stats.b_ols(), cov, stats);

  std::vector<Matrix> gammas(m), proj(m);
  bool trivial = true;
  for (std::size_t k = 0; k < m; ++k) trivial = trivial && (u[k] == 0 || u[k] == r[k]);

  const int max_iter = iterate ? std::max(1, opts.max_iter) : 1;
  res.stop_reason = "iteration limit";
  for (int iter = 1; iter <= max_iter; ++iter) {
    // Step 2: per-mode envelope bases.
    std::vector<Matrix> next_gammas = gammas;
    std::vector<Matrix> next_proj = proj;
    std::vector<Matrix> onestep_n_root;
    SeparableCovariance work = cov;
    if (!iterate) {
      const auto inv_lower = inverse_cholesky_factors(cov.factors);
      for (std::size_t k = 0; k < m; ++k)
        onestep_n_root.push_back(stats.response_root(inv_lower, k) /
                                 std::sqrt(mode_denominator(stats, k)));
    }
    for (std::size_t k = 0; k < m; ++k) {
      const auto rk = static_cast<Eigen::Index>(r[k]);
      const auto uk = static_cast<Eigen::Index>(u[k]);
      Matrix g;
      if (uk == 0) {
        g = Matrix(rk, 0);
      } else if (uk == rk) {
        g = Matrix::Identity(rk, rk);
      } else if (!iterate) {
        g = onestep_basis_roots(spd_root(cov.factors[k], "Sigma_k"), onestep_n_root[k], uk);
      } else {
        const ModeMoments mom = compute_mn(k, stats, work, next_proj);
        std::vector<Matrix> starts;
        if (next_gammas[k].cols() == uk) starts.push_back(next_gammas[k]);
        starts.push_back(onestep_basis_roots(mom.m_root, mom.n_root, uk));
        starts.push_back(top_eigenvectors(mom.n, uk));
        Rng rng(mix_seed(opts.seed, static_cast<std::uint64_t>(iter) * m + k, "grassmann-start"));
        for (int s = 0; s < opts.random_starts; ++s) starts.push_back(random_semi_orthogonal(rk, uk, rng));
        g = grassmann_minimize(make_envelope_objective_roots(mom.m_root, mom.n_root), starts,
                               opts.grassmann).basis;
        // profile Sigma_k at the new basis so later modes see it
        const Matrix g0 = orthogonal_complement(g);
        const Matrix a = mom.m_root * g, a0 = mom.n_root * g0;
        work.factors[k] = symmetrize(g * (a.transpose() * a) * g.transpose() +
                                     g0 * (a0.transpose() * a0) * g0.transpose());
      }
      next_proj[k] = g * g.transpose();
      next_gammas[k] = std::move(g);
    }

    // Steps 3 and 4.
    EnvelopeBasis basis(next_gammas);
    const OmegaUpdate om = update_omegas(stats, basis, work, opts.flip_flop);
    auto [b, cov_next] = reconstruct(basis, stats.b_ols(), om.omegas, om.omega0s);
    const double obj = objective_l(b, cov_next, stats);

    if (!res.objective_trace.empty()) {
      const double prev = res.objective_trace.back();
      if (obj > prev + opts.objective_slack * std::abs(prev)) {
        ++res.rejected_steps;
        res.stop_reason = "objective increased; kept previous iterate";
        break;
      }
    }
    res.b = std::move(b);
    res.cov = cov_next;
    res.model = EnvelopeModel{update_theta(stats, basis), basis, om.omegas, om.omega0s};
    res.objective_trace.push_back(obj);
    res.iterations = iter;
    gammas = std::move(next_gammas);
    proj = std::move(next_proj);
    cov = std::move(cov_next);

    if (!iterate) {
      res.converged = true;
      res.stop_reason = "single pass";
      break;
    }
    if (trivial) {
      res.converged = true;
      res.stop_reason = "no free envelope directions";
      break;
    }
    const std::size_t t = res.objective_trace.size();
    if (t >= 2) {
      const double prev = res.objective_trace[t - 2];
      if (std::abs(obj - prev) <= opts.tol * std::max(1.0, std::abs(prev))) {
        res.converged = true;
        res.stop_reason = "objective converged";
        break;
      }
    }
  }
  res.seconds = seconds_since(t0);
  return res;
}

}  // namespace

FitResult fit_iterative(const Dataset& d, std::span<const std::size_t> u, const FitOptions& opts) {
  return envelope_fit(d, u, opts, true);
}

FitResult fit_onestep(const Dataset& d, std::span<const std::size_t> u, const FitOptions& opts) {
  return envelope_fit(d, u, opts, false);
}

FitResult fit(const Dataset& d, Estimator e, std::span<const std::size_t> u, const FitOptions& opts) {
  switch (e) {
    case Estimator::ols: return ols_fit(d, opts);
    case Estimator::iterative: return fit_iterative(d, u, opts);
    case Estimator::onestep: return fit_onestep(d, u, opts);
  }
  throw Error("unknown estimator");
}

ParameterCount parameter_count(std::span<const std::size_t> r, std::span<const std::size_t> u,
                               std::size_t p) {
  if (r.size() != u.size()) throw DimensionError("parameter_count: r and u differ in length");
  ParameterCount out;
  std::uint64_t prod_r = 1, prod_u = 1, cov_full = 0, cov_env = 0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    if (u[k] > r[k]) throw DimensionError("parameter_count: u_k exceeds r_k");
    const std::uint64_t rk = r[k], uk = u[k], ck = rk - uk;
    prod_r *= rk;
    prod_u *= uk;
    cov_full += rk * (rk + 1) / 2;
    cov_env += uk * ck + uk * (uk + 1) / 2 + ck * (ck + 1) / 2;
  }
  out.full = p * prod_r + cov_full;
  out.envelope = p * prod_u + cov_env;
  out.saved = p * (prod_r - prod_u);
  return out;
}

}  // namespace tenv
