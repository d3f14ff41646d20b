#include "tenv/covariance.hpp"

#include "tenv/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace tenv {

namespace {

void check_factor(const Matrix& s, std::size_t k) {
  const std::string what = "covariance factor " + std::to_string(k);
  if (s.rows() != s.cols() || s.rows() == 0) throw DimensionError(what + " is not square");
  const double scale = std::max(1.0, s.cwiseAbs().maxCoeff());
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw NumericalError(what + " is not symmetric");
  spd_cholesky(s, what);
}

// Represented covariance orders the sample-mode-free part of `stack`.
std::size_t sample_count(const Tensor& stack, std::size_t m) {
  if (stack.order() == m) return 1;
  if (stack.order() == m + 1) return stack.dim(m);
  throw DimensionError("residual stack order " + std::to_string(stack.order()) +
                       " does not match covariance order " + std::to_string(m));
}

void check_leading_dims(const Tensor& t, const Dims& dims) {
  if (t.order() < dims.size() || t.order() > dims.size() + 1)
    throw DimensionError("tensor order does not match covariance order");
  for (std::size_t k = 0; k < dims.size(); ++k)
    if (t.dim(k) != dims[k]) throw DimensionError("tensor dims do not match covariance dims");
}

}  // namespace

SeparableCovariance::SeparableCovariance(std::vector<Matrix> f, double t)
    : factors(std::move(f)), tau(t) {
  if (factors.empty()) throw DimensionError("separable covariance needs at least one factor");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw NumericalError("covariance scale must be positive");
  for (std::size_t k = 0; k < factors.size(); ++k) check_factor(factors[k], k);
}

SeparableCovariance SeparableCovariance::identity(const Dims& dims) {
  std::vector<Matrix> f;
  double tau = 1.0;
  for (auto r : dims) {
    const double s = std::sqrt(static_cast<double>(r));
    f.push_back(Matrix::Identity(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)) / s);
    tau *= s;
  }
  return SeparableCovariance(std::move(f), tau);
}

Dims SeparableCovariance::dims() const {
  Dims d;
  for (const auto& f : factors) d.push_back(static_cast<std::size_t>(f.rows()));
  return d;
}

Matrix SeparableCovariance::dense() const {
  std::vector<Matrix> rev(factors.rbegin(), factors.rend());
  return tau * kron(rev);
}

SeparableCovariance SeparableCovariance::normalized() const {
  SeparableCovariance out = *this;
  for (auto& f : out.factors) {
    const double c = f.norm();
    f /= c;
    out.tau *= c;
  }
  return out;
}

CholeskyFactors cholesky(const SeparableCovariance& cov) {
  CholeskyFactors out;
  out.sqrt_tau = std::sqrt(cov.tau);
  for (std::size_t k = 0; k < cov.factors.size(); ++k)
    out.lower.push_back(
        spd_cholesky(cov.factors[k], "covariance factor " + std::to_string(k)).matrixL());
  return out;
}

std::vector<Matrix> inverse_cholesky_factors(std::span<const Matrix> factors) {
  std::vector<Matrix> out;
  out.reserve(factors.size());
  for (std::size_t k = 0; k < factors.size(); ++k) {
    const auto llt = spd_cholesky(factors[k], "covariance factor " + std::to_string(k));
    Matrix linv = Matrix::Identity(factors[k].rows(), factors[k].cols());
    llt.matrixL().solveInPlace(linv);
    out.push_back(std::move(linv));
  }
  return out;
}

namespace {

// Applies the square matrix c along mode j of one column-major block with
// extents `dims`, writing into `out` (same size, no aliasing).
void apply_mode(const double* in, double* out, const Dims& dims, std::size_t j, const Matrix& c) {
  std::size_t left = 1, right = 1;
  for (std::size_t l = 0; l < j; ++l) left *= dims[l];
  for (std::size_t l = j + 1; l < dims.size(); ++l) right *= dims[l];
  const auto L = static_cast<Eigen::Index>(left), R = static_cast<Eigen::Index>(right);
  const auto r = static_cast<Eigen::Index>(dims[j]);
  if (left == 1) {
    Eigen::Map<Matrix>(out, r, R).noalias() = c * Eigen::Map<const Matrix>(in, r, R);
    return;
  }
  for (Eigen::Index b = 0; b < R; ++b)
    Eigen::Map<Matrix>(out + b * L * r, L, r).noalias() =
        Eigen::Map<const Matrix>(in + b * L * r, L, r) * c.transpose();
}

}  // namespace

namespace {

// Calls visit(unfolding) once per sample with the whitened sample's mode-k
// unfolding transposed, as an (block / r_k) x r_k matrix expression. The
// whitening of modes j != k goes through two reusable buffers.
template <class Visit>
void for_each_whitened(const Tensor& stack, std::span<const Matrix> inv_lower, std::size_t k,
                       const char* caller, Visit&& visit) {
  const std::size_t m = inv_lower.size();
  if (k >= m || stack.order() < m || stack.order() > m + 1)
    throw DimensionError(std::string(caller) + ": bad mode");
  const Dims dims(stack.dims().begin(), stack.dims().begin() + static_cast<std::ptrdiff_t>(m));
  for (std::size_t j = 0; j < m; ++j)
    if (j != k && static_cast<std::size_t>(inv_lower[j].cols()) != dims[j])
      throw DimensionError(std::string(caller) + ": factor size does not match mode " + std::to_string(j));
  const std::size_t block = dims_product(dims);
  const std::size_t n = stack.order() == m ? 1 : stack.dim(m);
  std::size_t left = 1, right = 1;
  for (std::size_t l = 0; l < k; ++l) left *= dims[l];
  for (std::size_t l = k + 1; l < m; ++l) right *= dims[l];
  const auto L = static_cast<Eigen::Index>(left), R = static_cast<Eigen::Index>(right);
  const auto rk = static_cast<Eigen::Index>(dims[k]);

  std::vector<double> buf_a(m > 1 ? block : 0), buf_b(m > 2 ? block : 0);
  Matrix slab;
  for (std::size_t i = 0; i < n; ++i) {
    const double* src = stack.data().data() + i * block;
    bool into_a = true;
    for (std::size_t j = 0; j < m; ++j) {
      if (j == k) continue;
      double* dst = into_a ? buf_a.data() : buf_b.data();
      apply_mode(src, dst, dims, j, inv_lower[j]);
      src = dst;
      into_a = !into_a;
    }
    if (k == 0) {
      visit(Eigen::Map<const Matrix>(src, rk, R).transpose());
    } else if (R == 1) {
      visit(Eigen::Map<const Matrix>(src, L, rk));
    } else {
      slab.resize(L * R, rk);
      for (Eigen::Index b = 0; b < R; ++b) slab.middleRows(b * L, L) = Eigen::Map<const Matrix>(src + b * L * rk, L, rk);
      visit(slab);
    }
  }
}

}  // namespace

Matrix whitened_mode_gram(const Tensor& stack, std::span<const Matrix> inv_lower,
                          std::size_t k) {
  Matrix gram;
  for_each_whitened(stack, inv_lower, k, "whitened_mode_gram", [&](const auto& ct) {
    if (gram.size() == 0) gram = Matrix::Zero(ct.cols(), ct.cols());
    gram.selfadjointView<Eigen::Lower>().rankUpdate(ct.transpose());
  });
  const auto rk = static_cast<Eigen::Index>(stack.dim(k));
  if (gram.size() == 0) return Matrix::Zero(rk, rk);
  return gram.selfadjointView<Eigen::Lower>();
}

Matrix whitened_mode_root(const Tensor& stack, std::span<const Matrix> inv_lower, std::size_t k) {
  Matrix root, tall;
  for_each_whitened(stack, inv_lower, k, "whitened_mode_root", [&](const auto& ct) {
    const Eigen::Index rk = ct.cols();
    if (root.size() == 0) root = Matrix::Zero(rk, rk);
    tall.resize(rk + ct.rows(), rk);
    tall.topRows(rk) = root;
    tall.bottomRows(ct.rows()) = ct;
    root = gram_root(tall);
  });
  const auto rk = static_cast<Eigen::Index>(stack.dim(k));
  if (root.size() == 0) return Matrix::Zero(rk, rk);
  return root;
}

double whitened_squared_norm(const Tensor& stack, std::span<const Matrix> inv_lower) {
  const Matrix g = whitened_mode_gram(stack, inv_lower, 0);
  return (inv_lower[0] * g * inv_lower[0].transpose()).trace();
}

SeparableCovariance normalize_and_tau(std::span<const Matrix> factors, const Tensor& stack) {
  const std::size_t m = factors.size();
  const std::size_t n = sample_count(stack, m);
  std::vector<Matrix> unit;
  for (std::size_t k = 0; k < m; ++k) {
    const double c = factors[k].norm();
    if (!(c > 0.0)) throw NumericalError("zero covariance factor " + std::to_string(k));
    unit.push_back(factors[k] / c);
  }
  Dims dims;
  for (const auto& f : unit) dims.push_back(static_cast<std::size_t>(f.rows()));
  check_leading_dims(stack, dims);
  const auto inv_lower = inverse_cholesky_factors(unit);
  const double tau = whitened_squared_norm(stack, inv_lower) / static_cast<double>(n * dims_product(dims));
  if (!(tau > 0.0)) throw NumericalError("covariance scale is zero");
  return SeparableCovariance(std::move(unit), tau);
}

FlipFlopResult flip_flop_mle(const Tensor& stack, const std::optional<SeparableCovariance>& init,
                             const FlipFlopOptions& opts) {
  if (stack.order() < 2)
    throw DimensionError("flip_flop_mle: residual stack needs a trailing sample mode");
  const std::size_t m = stack.order() - 1;
  const std::size_t n = stack.dim(m);
  Dims dims(stack.dims().begin(), stack.dims().end() - 1);
  const std::size_t total = dims_product(dims);
  for (std::size_t k = 0; k < m; ++k)
    if (n * (total / dims[k]) < dims[k])
      throw NumericalError("flip_flop_mle: too few samples for mode " + std::to_string(k));

  std::vector<Matrix> factors;
  if (init) {
    if (init->dims() != dims) throw DimensionError("flip_flop_mle: initial covariance dims differ");
    factors = init->factors;
  } else {
    for (auto r : dims)
      factors.push_back(Matrix::Identity(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)));
  }
  auto inv_lower = inverse_cholesky_factors(factors);

  FlipFlopResult res;
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    double change = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double denom = static_cast<double>(n * (total / dims[k]));
      Matrix next = whitened_mode_gram(stack, inv_lower, k) / denom;
      Matrix linv = Matrix::Identity(next.rows(), next.cols());
      try {
        spd_cholesky(next, "mode " + std::to_string(k)).matrixL().solveInPlace(linv);
      } catch (const NumericalError&) {
        throw NumericalError("flip_flop_mle: singular update for mode " + std::to_string(k));
      }
      const Matrix prev_unit = factors[k] / factors[k].norm();
      const Matrix next_unit = next / next.norm();
      change = std::max(change, (next_unit - prev_unit).norm());
      factors[k] = std::move(next);
      inv_lower[k] = std::move(linv);
    }
    ++res.sweeps;
    // Right after updating the last factor the quadratic term equals n prod r.
    double ld = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      ld += static_cast<double>(total / dims[k]) * spd_log_det(factors[k]);
    res.objective.push_back(ld + static_cast<double>(total));
    const std::size_t t = res.objective.size();
    const bool flat = t >= 2 && res.objective[t - 2] - res.objective[t - 1] <=
                                    opts.objective_tol * std::abs(res.objective[t - 1]);
    if (m == 1 || change < opts.tol || flat) {
      res.converged = true;
      break;
    }
  }
  res.raw_factors = factors;
  res.cov = normalize_and_tau(factors, stack);
  return res;
}

FlipFlopResult flip_flop_mle(std::span<const Tensor> residuals,
                             const std::optional<SeparableCovariance>& init,
                             const FlipFlopOptions& opts) {
  if (residuals.empty()) throw DimensionError("flip_flop_mle: no residuals");
  Dims dims = residuals[0].dims();
  const std::size_t block = residuals[0].size();
  dims.push_back(residuals.size());
  Tensor stack(dims);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    if (residuals[i].dims() != residuals[0].dims())
      throw DimensionError("flip_flop_mle: residual dims differ");
    std::copy(residuals[i].data().begin(), residuals[i].data().end(),
              stack.data().begin() + static_cast<std::ptrdiff_t>(i * block));
  }
  return flip_flop_mle(stack, init, opts);
}

Tensor whiten_apply(const Tensor& t, const SeparableCovariance& cov,
                    std::optional<std::size_t> exclude_mode) {
  const Dims dims = cov.dims();
  check_leading_dims(t, dims);
  Tensor out = t;
  for (std::size_t j = 0; j < dims.size(); ++j) {
    if (exclude_mode && *exclude_mode == j) continue;
    out = mode_product(out, spd_inverse(cov.factors[j], "covariance factor " + std::to_string(j)), j);
  }
  if (!exclude_mode) out *= 1.0 / cov.tau;
  return out;
}

double log_det(const SeparableCovariance& cov) {
  const Dims dims = cov.dims();
  const auto total = static_cast<double>(dims_product(dims));
  double ld = total * std::log(cov.tau);
  for (std::size_t k = 0; k < dims.size(); ++k)
    ld += total / static_cast<double>(dims[k]) * spd_log_det(cov.factors[k]);
  return ld;
}

Tensor sample_matrix_normal(const Dims& dims, const SeparableCovariance& cov, Rng& rng) {
  if (dims != cov.dims()) throw DimensionError("sample_matrix_normal: dims do not match covariance");
  Tensor stack = sample_matrix_normal_stack(cov, 1, rng);
  return Tensor(dims, std::vector<double>(stack.data().begin(), stack.data().end()));
}

Tensor sample_matrix_normal_stack(const SeparableCovariance& cov, std::size_t n, Rng& rng) {
  const auto chol = cholesky(cov);
  Dims dims = cov.dims();
  dims.push_back(n);
  Tensor z(dims);
  std::normal_distribution<double> normal;
  for (auto& v : z.data()) v = normal(rng);
  for (std::size_t k = 0; k < chol.lower.size(); ++k) z = mode_product(z, chol.lower[k], k);
  z *= chol.sqrt_tau;
  return z;
}

}  // namespace tenv
