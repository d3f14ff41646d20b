#include "tenv/manifold.hpp"

#include "tenv/error.hpp"
#include "tenv/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <string_view>

namespace tenv {

namespace {

struct RunResult {
  Matrix basis;
  double value;
  int iterations;
};

RunResult descend(const GrassmannObjective& obj, Matrix g, const GrassmannOptions& opts) {
  double f = obj.value(g);
  double step = 1.0;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    const Matrix egrad = obj.gradient(g);
    const Matrix xi = egrad - g * (g.transpose() * egrad);
    const double xi2 = xi.squaredNorm();
    if (!(xi2 > 1e-28)) break;
    // Let the step grow back after a run of accepted full steps.
    step = std::min(1.0, step * 2.0);
    bool accepted = false;
    Matrix cand;
    double fc = 0.0;
    for (int bt = 0; bt < opts.max_backtracks; ++bt) {
      cand = orthonormalize(g - step * xi);
      try {
        fc = obj.value(cand);
      } catch (const NumericalError&) {
        fc = std::numeric_limits<double>::infinity();
      }
      if (fc <= f - opts.slope * step * xi2) {
        accepted = true;
        break;
      }
      step *= opts.shrink;
    }
    if (!accepted) break;
    const double change = f - fc;
    g = std::move(cand);
    f = fc;
    if (change <= opts.tol * std::max(1.0, std::abs(f))) {
      ++it;
      break;
    }
  }
  return {std::move(g), f, it};
}

}  // namespace

GrassmannResult grassmann_minimize(const GrassmannObjective& objective,
                                   std::span<const Matrix> starts,
                                   const GrassmannOptions& opts) {
  if (starts.empty()) throw DimensionError("grassmann_minimize: no starting values");
  GrassmannResult best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < starts.size(); ++s) {
    if (starts[s].cols() > starts[s].rows())
      throw DimensionError("grassmann_minimize: start has more columns than rows");
    auto run = descend(objective, orthonormalize(starts[s]), opts);
    best.iterations += run.iterations;
    if (run.value < best.value || s == 0) {
      best.value = run.value;
      best.basis = std::move(run.basis);
      best.best_start = s;
    }
  }
  return best;
}

namespace {

// For a tall y = Q T: log|y^T y| and y (y^T y)^-1 = Q T^-T.
struct GramTerms {
  double log_det;
  Matrix dual;
};

GramTerms gram_terms(const Matrix& y, std::string_view what) {
  const Eigen::Index u = y.cols();
  Eigen::HouseholderQR<Matrix> qr(y);
  const auto d = qr.matrixQR().diagonal().cwiseAbs();
  if (!(d.minCoeff() > 0.0) || !d.allFinite())
    throw NumericalError(std::string(what) + " is not positive definite");
  const Matrix q = qr.householderQ() * Matrix::Identity(y.rows(), u);
  const Matrix t = qr.matrixQR().topRows(u).triangularView<Eigen::Upper>();
  Matrix dual = t.triangularView<Eigen::Upper>().solve(q.transpose()).transpose();
  return {2.0 * d.array().log().sum(), std::move(dual)};
}

void check_root(const Matrix& r, std::string_view what) {
  if (r.rows() != r.cols()) throw DimensionError(std::string(what) + " root is not square");
  const auto d = r.diagonal().cwiseAbs();
  if (r.rows() > 0 && (!(d.minCoeff() > 0.0) || !r.allFinite()))
    throw NumericalError(std::string(what) + " is not positive definite");
}

}  // namespace

double envelope_objective_fk(const Matrix& g, const Matrix& m, const Matrix& n) {
  if (g.rows() != m.rows() || m.rows() != n.rows())
    throw DimensionError("envelope objective: dimension mismatch");
  return make_envelope_objective(m, n).value(g);
}

GrassmannObjective make_envelope_objective(const Matrix& m, const Matrix& n) {
  if (m.rows() != n.rows()) throw DimensionError("envelope objective: dimension mismatch");
  return make_envelope_objective_roots(spd_root(m, "M_k"), spd_root(n, "N_k"));
}

GrassmannObjective make_envelope_objective_roots(const Matrix& m_root, const Matrix& n_root) {
  if (m_root.rows() != n_root.rows()) throw DimensionError("envelope objective: dimension mismatch");
  check_root(m_root, "M_k");
  check_root(n_root, "N_k");
  // G^T M G = |Rm G|^2 and G^T N^-1 G = |Rn^-T G|^2
  auto inv_t = [n_root](const Matrix& g) -> Matrix {
    return n_root.transpose().triangularView<Eigen::Lower>().solve(g);
  };
  GrassmannObjective obj;
  obj.value = [m_root, inv_t](const Matrix& g) {
    return gram_log_det(m_root * g, "G^T M G") + gram_log_det(inv_t(g), "G^T N^-1 G");
  };
  obj.gradient = [m_root, n_root, inv_t](const Matrix& g) -> Matrix {
    const GramTerms a = gram_terms(m_root * g, "G^T M G");
    const GramTerms b = gram_terms(inv_t(g), "G^T N^-1 G");
    return 2.0 * (m_root.transpose() * a.dual) +
           2.0 * Matrix(n_root.triangularView<Eigen::Upper>().solve(b.dual));
  };
  return obj;
}

double sphere_objective(const Vector& w, const Matrix& a, const Matrix& b_inv) {
  return std::log(w.dot(a * w)) + std::log(w.dot(b_inv * w));
}

namespace {

// log|Ra w|^2 + log|Rb^-T w|^2
double sphere_objective_roots(const Vector& w, const Matrix& ra, const Matrix& rb) {
  const Vector v = rb.transpose().triangularView<Eigen::Lower>().solve(w);
  return std::log((ra * w).squaredNorm()) + std::log(v.squaredNorm());
}

Matrix right_singular_vectors(const Matrix& a) {
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("sphere_minimize: SVD failed");
  return svd.matrixV();
}

}  // namespace

Vector sphere_minimize(const Matrix& a, const Matrix& b) {
  if (b.rows() != a.rows() || a.cols() != a.rows() || b.cols() != a.rows())
    throw DimensionError("sphere_minimize: dimension mismatch");
  return sphere_minimize_roots(spd_root(a, "A"), spd_root(b, "B"));
}

Vector sphere_minimize_roots(const Matrix& ra, const Matrix& rb) {
  const Eigen::Index d = ra.rows();
  if (rb.rows() != d) throw DimensionError("sphere_minimize: dimension mismatch");
  check_root(ra, "A");
  check_root(rb, "B");
  if (d == 1) return Vector::Ones(1);

  // Eigenvectors of A, B and A + B are right singular vectors of the roots.
  Matrix stacked(2 * d, d);
  stacked << ra, rb;
  const Matrix cands[] = {right_singular_vectors(ra), right_singular_vectors(rb),
                          right_singular_vectors(stacked)};

  // Score every candidate and refine the most promising few.
  constexpr int kMaxIter = 300;
  constexpr std::size_t kRefine = 8;
  std::vector<std::pair<double, Vector>> starts;
  for (const auto& set : cands)
    for (Eigen::Index c = 0; c < d; ++c) {
      Vector w = set.col(c).normalized();
      starts.emplace_back(sphere_objective_roots(w, ra, rb), std::move(w));
    }
  const std::size_t keep = std::min(kRefine, starts.size());
  std::partial_sort(starts.begin(), starts.begin() + static_cast<std::ptrdiff_t>(keep), starts.end(),
                    [](const auto& x, const auto& y) { return x.first < y.first; });

  Vector best;
  double best_f = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < keep; ++s) {
    auto [f, w] = starts[s];
    double step = 1.0;
    for (int it = 0; it < kMaxIter; ++it) {
      const Vector aw = ra * w;
      const Vector v = rb.transpose().triangularView<Eigen::Lower>().solve(w);
      const Vector bw = rb.triangularView<Eigen::Upper>().solve(v);
      const Vector grad = 2.0 * (ra.transpose() * aw) / aw.squaredNorm() + 2.0 * bw / v.squaredNorm();
      const Vector xi = grad - w.dot(grad) * w;
      const double xi2 = xi.squaredNorm();
      if (!(xi2 > 1e-24)) break;
      step = std::min(1.0, step * 2.0);
      bool accepted = false;
      Vector cand;
      double fc = 0.0;
      for (int bt = 0; bt < 60; ++bt) {
        cand = (w - step * xi).normalized();
        fc = sphere_objective_roots(cand, ra, rb);
        if (fc <= f - 1e-4 * step * xi2) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      const double change = f - fc;
      w = cand;
      f = fc;
      if (change <= 1e-15 * std::max(1.0, std::abs(f))) break;
    }
    if (f < best_f) {
      best_f = f;
      best = w;
    }
  }
  return best;
}

Matrix onestep_basis(const Matrix& sigma, const Matrix& n, Eigen::Index u) {
  const Eigen::Index r = sigma.rows();
  if (sigma.cols() != r || n.rows() != r || n.cols() != r)
    throw DimensionError("onestep_basis: dimension mismatch");
  if (u < 0 || u > r) throw DimensionError("onestep_basis: envelope dimension out of range");
  return onestep_basis_roots(spd_root(sigma, "Sigma_k"), spd_root(n, "N_k"), u);
}

Matrix onestep_basis_roots(const Matrix& sigma_root, const Matrix& n_root, Eigen::Index u) {
  const Eigen::Index r = sigma_root.rows();
  if (sigma_root.cols() != r || n_root.rows() != r || n_root.cols() != r)
    throw DimensionError("onestep_basis: dimension mismatch");
  if (u < 0 || u > r) throw DimensionError("onestep_basis: envelope dimension out of range");
  check_root(sigma_root, "Sigma_k");
  check_root(n_root, "N_k");
  Matrix g(r, u);
  for (Eigen::Index s = 0; s < u; ++s) {
    const Matrix g0 = orthogonal_complement(g.leftCols(s));
    const Vector w = sphere_minimize_roots(gram_root(sigma_root * g0), gram_root(n_root * g0));
    g.col(s) = (g0 * w).normalized();
  }
  return u > 0 ? orthonormalize(g) : g;
}

}  // namespace tenv
