#pragma once

#include "tenv/tensor.hpp"

#include <functional>
#include <span>

namespace tenv {

/// Smooth objective on r x u matrices with orthonormal columns. `gradient`
/// returns the Euclidean gradient; the optimizer projects it onto the tangent
/// space itself.
struct GrassmannObjective {
  std::function<double(const Matrix&)> value;
  std::function<Matrix(const Matrix&)> gradient;
};

struct GrassmannOptions {
  int max_iter = 500;
  double tol = 1e-8;     ///< relative objective change that ends a run
  double shrink = 0.5;   ///< Armijo backtracking factor
  double slope = 1e-4;   ///< Armijo sufficient-decrease constant
  int max_backtracks = 60;
};

struct GrassmannResult {
  Matrix basis;
  double value = 0.0;
  std::size_t best_start = 0;
  int iterations = 0;  ///< summed over starts
};

/// Projected-gradient descent with a QR retraction and Armijo backtracking,
/// run from every start. Returns the lowest end point; its value is never
/// above the value at any start.
GrassmannResult grassmann_minimize(const GrassmannObjective& objective,
                                   std::span<const Matrix> starts,
                                   const GrassmannOptions& opts = {});

/// log|G^T M G| + log|G^T N^-1 G| for semi-orthogonal G. Throws
/// NumericalError when either Gram matrix is not positive definite.
double envelope_objective_fk(const Matrix& g, const Matrix& m, const Matrix& n);

/// The same objective with its gradient.
GrassmannObjective make_envelope_objective(const Matrix& m, const Matrix& n);

/// The same objective from upper-triangular roots, M = Rm^T Rm and
/// N = Rn^T Rn. Every determinant and solve goes through the roots, so the
/// objective stays accurate when N is too ill conditioned to invert.
GrassmannObjective make_envelope_objective_roots(const Matrix& m_root, const Matrix& n_root);

/// Approximate minimizer over unit vectors of log(w^T A w) + log(w^T B^-1 w).
/// Candidate starts are all eigenvectors of A, B and A + B; the eight with
/// the lowest objective are refined by projected gradient with
/// renormalization and the best end point wins.
Vector sphere_minimize(const Matrix& a, const Matrix& b);

/// sphere_minimize from upper-triangular roots of A and B.
Vector sphere_minimize_roots(const Matrix& a_root, const Matrix& b_root);

/// Objective minimized by sphere_minimize.
double sphere_objective(const Vector& w, const Matrix& a, const Matrix& b_inv);

/// Sequential direction-by-direction minimizer of
/// log|G^T S G| + log|G^T N^-1 G|: each new column is the best unit direction
/// inside the orthogonal complement of the columns found so far. Returns an
/// r x u matrix with orthonormal columns.
Matrix onestep_basis(const Matrix& sigma, const Matrix& n, Eigen::Index u);

/// onestep_basis from upper-triangular roots of sigma and n.
Matrix onestep_basis_roots(const Matrix& sigma_root, const Matrix& n_root, Eigen::Index u);

}  // namespace tenv
