#pragma once

#include "tenv/tensor.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace tenv {

using Rng = std::mt19937_64;

/// 64-bit avalanche mix (splitmix64 finalizer) of a master seed, a
/// replication index and a stream label. Used to derive independent,
/// reproducible generator streams.
std::uint64_t mix_seed(std::uint64_t master, std::uint64_t index, std::string_view label);

/// Cholesky factor of a symmetric positive-definite matrix. If the first
/// attempt fails, retries once with jitter 1e-10 * trace / r on the diagonal;
/// a second failure raises NumericalError naming `what`.
Eigen::LLT<Matrix> spd_cholesky(const Matrix& s, std::string_view what = "matrix");

Matrix spd_inverse(const Matrix& s, std::string_view what = "matrix");
double spd_log_det(const Matrix& s, std::string_view what = "matrix");

/// Upper-triangular R with R^T R = a^T a, from a Householder QR of a. Rows
/// of R are sign-normalized so the diagonal is non-negative.
Matrix gram_root(const Matrix& a);

/// Upper-triangular root R = L^T of a symmetric positive-definite s.
Matrix spd_root(const Matrix& s, std::string_view what = "matrix");

/// log|a^T a| for a full-column-rank a, from the diagonal of its QR factor.
/// Throws NumericalError naming `what` when a is rank deficient.
double gram_log_det(const Matrix& a, std::string_view what = "matrix");

/// (s + s^T) / 2.
Matrix symmetrize(const Matrix& s);

/// Orthonormal basis of span(a) via Householder QR with a positive diagonal
/// convention; a must have full column rank.
Matrix orthonormalize(const Matrix& a);

/// Orthonormal basis of the orthogonal complement of span(g), g semi-orthogonal.
Matrix orthogonal_complement(const Matrix& g);

/// Eigenvectors of a symmetric matrix for its u largest eigenvalues,
/// ordered by decreasing eigenvalue.
Matrix top_eigenvectors(const Matrix& s, Eigen::Index u);

/// Largest principal angle (radians) between span(inner) and its projection
/// onto span(outer). Zero iff span(inner) is contained in span(outer).
double containment_angle(const Matrix& inner, const Matrix& outer);

/// Principal angles between two subspaces, ascending.
Vector principal_angles(const Matrix& a, const Matrix& b);

/// Uniformly random r x u matrix with orthonormal columns.
Matrix random_semi_orthogonal(Eigen::Index r, Eigen::Index u, Rng& rng);

}  // namespace tenv
