#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "subprune/matrix.hpp"

namespace subprune {

/// Default tolerance for rank and residual tests, relative to a column's own norm.
inline constexpr double kDefaultRankTol = 1e-10;

struct RankReport {
  std::size_t numerical_rank = 0;
  double singular_tolerance = 0.0;
  std::size_t column_count = 0;
};

/// Output of orthonormalize_with_tol.
///
/// `basis` is rows x q with orthonormal columns, `coeffs` is q x kept.size()
/// and upper triangular, so that cols[:, kept] == basis * coeffs.
struct Orthonormalization {
  Matrix basis;
  Matrix coeffs;
  std::vector<std::size_t> kept;
};

/// OpenMP-parallel product over output rows. Each output entry is summed in
/// the same order as the serial reference, so results are bitwise identical
/// for any thread count.
Matrix matmul(const Matrix& a, const Matrix& b);
/// a^T * b without materializing the transpose.
Matrix matmul_at_b(const Matrix& a, const Matrix& b);

double frob_norm_sq(const Matrix& a);
double dot(std::span<const double> x, std::span<const double> y);
double norm_sq(std::span<const double> x);

Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

/// Modified Gram-Schmidt with one reorthogonalization pass, columns processed
/// in order. Column j is dropped when its residual norm is <= tol * ref_norm_j,
/// where ref_norm_j is the column's own norm unless `ref_norms` is given.
Orthonormalization orthonormalize_with_tol(const Matrix& cols, double tol,
                                           std::span<const double> ref_norms = {});

/// Rank by pivoted Gram-Schmidt: repeatedly takes the column with the largest
/// remaining residual and stops once every residual is <= tol * own norm.
RankReport numerical_rank(const Matrix& a, double tol = kDefaultRankTol);

namespace serial {
/// Plain i-k-j triple loop; reference for matmul.
Matrix matmul(const Matrix& a, const Matrix& b);
}  // namespace serial

}  // namespace subprune
