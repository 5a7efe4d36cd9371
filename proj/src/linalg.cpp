#include "subprune/linalg.hpp"

#include <omp.h>

#include <cmath>

#include "subprune/parallel.hpp"

namespace subprune {
namespace {

void require_product_shapes(const Matrix& a, const Matrix& b, const char* what) {
  if (a.cols() != b.rows()) {
    throw ShapeError(std::string(what) + ": cannot multiply " + a.shape_string() + " by " +
                     b.shape_string());
  }
}

void require_same_shape(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("elementwise op on " + a.shape_string() + " and " + b.shape_string());
  }
}

// out_row += sum_k a_row[k] * b.row(k), k ascending.
inline void accumulate_row(std::span<const double> a_row, const Matrix& b, double* out_row) {
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a_row.size(); ++k) {
    const double aik = a_row[k];
    const double* b_row = b.data().data() + k * n;
    for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
  }
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_product_shapes(a, b, "matmul");
  Matrix out(a.rows(), b.cols());
  const auto rows = static_cast<std::ptrdiff_t>(a.rows());
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (rows > 16)
  for (std::ptrdiff_t i = 0; i < rows; ++i) {
    accumulate_row(a.row(static_cast<std::size_t>(i)), b,
                   out.data().data() + static_cast<std::size_t>(i) * b.cols());
  }
  return out;
}

Matrix matmul_at_b(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_at_b: row mismatch " + a.shape_string() + " vs " + b.shape_string());
  }
  Matrix out(a.cols(), b.cols());
  const auto cols = static_cast<std::ptrdiff_t>(a.cols());
#pragma omp parallel for schedule(static) num_threads(thread_count()) if (cols > 16)
  for (std::ptrdiff_t i = 0; i < cols; ++i) {
    double* out_row = out.data().data() + static_cast<std::size_t>(i) * b.cols();
    for (std::size_t r = 0; r < a.rows(); ++r) {
      const double ari = a(r, static_cast<std::size_t>(i));
      auto b_row = b.row(r);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += ari * b_row[j];
    }
  }
  return out;
}

namespace serial {
Matrix matmul(const Matrix& a, const Matrix& b) {
  require_product_shapes(a, b, "matmul");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}
}  // namespace serial

double frob_norm_sq(const Matrix& a) { return norm_sq(a.data()); }

double dot(std::span<const double> x, std::span<const double> y) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

double norm_sq(std::span<const double> x) { return dot(x, x); }

Matrix operator-(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
  return out;
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b);
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

Orthonormalization orthonormalize_with_tol(const Matrix& cols, double tol,
                                           std::span<const double> ref_norms) {
  if (!(tol > 0.0)) throw std::invalid_argument("orthonormalize_with_tol: tol must be positive");
  if (!ref_norms.empty() && ref_norms.size() != cols.cols()) {
    throw ShapeError("orthonormalize_with_tol: reference norm count mismatch");
  }
  const std::size_t n = cols.rows();
  std::vector<std::vector<double>> basis;
  std::vector<std::vector<double>> coeff_cols;
  std::vector<std::size_t> kept;

  for (std::size_t j = 0; j < cols.cols(); ++j) {
    std::vector<double> v = cols.column(j);
    const double ref = ref_norms.empty() ? std::sqrt(norm_sq(v)) : ref_norms[j];
    std::vector<double> c(basis.size() + 1, 0.0);
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < basis.size(); ++i) {
        const double h = dot(basis[i], v);
        axpy(-h, basis[i], v);
        c[i] += h;
      }
    }
    const double nv = std::sqrt(norm_sq(v));
    if (nv <= tol * ref || nv == 0.0) continue;
    for (double& x : v) x /= nv;
    c.back() = nv;
    basis.push_back(std::move(v));
    coeff_cols.push_back(std::move(c));
    kept.push_back(j);
  }

  Orthonormalization out;
  const std::size_t q = basis.size();
  out.basis = Matrix(n, q);
  for (std::size_t i = 0; i < q; ++i) out.basis.set_column(i, basis[i]);
  out.coeffs = Matrix(q, q);
  for (std::size_t j = 0; j < q; ++j)
    for (std::size_t i = 0; i < coeff_cols[j].size(); ++i) out.coeffs(i, j) = coeff_cols[j][i];
  out.kept = std::move(kept);
  return out;
}

RankReport numerical_rank(const Matrix& a, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("numerical_rank: tol must be positive");
  const std::size_t m = a.cols();
  std::vector<std::vector<double>> resid(m);
  std::vector<double> own(m);
  std::vector<bool> active(m, true);
  for (std::size_t j = 0; j < m; ++j) {
    resid[j] = a.column(j);
    own[j] = std::sqrt(norm_sq(resid[j]));
  }
  std::vector<std::vector<double>> basis;

  for (;;) {
    std::size_t best = m;
    double best_norm = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      if (!active[j]) continue;
      const double nr = std::sqrt(norm_sq(resid[j]));
      if (nr <= tol * own[j] || nr == 0.0) {
        active[j] = false;
        continue;
      }
      if (nr > best_norm) {
        best_norm = nr;
        best = j;
      }
    }
    if (best == m) break;
    active[best] = false;
    std::vector<double> q = resid[best];
    for (const auto& b : basis) axpy(-dot(b, q), b, q);  // reorthogonalize
    const double nq = std::sqrt(norm_sq(q));
    if (nq <= tol * own[best] || nq == 0.0) continue;
    for (double& x : q) x /= nq;
    for (std::size_t j = 0; j < m; ++j)
      if (active[j]) axpy(-dot(q, resid[j]), q, resid[j]);
    basis.push_back(std::move(q));
  }
  return RankReport{basis.size(), tol, m};
}

}  // namespace subprune
