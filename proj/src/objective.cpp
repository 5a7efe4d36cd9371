#include "subprune/objective.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "subprune/linalg.hpp"

namespace subprune {
namespace {

std::atomic<bool> g_gain_fault{false};

void axpy(double alpha, const std::vector<double>& x, std::vector<double>& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Columns to_columns(const Matrix& m) {
  Columns out(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = m.column(j);
  return out;
}

// Solves the upper-triangular system R x = h where column p of R is rcols[p]
// (entries 0..p).
std::vector<double> back_substitute(const Columns& rcols, std::vector<double> h) {
  for (std::size_t p = h.size(); p-- > 0;) {
    h[p] /= rcols[p][p];
    for (std::size_t i = 0; i < p; ++i) h[i] -= rcols[p][i] * h[p];
  }
  return h;
}

std::vector<double> back_substitute(const Matrix& c, std::vector<double> h) {
  for (std::size_t p = h.size(); p-- > 0;) {
    h[p] /= c(p, p);
    for (std::size_t i = 0; i < p; ++i) h[i] -= c(i, p) * h[p];
  }
  return h;
}

// Removes the span of q[from..] from v (two MGS passes); returns the
// accumulated coefficients.
std::vector<double> project_out(const Columns& q, std::size_t from, std::vector<double>& v) {
  std::vector<double> h(q.size() - from, 0.0);
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = from; i < q.size(); ++i) {
      const double c = dot(q[i], v);
      axpy(-c, q[i], v);
      h[i - from] += c;
    }
  }
  return h;
}

struct BlockBasis {
  Columns q;
  Matrix c;                      // q.size() x q.size(), upper triangular
  std::vector<std::size_t> kept;  // global basis columns
};

BlockBasis block_basis(const IncrementalState& st, std::size_t g) {
  const auto& group = st.problem->groups[g];
  const std::size_t n = st.problem->basis.rows();
  Matrix block(n, group.size());
  std::vector<double> refs(group.size());
  for (std::size_t i = 0; i < group.size(); ++i) {
    block.set_column(i, st.residual_basis[group[i]]);
    refs[i] = st.basis_norms[group[i]];
  }
  auto orth = orthonormalize_with_tol(block, kResidualTol, refs);
  BlockBasis out;
  out.q = to_columns(orth.basis);
  out.c = std::move(orth.coeffs);
  for (auto k : orth.kept) out.kept.push_back(group[k]);
  return out;
}

double singleton_gain(const IncrementalState& st, std::size_t col) {
  const auto& r = st.residual_basis[col];
  const double nr2 = norm_sq(r);
  const double nr = std::sqrt(nr2);
  if (nr <= kResidualTol * st.basis_norms[col] || nr == 0.0) return 0.0;
  double gain = 0.0;
  for (const auto& y : st.residual_output) {
    const double d = dot(r, y);
    gain += d * d;
  }
  return gain / nr2;
}

void check_candidate(const IncrementalState& st, std::size_t g) {
  if (g >= st.problem->groups.size()) {
    throw SelectionError("group " + std::to_string(g) + " out of range (" +
                         std::to_string(st.problem->groups.size()) + " groups)");
  }
  if (st.is_selected[g]) throw SelectionError("group " + std::to_string(g) + " is already selected");
}

std::vector<double> unit_coeffs(std::size_t size, std::size_t at) {
  std::vector<double> e(size, 0.0);
  e[at] = 1.0;
  return e;
}

// Orthonormal basis of span(B_{M(S)}) built group by group, with the
// triangular factor over the kept columns.
struct Projection {
  Columns q;
  std::vector<std::size_t> kept;
  Columns r;  // r[p] has p + 1 entries
};

Projection build_projection(const SelectionProblem& pb, const std::vector<std::size_t>& order,
                            const std::vector<double>& norms) {
  Projection pj;
  const std::size_t n = pb.basis.rows();
  for (auto g : order) {
    const auto& group = pb.groups[g];
    Matrix block(n, group.size());
    Columns cross(group.size());
    std::vector<double> refs(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
      auto v = pb.basis.column(group[i]);
      cross[i] = project_out(pj.q, 0, v);
      block.set_column(i, v);
      refs[i] = norms[group[i]];
    }
    const auto orth = orthonormalize_with_tol(block, kResidualTol, refs);
    for (std::size_t i = 0; i < orth.kept.size(); ++i) {
      std::vector<double> col = cross[orth.kept[i]];
      for (std::size_t t = 0; t <= i; ++t) col.push_back(orth.coeffs(t, i));
      pj.r.push_back(std::move(col));
      pj.kept.push_back(group[orth.kept[i]]);
    }
    for (std::size_t i = 0; i < orth.basis.cols(); ++i) pj.q.push_back(orth.basis.column(i));
  }
  return pj;
}

std::vector<double> least_squares_coeffs(const Projection& pj, const std::vector<double>& y) {
  std::vector<double> h(pj.q.size());
  for (std::size_t i = 0; i < pj.q.size(); ++i) h[i] = dot(pj.q[i], y);
  return back_substitute(pj.r, std::move(h));
}

std::vector<double> column_norms(const Matrix& m) {
  std::vector<double> out(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    for (std::size_t j = 0; j < m.cols(); ++j) out[j] += row[j] * row[j];
  }
  for (double& v : out) v = std::sqrt(v);
  return out;
}

Matrix weights_from_coeffs(const SelectionProblem& pb, const std::vector<std::size_t>& kept,
                           const Columns& coeffs) {
  const Matrix& w = pb.weights;
  Matrix out(pb.basis.cols(), w.cols());
  for (std::size_t j = 0; j < coeffs.size(); ++j) {
    const auto wj = w.row(j);
    for (std::size_t p = 0; p < kept.size(); ++p) {
      const double x = coeffs[j][p];
      if (x == 0.0) continue;
      auto dst = out.row(kept[p]);
      for (std::size_t m = 0; m < wj.size(); ++m) dst[m] += x * wj[m];
    }
  }
  return out;
}

void check_group_list(const SelectionProblem& pb, const std::vector<std::size_t>& groups) {
  std::vector<bool> seen(pb.groups.size(), false);
  for (auto g : groups) {
    if (g >= pb.groups.size()) throw SelectionError("group " + std::to_string(g) + " out of range");
    if (seen[g]) throw SelectionError("group " + std::to_string(g) + " listed twice");
    seen[g] = true;
  }
}

}  // namespace

void SelectionProblem::validate() const {
  const Matrix& t = target_matrix();
  if (mode == Mode::Asymmetric && !target) throw std::invalid_argument("asymmetric problem needs a target");
  if (basis.rows() != t.rows() || basis.cols() != t.cols()) {
    throw ShapeError("basis " + basis.shape_string() + " and target " + t.shape_string() + " differ");
  }
  if (weights.rows() != basis.cols()) {
    throw ShapeError("weights " + weights.shape_string() + " do not match basis " + basis.shape_string());
  }
  std::vector<int> owner(basis.cols(), 0);
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("empty group");
    for (auto c : g) {
      if (c >= basis.cols()) throw std::invalid_argument("group column " + std::to_string(c) + " out of range");
      ++owner[c];
    }
  }
  for (std::size_t c = 0; c < owner.size(); ++c) {
    if (owner[c] != 1) {
      throw std::invalid_argument("column " + std::to_string(c) + " belongs to " + std::to_string(owner[c]) +
                                  " groups");
    }
  }
}

std::vector<std::vector<std::size_t>> singleton_groups(std::size_t n) {
  std::vector<std::vector<std::size_t>> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = {i};
  return g;
}

SelectionProblem make_symmetric(Matrix a, Matrix w, std::vector<std::vector<std::size_t>> groups) {
  SelectionProblem p;
  if (groups.empty()) groups = singleton_groups(a.cols());
  p.basis = std::move(a);
  p.weights = std::move(w);
  p.groups = std::move(groups);
  p.mode = Mode::Symmetric;
  p.validate();
  return p;
}

SelectionProblem make_asymmetric(Matrix b, Matrix a, Matrix w, std::vector<std::vector<std::size_t>> groups) {
  SelectionProblem p;
  if (groups.empty()) groups = singleton_groups(b.cols());
  p.basis = std::move(b);
  p.target = std::move(a);
  p.weights = std::move(w);
  p.groups = std::move(groups);
  p.mode = Mode::Asymmetric;
  p.validate();
  return p;
}

const Columns& IncrementalState::target_coeffs() const {
  return problem->mode == Mode::Asymmetric ? coeff_target : coeff_basis;
}

IncrementalState init_state(const SelectionProblem& problem) {
  problem.validate();
  IncrementalState st;
  st.problem = &problem;
  st.is_selected.assign(problem.groups.size(), false);
  st.basis_norms = column_norms(problem.basis);
  const Matrix y = matmul(problem.target_matrix(), problem.weights);
  st.baseline = frob_norm_sq(y);
  st.residual_output = to_columns(y);
  st.residual_basis = to_columns(problem.basis);
  st.coeff_basis.assign(problem.basis.cols(), {});
  if (problem.mode == Mode::Asymmetric) {
    st.residual_target = to_columns(*problem.target);
    st.coeff_target.assign(problem.target->cols(), {});
  }
  return st;
}

double marginal_gain(const IncrementalState& state, std::size_t group) {
  check_candidate(state, group);
  const auto& cols = state.problem->groups[group];
  double gain = 0.0;
  if (cols.size() == 1) {
    gain = singleton_gain(state, cols[0]);
  } else {
    const auto bb = block_basis(state, group);
    for (const auto& q : bb.q) {
      for (const auto& y : state.residual_output) {
        const double d = dot(q, y);
        gain += d * d;
      }
    }
  }
  return g_gain_fault.load(std::memory_order_relaxed) ? -gain : gain;
}

double apply_selection(IncrementalState& st, std::size_t group) {
  check_candidate(st, group);
  const SelectionProblem& pb = *st.problem;
  const auto bb = block_basis(st, group);
  const std::size_t p_old = st.kept_columns.size();
  const std::size_t qn = bb.q.size();

  double gain = 0.0;
  for (auto& y : st.residual_output) {
    for (const auto& q : bb.q) {
      const double d = dot(q, y);
      gain += d * d;
      axpy(-d, q, y);
    }
  }

  // x^{S+I}(y) = x^S(y) - x^S(B_I) g(y) + e_I g(y),  g(y) = C^{-1} Q_I^T r(y)
  Columns x_block(qn);
  for (std::size_t i = 0; i < qn; ++i) x_block[i] = st.coeff_basis[bb.kept[i]];
  auto update = [&](std::vector<double>& resid, std::vector<double>& coef) {
    std::vector<double> h(qn);
    for (std::size_t i = 0; i < qn; ++i) {
      h[i] = dot(bb.q[i], resid);
      axpy(-h[i], bb.q[i], resid);
    }
    const auto gamma = back_substitute(bb.c, std::move(h));
    for (std::size_t i = 0; i < qn; ++i)
      for (std::size_t p = 0; p < p_old; ++p) coef[p] -= gamma[i] * x_block[i][p];
    coef.insert(coef.end(), gamma.begin(), gamma.end());
  };

  std::vector<bool> kept_before(pb.basis.cols(), false);
  for (auto c : st.kept_columns) kept_before[c] = true;
  for (std::size_t j = 0; j < pb.basis.cols(); ++j) {
    if (kept_before[j]) {
      st.coeff_basis[j].resize(p_old + qn, 0.0);
    } else {
      update(st.residual_basis[j], st.coeff_basis[j]);
    }
  }
  if (pb.mode == Mode::Asymmetric) {
    for (std::size_t j = 0; j < st.coeff_target.size(); ++j) update(st.residual_target[j], st.coeff_target[j]);
  }
  for (std::size_t i = 0; i < qn; ++i) {
    const std::size_t col = bb.kept[i];
    st.kept_columns.push_back(col);
    st.q.push_back(bb.q[i]);
    st.coeff_basis[col] = unit_coeffs(p_old + qn, p_old + i);
    st.residual_basis[col].assign(st.residual_basis[col].size(), 0.0);
  }
  st.selected.push_back(group);
  st.is_selected[group] = true;
  st.value += gain;
  if (++st.steps_since_refresh >= kRefreshInterval) refresh(st);
  return gain;
}

void refresh(IncrementalState& st) {
  const SelectionProblem& pb = *st.problem;
  const auto pj = build_projection(pb, st.selected, st.basis_norms);
  st.q = pj.q;
  st.kept_columns = pj.kept;
  std::vector<bool> kept(pb.basis.cols(), false);
  for (auto c : pj.kept) kept[c] = true;
  const std::size_t p = pj.kept.size();

  for (std::size_t j = 0; j < pb.basis.cols(); ++j) {
    auto v = pb.basis.column(j);
    if (kept[j]) {
      st.residual_basis[j].assign(v.size(), 0.0);
      continue;
    }
    st.coeff_basis[j] = least_squares_coeffs(pj, v);
    project_out(pj.q, 0, v);
    st.residual_basis[j] = std::move(v);
  }
  for (std::size_t i = 0; i < p; ++i) st.coeff_basis[pj.kept[i]] = unit_coeffs(p, i);
  if (pb.mode == Mode::Asymmetric) {
    for (std::size_t j = 0; j < pb.target->cols(); ++j) {
      auto v = pb.target->column(j);
      st.coeff_target[j] = least_squares_coeffs(pj, v);
      project_out(pj.q, 0, v);
      st.residual_target[j] = std::move(v);
    }
  }
  const Matrix y = matmul(pb.target_matrix(), pb.weights);
  double value = 0.0;
  for (std::size_t m = 0; m < y.cols(); ++m) {
    auto v = y.column(m);
    for (const auto& q : pj.q) {
      const double d = dot(q, v);
      value += d * d;
    }
    project_out(pj.q, 0, v);
    st.residual_output[m] = std::move(v);
  }
  st.value = value;
  st.steps_since_refresh = 0;
}

ScratchResult eval_from_scratch(const SelectionProblem& problem, const std::vector<std::size_t>& groups) {
  problem.validate();
  check_group_list(problem, groups);
  const auto norms = column_norms(problem.basis);
  const auto pj = build_projection(problem, groups, norms);
  const Matrix& t = problem.target_matrix();

  ScratchResult res;
  res.kept_columns = pj.kept;
  res.coeffs.resize(t.cols());
  std::vector<long> kept_pos(problem.basis.cols(), -1);
  for (std::size_t p = 0; p < pj.kept.size(); ++p) kept_pos[pj.kept[p]] = static_cast<long>(p);
  for (std::size_t j = 0; j < t.cols(); ++j) {
    if (problem.mode == Mode::Symmetric && kept_pos[j] >= 0) {
      res.coeffs[j] = unit_coeffs(pj.kept.size(), static_cast<std::size_t>(kept_pos[j]));
    } else {
      res.coeffs[j] = least_squares_coeffs(pj, t.column(j));
    }
  }
  const Matrix w_tilde = weights_from_coeffs(problem, pj.kept, res.coeffs);
  res.baseline = frob_norm_sq(matmul(t, problem.weights));
  res.value = res.baseline - reconstruction_error(problem, w_tilde);
  return res;
}

Matrix extract_reweighted_weights(const IncrementalState& state) {
  return weights_from_coeffs(*state.problem, state.kept_columns, state.target_coeffs());
}

Matrix extract_reweighted_weights(const SelectionProblem& problem, const std::vector<std::size_t>& groups) {
  return extract_reweighted_weights(problem, eval_from_scratch(problem, groups));
}

Matrix extract_reweighted_weights(const SelectionProblem& problem, const ScratchResult& scratch) {
  return weights_from_coeffs(problem, scratch.kept_columns, scratch.coeffs);
}

double reconstruction_error(const SelectionProblem& problem, const Matrix& w_tilde) {
  return frob_norm_sq(matmul(problem.target_matrix(), problem.weights) - matmul(problem.basis, w_tilde));
}

void set_gain_fault(bool enabled) { g_gain_fault.store(enabled, std::memory_order_relaxed); }
bool gain_fault() { return g_gain_fault.load(std::memory_order_relaxed); }

}  // namespace subprune
