#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "subprune/matrix.hpp"

namespace subprune {

enum class Mode { Symmetric, Asymmetric };

/// One layer's selection instance.
///
/// F(S) = |T W|^2 - min_X |T W - B_{M(S)} X|^2, where B is `basis`, T is
/// `target` (equal to B in symmetric mode) and M(S) is the union of the
/// selected groups' columns.
struct SelectionProblem {
  Matrix basis;
  std::optional<Matrix> target;  // asymmetric only
  Matrix weights;
  std::vector<std::vector<std::size_t>> groups;
  Mode mode = Mode::Symmetric;

  const Matrix& target_matrix() const { return target ? *target : basis; }
  std::size_t group_count() const noexcept { return groups.size(); }
  /// Throws ShapeError / std::invalid_argument on violated invariants.
  void validate() const;
};

SelectionProblem make_symmetric(Matrix a, Matrix w, std::vector<std::vector<std::size_t>> groups = {});
SelectionProblem make_asymmetric(Matrix b, Matrix a, Matrix w,
                                 std::vector<std::vector<std::size_t>> groups = {});
std::vector<std::vector<std::size_t>> singleton_groups(std::size_t n);

/// A block residual whose columns all fall below this fraction of their
/// original norms adds nothing; gain is exactly 0.
inline constexpr double kResidualTol = 1e-5;  // squared: 1e-10
inline constexpr std::size_t kRefreshInterval = 64;

class SelectionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Columns = std::vector<std::vector<double>>;

/// Greedy engine state. Residuals of every basis column against span(B_S),
/// the residual of T W, and least-squares coefficients x^S(.) for every basis
/// column and (asymmetric) every target column.
struct IncrementalState {
  const SelectionProblem* problem = nullptr;
  std::vector<std::size_t> selected;
  std::vector<bool> is_selected;
  /// Basis columns that contributed a direction, in selection order.
  std::vector<std::size_t> kept_columns;
  Columns q;                // orthonormal basis of span(B_S)
  Columns residual_basis;   // R_S(b_j); unused for kept columns
  Columns residual_target;  // R_S(t_j), asymmetric only
  Columns residual_output;  // R_S(T w_m)
  /// coeff_basis[j][p] is x^S(b_j) at kept_columns[p].
  Columns coeff_basis;
  Columns coeff_target;  // asymmetric only
  std::vector<double> basis_norms;
  double value = 0.0;
  double baseline = 0.0;
  std::size_t steps_since_refresh = 0;

  /// x^S(target_j) for every target column.
  const Columns& target_coeffs() const;
};

IncrementalState init_state(const SelectionProblem& problem);
double marginal_gain(const IncrementalState& state, std::size_t group);
/// Returns the gain that was added to `value`.
double apply_selection(IncrementalState& state, std::size_t group);
/// Rebuilds residuals and coefficients from the selected set.
void refresh(IncrementalState& state);

struct ScratchResult {
  double value = 0.0;
  double baseline = 0.0;
  std::vector<std::size_t> kept_columns;
  /// coeffs[j][p]: least-squares coefficient of target_j on kept_columns[p].
  Columns coeffs;
};

/// Independent recomputation; groups are orthonormalized in the given order.
ScratchResult eval_from_scratch(const SelectionProblem& problem, const std::vector<std::size_t>& groups);

/// W~ = X^S W; rows outside M(S) are exactly zero.
Matrix extract_reweighted_weights(const IncrementalState& state);
Matrix extract_reweighted_weights(const SelectionProblem& problem, const std::vector<std::size_t>& groups);
Matrix extract_reweighted_weights(const SelectionProblem& problem, const ScratchResult& scratch);

/// |T W - B W~|_F^2.
double reconstruction_error(const SelectionProblem& problem, const Matrix& w_tilde);

/// Mutation hook for the verification suite: flips the sign of every gain.
void set_gain_fault(bool enabled);
bool gain_fault();

}  // namespace subprune
