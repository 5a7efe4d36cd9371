#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "subprune/objective.hpp"

namespace subprune {

struct SelectionTrace {
  std::vector<std::size_t> order;
  std::vector<double> gains;   // clipped at 0
  std::vector<double> values;  // F(S_t) after step t
  double baseline = 0.0;
  /// Set when every remaining gain was <= 0 before k picks.
  bool stopped_early = false;

  std::size_t size() const noexcept { return order.size(); }
  /// (baseline - F(S_t)) / baseline, or 0 when the baseline is 0.
  double relative_error(std::size_t t) const;
};

struct GreedyOptions {
  /// Evaluate candidate gains with OpenMP. Results match the serial sweep bitwise.
  bool parallel = true;
  /// Priority-queue shortcut. Not valid for weakly submodular objectives;
  /// benchmarking only.
  bool lazy_unsafe = false;
};

/// Candidate gains over `candidates`, clipped at 0.
std::vector<double> sweep_gains(const IncrementalState& state, const std::vector<std::size_t>& candidates,
                                bool parallel);

/// Exact argmax with lowest-index ties.
SelectionTrace greedy(const SelectionProblem& problem, std::size_t k, const GreedyOptions& opts = {});
/// Same, also returning the final state.
SelectionTrace greedy(const SelectionProblem& problem, std::size_t k, IncrementalState& state,
                      const GreedyOptions& opts = {});

/// ceil((n_groups / k) * ln(1 / epsilon)), at least 1.
std::size_t sample_size(std::size_t n_groups, std::size_t k, double epsilon);

SelectionTrace stochastic_greedy(const SelectionProblem& problem, std::size_t k, double epsilon,
                                 std::uint64_t seed, const GreedyOptions& opts = {});

/// Replays `order` and returns W~ after each prefix length in `lengths`
/// (ascending).
std::vector<Matrix> prefix_weights(const SelectionProblem& problem, const std::vector<std::size_t>& order,
                                   const std::vector<std::size_t>& lengths);

}  // namespace subprune
