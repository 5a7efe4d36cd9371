#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "subprune/greedy.hpp"
#include "subprune/multilayer.hpp"
#include "subprune/network.hpp"

namespace subprune {

struct AccuracyCurve {
  std::string layer;
  std::size_t layer_index = 0;
  std::size_t units = 0;
  std::vector<double> grid;     // fractions alpha, ascending
  std::vector<std::size_t> ks;  // max(1, round(alpha * units))
  std::vector<double> raw;
  std::vector<double> monotone;
};

/// {0.05, 0.10, ..., 1.0}
std::vector<double> default_grid();
/// {0.01, 0.05, 0.075, 0.1, 0.15, ..., 0.95, 1.0}
std::vector<double> fine_grid();
std::size_t grid_budget(double alpha, std::size_t units);

/// Running maximum from the smallest fraction upward.
std::vector<double> monotonize(std::span<const double> values);

/// Layer-by-layer accuracy with only that layer pruned, on the verification
/// data. One ranking per layer; every grid point is a prefix of it.
std::vector<AccuracyCurve> accuracy_curves(const NetworkModel& model, const Matrix& prune_inputs,
                                           const Matrix& verify_inputs,
                                           const std::vector<std::int64_t>& verify_labels,
                                           const std::vector<double>& grid, Variant selector,
                                           std::uint64_t seed = 0, bool reweight = true);

struct BudgetPlan {
  std::vector<std::size_t> budgets;
  double tau = 0.0;
  std::uint64_t size = 0;
  std::uint64_t size_orig = 0;
  double target_c = 1.0;
};

class InfeasibleBudget : public std::runtime_error {
 public:
  InfeasibleBudget(const std::string& what, std::uint64_t smallest)
      : std::runtime_error(what), smallest_size(smallest) {}
  std::uint64_t smallest_size;
};

using SizeFn = std::function<std::uint64_t(const std::vector<std::size_t>&)>;

/// Parameter count with the first k_l units of each prunable layer kept.
std::uint64_t pruned_size(const NetworkModel& model, const std::vector<std::size_t>& budgets);

/// Smallest tau such that every layer has a grid budget with monotone
/// accuracy >= p_orig - tau and size * c <= size_orig. Each layer takes its
/// smallest qualifying budget. Throws InfeasibleBudget.
BudgetPlan select_budgets(const std::vector<AccuracyCurve>& curves, double p_orig, const SizeFn& size, double c);
BudgetPlan select_budgets(const std::vector<AccuracyCurve>& curves, double p_orig, const NetworkModel& model,
                          double c);

/// Full-length greedy trace for every prunable layer (unpruned captures).
std::vector<SelectionTrace> layer_traces(const NetworkModel& model, const CaptureResult& captures);

/// Per layer, the smallest k whose relative error is <= epsilon. Saturated
/// traces fall back to their length.
std::vector<std::size_t> threshold_budgets(const std::vector<SelectionTrace>& traces, double epsilon);
/// Smallest epsilon among the traces' error levels that meets compression c.
BudgetPlan threshold_for_compression(const std::vector<SelectionTrace>& traces, const NetworkModel& model,
                                     double c);
/// Largest common fraction alpha meeting compression c.
BudgetPlan equal_fraction_budgets(const NetworkModel& model, double c);

}  // namespace subprune
