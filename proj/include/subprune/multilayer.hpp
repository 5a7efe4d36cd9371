#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "subprune/greedy.hpp"
#include "subprune/network.hpp"
#include "subprune/objective.hpp"

namespace subprune {

enum class Variant { Layer, Seq, Asym, WeightNorm, Random };

std::string to_string(Variant v);
/// Accepts layer|seq|asym|weightnorm|random.
Variant parse_variant(const std::string& s);

struct PrunePlan {
  Variant variant = Variant::Layer;
  /// Units to keep, one entry per prunable layer in network order.
  std::vector<std::size_t> budgets;
  std::uint64_t seed = 0;
  /// Replace successor weights by the least-squares W~. Without it the
  /// successor keeps its original rows for the kept units.
  bool reweight = true;
  /// Stochastic-Greedy sampling for the InChange variants; off when unset.
  std::optional<double> epsilon;
};

struct LayerOutcome {
  std::string name;
  std::size_t layer = 0;
  std::size_t successor = 0;
  std::size_t units = 0;
  std::size_t budget = 0;
  std::vector<std::size_t> selected;  // pick order for greedy, ascending for baselines
  Matrix reweighted;                  // successor weights in capture-column order
  Mode mode = Mode::Symmetric;
  double baseline = 0.0;
  double value = 0.0;           // objective at the selected set
  double residual_error = 0.0;  // |T W - B W~|^2
  bool stopped_early = false;
};

struct PruneResult {
  std::vector<LayerOutcome> layers;
  NetworkModel model;
  std::uint64_t params_before = 0;
  std::uint64_t params_after = 0;
  std::uint64_t flops_before = 0;
  std::uint64_t flops_after = 0;
  double output_error = 0.0;  // |y - y'|^2 on the pruning batch
};

std::vector<std::size_t> prunable_layers(const NetworkModel& model);

SelectionProblem capture_problem(const NetworkModel& model, const ActivationCapture& cap);

/// Keeps the k groups with the largest l1 norm of their outgoing weight rows.
std::vector<std::size_t> select_weight_norm(const Matrix& successor_w,
                                            const std::vector<std::vector<std::size_t>>& groups, std::size_t k);
/// Uniform k-subset of {0..n-1}, ascending.
std::vector<std::size_t> select_random(std::size_t n, std::size_t k, std::uint64_t seed);

/// Masks `layer` to the units in `kept` and installs `w_tilde` as its
/// successor's weights (capture-column order).
void apply_pruning(NetworkModel& model, std::size_t layer, const std::vector<std::size_t>& kept,
                   const Matrix& w_tilde);

double final_output_error(const NetworkModel& original, const NetworkModel& pruned, const Matrix& inputs);

/// Every layer against captures of the unpruned model. Also serves the
/// weightnorm and random baselines.
PruneResult prune_layer_in_change(const NetworkModel& model, const Matrix& inputs, const CaptureResult& captures,
                                  const PrunePlan& plan);
/// seq and asym: captures are recomputed after each layer is pruned.
PruneResult prune_sequential(const NetworkModel& model, const Matrix& inputs, const PrunePlan& plan);
PruneResult prune(const NetworkModel& model, const Matrix& inputs, const PrunePlan& plan);

}  // namespace subprune
