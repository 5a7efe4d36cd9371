#include "subprune/multilayer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "subprune/linalg.hpp"
#include "subprune/random.hpp"

namespace subprune {
namespace {

std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
  return seed ^ (0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(layer) + 1));
}

void check_plan(const NetworkModel& model, const PrunePlan& plan) {
  const auto idx = prunable_layers(model);
  if (plan.budgets.size() != idx.size()) {
    throw std::invalid_argument("plan has " + std::to_string(plan.budgets.size()) + " budgets for " +
                                std::to_string(idx.size()) + " prunable layers");
  }
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& l = model.layers[idx[i]];
    if (plan.budgets[i] < 1 || plan.budgets[i] > l.out_units()) {
      throw std::invalid_argument("layer '" + l.name + "': budget " + std::to_string(plan.budgets[i]) +
                                  " outside [1, " + std::to_string(l.out_units()) + "]");
    }
  }
}

Matrix keep_rows(const Matrix& w, const std::vector<std::vector<std::size_t>>& groups,
                 const std::vector<std::size_t>& kept) {
  Matrix out(w.rows(), w.cols());
  for (auto g : kept)
    for (auto r : groups[g])
      for (std::size_t c = 0; c < w.cols(); ++c) out(r, c) = w(r, c);
  return out;
}

// Selection and W~ for one layer given its problem.
LayerOutcome solve_layer(const SelectionProblem& problem, const PrunePlan& plan, std::size_t budget,
                         std::size_t layer_index) {
  LayerOutcome out;
  out.mode = problem.mode;
  out.budget = budget;
  switch (plan.variant) {
    case Variant::Layer:
    case Variant::Seq:
    case Variant::Asym: {
      SelectionTrace trace;
      if (plan.epsilon) {
        trace = stochastic_greedy(problem, budget, *plan.epsilon, layer_seed(plan.seed, layer_index));
      } else {
        trace = greedy(problem, budget);
      }
      out.selected = trace.order;
      out.stopped_early = trace.stopped_early;
      // A dead layer still needs one unit to pass the signal shape through.
      if (out.selected.empty()) out.selected.push_back(0);
      break;
    }
    case Variant::WeightNorm:
      out.selected = select_weight_norm(problem.weights, problem.groups, budget);
      break;
    case Variant::Random:
      out.selected = select_random(problem.group_count(), budget, layer_seed(plan.seed, layer_index));
      break;
  }
  if (plan.reweight) {
    const auto scratch = eval_from_scratch(problem, out.selected);
    out.baseline = scratch.baseline;
    out.value = scratch.value;
    out.reweighted = extract_reweighted_weights(problem, scratch);
  } else {
    out.reweighted = keep_rows(problem.weights, problem.groups, out.selected);
    out.baseline = frob_norm_sq(matmul(problem.target_matrix(), problem.weights));
  }
  out.residual_error = reconstruction_error(problem, out.reweighted);
  if (!plan.reweight) out.value = out.baseline - out.residual_error;
  return out;
}

void finish(PruneResult& res, const NetworkModel& original, const Matrix& inputs) {
  res.params_before = count_params(original);
  res.flops_before = count_flops(original);
  res.params_after = count_params(res.model);
  res.flops_after = count_flops(res.model);
  res.output_error = final_output_error(original, res.model, inputs);
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::Layer: return "layer";
    case Variant::Seq: return "seq";
    case Variant::Asym: return "asym";
    case Variant::WeightNorm: return "weightnorm";
    case Variant::Random: return "random";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (auto v : {Variant::Layer, Variant::Seq, Variant::Asym, Variant::WeightNorm, Variant::Random})
    if (to_string(v) == s) return v;
  throw std::invalid_argument("unknown variant '" + s + "' (layer|seq|asym|weightnorm|random)");
}

std::vector<std::size_t> prunable_layers(const NetworkModel& model) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (model.layers[i].prunable) out.push_back(i);
  return out;
}

SelectionProblem capture_problem(const NetworkModel& model, const ActivationCapture& cap) {
  return make_symmetric(cap.matrix, successor_weight(model.layers[cap.successor]),
                        block_groups(cap.units, cap.group_size));
}

std::vector<std::size_t> select_weight_norm(const Matrix& successor_w,
                                            const std::vector<std::vector<std::size_t>>& groups,
                                            std::size_t k) {
  if (k > groups.size()) throw std::invalid_argument("weightnorm: k exceeds group count");
  std::vector<double> norm(groups.size(), 0.0);
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (auto r : groups[g])
      for (double v : successor_w.row(r)) norm[g] += std::abs(v);
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norm[a] > norm[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> select_random(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) throw std::invalid_argument("random: k exceeds unit count");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  SplitMix64 rng(seed);
  auto pick = sample_without_replacement(pool, k, rng);
  std::sort(pick.begin(), pick.end());
  return pick;
}

void apply_pruning(NetworkModel& model, std::size_t layer, const std::vector<std::size_t>& kept,
                   const Matrix& w_tilde) {
  auto& l = model.layers.at(layer);
  if (!l.weighted()) throw std::invalid_argument("layer '" + l.name + "' has no units to prune");
  std::vector<bool> mask(l.out_units(), false);
  for (auto u : kept) mask.at(u) = true;
  l.kept_mask = std::move(mask);
  set_successor_weight(model.layers[successor_index(model, layer)], w_tilde);
}

double final_output_error(const NetworkModel& original, const NetworkModel& pruned, const Matrix& inputs) {
  return frob_norm_sq(forward(original, inputs) - forward(pruned, inputs));
}

PruneResult prune_layer_in_change(const NetworkModel& model, const Matrix& inputs, const CaptureResult& captures,
                                  const PrunePlan& plan) {
  check_plan(model, plan);
  if (captures.captures.size() != plan.budgets.size()) {
    throw std::invalid_argument("missing captures: " + std::to_string(captures.captures.size()) + " for " +
                                std::to_string(plan.budgets.size()) + " prunable layers");
  }
  PruneResult res;
  res.model = model;
  for (std::size_t i = 0; i < captures.captures.size(); ++i) {
    const auto& cap = captures.captures[i];
    const auto problem = capture_problem(model, cap);
    auto out = solve_layer(problem, plan, plan.budgets[i], cap.layer);
    out.name = model.layers[cap.layer].name;
    out.layer = cap.layer;
    out.successor = cap.successor;
    out.units = cap.units;
    apply_pruning(res.model, cap.layer, out.selected, out.reweighted);
    res.layers.push_back(std::move(out));
  }
  finish(res, model, inputs);
  return res;
}

PruneResult prune_sequential(const NetworkModel& model, const Matrix& inputs, const PrunePlan& plan) {
  if (plan.variant != Variant::Seq && plan.variant != Variant::Asym) {
    throw std::invalid_argument("prune_sequential needs variant seq or asym");
  }
  check_plan(model, plan);
  const auto original = forward_capture(model, inputs);
  PruneResult res;
  res.model = model;
  for (std::size_t i = 0; i < original.captures.size(); ++i) {
    const auto current = forward_capture(res.model, inputs);
    const auto& b = current.captures[i];
    const auto& a = original.captures[i];
    const Matrix w = successor_weight(res.model.layers[b.successor]);
    auto groups = block_groups(b.units, b.group_size);
    // With nothing pruned upstream B equals A and both variants are the symmetric problem.
    const bool collapse = plan.variant == Variant::Seq || b.matrix == a.matrix;
    const auto problem = collapse ? make_symmetric(b.matrix, w, std::move(groups))
                                  : make_asymmetric(b.matrix, a.matrix, w, std::move(groups));
    auto out = solve_layer(problem, plan, plan.budgets[i], b.layer);
    out.name = res.model.layers[b.layer].name;
    out.layer = b.layer;
    out.successor = b.successor;
    out.units = b.units;
    apply_pruning(res.model, b.layer, out.selected, out.reweighted);
    res.layers.push_back(std::move(out));
  }
  finish(res, model, inputs);
  return res;
}

PruneResult prune(const NetworkModel& model, const Matrix& inputs, const PrunePlan& plan) {
  if (plan.variant == Variant::Seq || plan.variant == Variant::Asym) return prune_sequential(model, inputs, plan);
  return prune_layer_in_change(model, inputs, forward_capture(model, inputs), plan);
}

}  // namespace subprune
