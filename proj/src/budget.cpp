#include "subprune/budget.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "subprune/random.hpp"

namespace subprune {
namespace {

constexpr double kAccuracySlack = 1e-12;

std::uint64_t layer_seed(std::uint64_t seed, std::size_t layer) {
  return seed ^ (0xD1B54A32D192ED03ULL * (static_cast<std::uint64_t>(layer) + 1));
}

// Units of each layer ranked so that any prefix is the selection at that budget.
std::vector<std::size_t> ranking(const SelectionProblem& problem, Variant selector, std::size_t k_max,
                                 std::uint64_t seed, std::size_t layer) {
  const std::size_t n = problem.group_count();
  switch (selector) {
    case Variant::Layer:
    case Variant::Seq:
    case Variant::Asym:
      return greedy(problem, k_max).order;
    case Variant::WeightNorm: {
      std::vector<double> norm(n, 0.0);
      for (std::size_t g = 0; g < n; ++g)
        for (auto r : problem.groups[g])
          for (double v : problem.weights.row(r)) norm[g] += std::abs(v);
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norm[a] > norm[b]; });
      return order;
    }
    case Variant::Random: {
      std::vector<std::size_t> pool(n);
      std::iota(pool.begin(), pool.end(), 0);
      SplitMix64 rng(layer_seed(seed, layer));
      return sample_without_replacement(pool, n, rng);
    }
  }
  return {};
}

std::vector<std::size_t> budgets_at(const std::vector<AccuracyCurve>& curves, double floor_acc) {
  std::vector<std::size_t> ks;
  for (const auto& c : curves) {
    std::size_t pick = c.ks.back();
    for (std::size_t i = 0; i < c.ks.size(); ++i) {
      if (c.monotone[i] >= floor_acc - kAccuracySlack) {
        pick = c.ks[i];
        break;
      }
    }
    ks.push_back(pick);
  }
  return ks;
}

bool fits(std::uint64_t size, std::uint64_t orig, double c) {
  return static_cast<long double>(size) * static_cast<long double>(c) <= static_cast<long double>(orig);
}

std::vector<std::size_t> full_budgets(const NetworkModel& model) {
  std::vector<std::size_t> ks;
  for (auto i : prunable_layers(model)) ks.push_back(model.layers[i].out_units());
  return ks;
}

void check_ratio(double c) {
  if (!(c >= 1.0)) throw std::invalid_argument("compression ratio must be >= 1");
}

}  // namespace

std::vector<double> default_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 20; ++i) g.push_back(0.05 * i);
  return g;
}

std::vector<double> fine_grid() {
  std::vector<double> g{0.01, 0.05, 0.075, 0.1};
  for (int i = 3; i <= 19; ++i) g.push_back(0.05 * i);
  g.push_back(1.0);
  return g;
}

std::size_t grid_budget(double alpha, std::size_t units) {
  const auto k = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(units)));
  return std::clamp<std::size_t>(k, 1, units);
}

std::vector<double> monotonize(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("monotonize: empty curve");
  std::vector<double> out(values.begin(), values.end());
  for (std::size_t i = 1; i < out.size(); ++i) out[i] = std::max(out[i], out[i - 1]);
  return out;
}

std::vector<AccuracyCurve> accuracy_curves(const NetworkModel& model, const Matrix& prune_inputs,
                                           const Matrix& verify_inputs,
                                           const std::vector<std::int64_t>& verify_labels,
                                           const std::vector<double>& grid, Variant selector, std::uint64_t seed,
                                           bool reweight) {
  if (grid.empty() || !std::is_sorted(grid.begin(), grid.end())) {
    throw std::invalid_argument("accuracy grid must be non-empty and ascending");
  }
  const auto caps = forward_capture(model, prune_inputs);
  std::vector<AccuracyCurve> curves;
  for (const auto& cap : caps.captures) {
    AccuracyCurve curve;
    curve.layer = model.layers[cap.layer].name;
    curve.layer_index = cap.layer;
    curve.units = cap.units;
    curve.grid = grid;
    for (double a : grid) curve.ks.push_back(grid_budget(a, cap.units));
    const auto problem = capture_problem(model, cap);
    const auto order = ranking(problem, selector, curve.ks.back(), seed, cap.layer);
    for (auto k : curve.ks) {
      std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(k, order.size())));
      if (kept.empty()) kept.push_back(0);
      Matrix w_tilde;
      if (reweight) {
        w_tilde = extract_reweighted_weights(problem, kept);
      } else {
        w_tilde = Matrix(problem.weights.rows(), problem.weights.cols());
        for (auto g : kept)
          for (auto r : problem.groups[g])
            for (std::size_t c = 0; c < w_tilde.cols(); ++c) w_tilde(r, c) = problem.weights(r, c);
      }
      NetworkModel pruned = model;
      apply_pruning(pruned, cap.layer, kept, w_tilde);
      curve.raw.push_back(evaluate_accuracy(pruned, verify_inputs, verify_labels));
    }
    curve.monotone = monotonize(curve.raw);
    curves.push_back(std::move(curve));
  }
  return curves;
}

std::uint64_t pruned_size(const NetworkModel& model, const std::vector<std::size_t>& budgets) {
  const auto idx = prunable_layers(model);
  if (budgets.size() != idx.size()) throw std::invalid_argument("pruned_size: one budget per prunable layer");
  NetworkModel m = model;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto& l = m.layers[idx[i]];
    if (budgets[i] > l.out_units()) throw std::invalid_argument("pruned_size: budget exceeds units");
    std::vector<bool> mask(l.out_units(), false);
    std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(budgets[i]), true);
    l.kept_mask = std::move(mask);
  }
  return count_params(m);
}

BudgetPlan select_budgets(const std::vector<AccuracyCurve>& curves, double p_orig, const SizeFn& size, double c) {
  check_ratio(c);
  for (const auto& cv : curves) {
    if (cv.ks.empty() || cv.monotone.size() != cv.ks.size()) throw std::invalid_argument("malformed curve");
  }
  std::vector<std::size_t> full;
  for (const auto& cv : curves) full.push_back(cv.units);
  const std::uint64_t orig = size(full);

  // Feasibility only changes at tau = p_orig - (some curve value), so the
  // search over those candidates is exact.
  std::vector<double> taus{0.0, p_orig};
  for (const auto& cv : curves)
    for (double v : cv.monotone) taus.push_back(std::clamp(p_orig - v, 0.0, p_orig));
  std::sort(taus.begin(), taus.end());
  taus.erase(std::unique(taus.begin(), taus.end()), taus.end());

  auto feasible = [&](double tau) { return fits(size(budgets_at(curves, p_orig - tau)), orig, c); };
  if (!feasible(taus.back())) {
    const auto smallest = size(budgets_at(curves, p_orig - taus.back()));
    throw InfeasibleBudget("compression " + std::to_string(c) + " is infeasible; smallest size " +
                               std::to_string(smallest) + " of " + std::to_string(orig) + " (c=" +
                               std::to_string(static_cast<double>(orig) / static_cast<double>(smallest)) + ")",
                           smallest);
  }
  std::size_t lo = 0, hi = taus.size() - 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (feasible(taus[mid])) hi = mid;
    else lo = mid + 1;
  }
  BudgetPlan plan;
  plan.tau = taus[lo];
  plan.budgets = budgets_at(curves, p_orig - plan.tau);
  plan.size = size(plan.budgets);
  plan.size_orig = orig;
  plan.target_c = c;
  return plan;
}

BudgetPlan select_budgets(const std::vector<AccuracyCurve>& curves, double p_orig, const NetworkModel& model,
                          double c) {
  return select_budgets(curves, p_orig, [&](const std::vector<std::size_t>& ks) { return pruned_size(model, ks); },
                        c);
}

std::vector<SelectionTrace> layer_traces(const NetworkModel& model, const CaptureResult& captures) {
  std::vector<SelectionTrace> out;
  for (const auto& cap : captures.captures) {
    const auto problem = capture_problem(model, cap);
    out.push_back(greedy(problem, problem.group_count()));
  }
  return out;
}

std::vector<std::size_t> threshold_budgets(const std::vector<SelectionTrace>& traces, double epsilon) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  std::vector<std::size_t> ks;
  for (const auto& t : traces) {
    std::size_t k = std::max<std::size_t>(1, t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (t.relative_error(i) <= epsilon) {
        k = i + 1;
        break;
      }
    }
    ks.push_back(k);
  }
  return ks;
}

BudgetPlan threshold_for_compression(const std::vector<SelectionTrace>& traces, const NetworkModel& model,
                                     double c) {
  check_ratio(c);
  const std::uint64_t orig = pruned_size(model, full_budgets(model));
  std::vector<double> eps{1.0};
  for (const auto& t : traces)
    for (std::size_t i = 0; i < t.size(); ++i)
      if (t.relative_error(i) > 0.0) eps.push_back(t.relative_error(i));
  std::sort(eps.begin(), eps.end());
  eps.erase(std::unique(eps.begin(), eps.end()), eps.end());
  auto size_at = [&](double e) { return pruned_size(model, threshold_budgets(traces, e)); };
  if (!fits(size_at(eps.back()), orig, c)) {
    throw InfeasibleBudget("compression " + std::to_string(c) + " is infeasible under threshold budgets",
                           size_at(eps.back()));
  }
  std::size_t lo = 0, hi = eps.size() - 1;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (fits(size_at(eps[mid]), orig, c)) hi = mid;
    else lo = mid + 1;
  }
  BudgetPlan plan;
  plan.tau = eps[lo];
  plan.budgets = threshold_budgets(traces, eps[lo]);
  plan.size = pruned_size(model, plan.budgets);
  plan.size_orig = orig;
  plan.target_c = c;
  return plan;
}

BudgetPlan equal_fraction_budgets(const NetworkModel& model, double c) {
  check_ratio(c);
  const auto full = full_budgets(model);
  const std::uint64_t orig = pruned_size(model, full);
  auto budgets = [&](double alpha) {
    std::vector<std::size_t> ks;
    for (auto n : full) ks.push_back(grid_budget(alpha, n));
    return ks;
  };
  if (!fits(pruned_size(model, budgets(0.0)), orig, c)) {
    throw InfeasibleBudget("compression " + std::to_string(c) + " is infeasible with equal fractions",
                           pruned_size(model, budgets(0.0)));
  }
  double lo = 0.0, hi = 1.0;  // lo feasible
  if (fits(orig, orig, c)) lo = 1.0;
  for (int it = 0; it < 60 && hi - lo > 1e-9; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (fits(pruned_size(model, budgets(mid)), orig, c)) lo = mid;
    else hi = mid;
  }
  BudgetPlan plan;
  plan.tau = lo;
  plan.budgets = budgets(lo);
  plan.size = pruned_size(model, plan.budgets);
  plan.size_orig = orig;
  plan.target_c = c;
  return plan;
}

}  // namespace subprune
