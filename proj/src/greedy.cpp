#include "subprune/greedy.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "subprune/parallel.hpp"
#include "subprune/random.hpp"

namespace subprune {
namespace {

void check_budget(const SelectionProblem& problem, std::size_t k) {
  if (k < 1 || k > problem.group_count()) {
    throw SelectionError("budget k=" + std::to_string(k) + " outside [1, " +
                         std::to_string(problem.group_count()) + "]");
  }
}

// Position of the largest gain; earlier positions win ties.
std::size_t argmax(const std::vector<double>& gains) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < gains.size(); ++i)
    if (gains[i] > gains[best]) best = i;
  return best;
}

void record(SelectionTrace& trace, IncrementalState& state, std::size_t group, double gain) {
  apply_selection(state, group);
  trace.order.push_back(group);
  trace.gains.push_back(gain);
  trace.values.push_back(state.value);
}

std::vector<std::size_t> remaining_groups(const IncrementalState& state) {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < state.is_selected.size(); ++g)
    if (!state.is_selected[g]) out.push_back(g);
  return out;
}

SelectionTrace lazy_greedy(IncrementalState& state, std::size_t k, bool parallel) {
  SelectionTrace trace;
  trace.baseline = state.baseline;
  auto cands = remaining_groups(state);
  const auto first = sweep_gains(state, cands, parallel);
  std::set<std::pair<double, std::size_t>> heap;  // (-bound, group)
  for (std::size_t i = 0; i < cands.size(); ++i) heap.insert({-first[i], cands[i]});
  while (trace.size() < k && !heap.empty()) {
    auto top = *heap.begin();
    heap.erase(heap.begin());
    const double fresh = std::max(0.0, marginal_gain(state, top.second));
    if (!heap.empty() && fresh < -heap.begin()->first) {
      heap.insert({-fresh, top.second});
      continue;
    }
    if (fresh <= 0.0) {
      trace.stopped_early = true;
      break;
    }
    record(trace, state, top.second, fresh);
  }
  return trace;
}

}  // namespace

double SelectionTrace::relative_error(std::size_t t) const {
  if (baseline <= 0.0) return 0.0;
  return std::max(0.0, (baseline - values.at(t)) / baseline);
}

std::vector<double> sweep_gains(const IncrementalState& state, const std::vector<std::size_t>& candidates,
                                bool parallel) {
  std::vector<double> gains(candidates.size());
  const auto n = static_cast<std::ptrdiff_t>(candidates.size());
  if (parallel) {
#pragma omp parallel for schedule(dynamic) num_threads(thread_count()) if (n > 1)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto u = static_cast<std::size_t>(i);
      gains[u] = std::max(0.0, marginal_gain(state, candidates[u]));
    }
  } else {
    for (std::size_t i = 0; i < candidates.size(); ++i)
      gains[i] = std::max(0.0, marginal_gain(state, candidates[i]));
  }
  return gains;
}

SelectionTrace greedy(const SelectionProblem& problem, std::size_t k, IncrementalState& state,
                      const GreedyOptions& opts) {
  check_budget(problem, k);
  state = init_state(problem);
  if (opts.lazy_unsafe) return lazy_greedy(state, k, opts.parallel);
  SelectionTrace trace;
  trace.baseline = state.baseline;
  while (trace.size() < k) {
    const auto cands = remaining_groups(state);
    const auto gains = sweep_gains(state, cands, opts.parallel);
    const std::size_t best = argmax(gains);
    if (gains[best] <= 0.0) {
      trace.stopped_early = true;
      break;
    }
    record(trace, state, cands[best], gains[best]);
  }
  return trace;
}

SelectionTrace greedy(const SelectionProblem& problem, std::size_t k, const GreedyOptions& opts) {
  IncrementalState state;
  return greedy(problem, k, state, opts);
}

std::size_t sample_size(std::size_t n_groups, std::size_t k, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::domain_error("epsilon must lie in (0, 1)");
  if (k < 1 || k > n_groups) throw std::domain_error("k must lie in [1, n_groups]");
  const double s = std::ceil(static_cast<double>(n_groups) / static_cast<double>(k) * std::log(1.0 / epsilon));
  return std::max<std::size_t>(1, static_cast<std::size_t>(s));
}

SelectionTrace stochastic_greedy(const SelectionProblem& problem, std::size_t k, double epsilon,
                                 std::uint64_t seed, const GreedyOptions& opts) {
  check_budget(problem, k);
  const std::size_t s = sample_size(problem.group_count(), k, epsilon);
  SplitMix64 rng(seed);
  IncrementalState state = init_state(problem);
  SelectionTrace trace;
  trace.baseline = state.baseline;
  while (trace.size() < k) {
    const auto rest = remaining_groups(state);
    auto sample = sample_without_replacement(rest, std::min(s, rest.size()), rng);
    std::sort(sample.begin(), sample.end());
    const auto gains = sweep_gains(state, sample, opts.parallel);
    const std::size_t best = argmax(gains);
    if (gains[best] <= 0.0) {
      const auto all = sweep_gains(state, rest, opts.parallel);
      if (all[argmax(all)] <= 0.0) {
        trace.stopped_early = true;
        break;
      }
    }
    record(trace, state, sample[best], gains[best]);
  }
  return trace;
}

std::vector<Matrix> prefix_weights(const SelectionProblem& problem, const std::vector<std::size_t>& order,
                                   const std::vector<std::size_t>& lengths) {
  if (!std::is_sorted(lengths.begin(), lengths.end())) throw std::invalid_argument("prefix lengths must ascend");
  if (!lengths.empty() && lengths.back() > order.size()) {
    throw std::invalid_argument("prefix length exceeds the selection order");
  }
  IncrementalState state = init_state(problem);
  std::vector<Matrix> out;
  std::size_t done = 0;
  for (auto len : lengths) {
    while (done < len) apply_selection(state, order[done++]);
    out.push_back(extract_reweighted_weights(state));
  }
  return out;
}

}  // namespace subprune
