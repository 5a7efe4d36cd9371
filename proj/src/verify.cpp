#include "subprune/verify.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "subprune/greedy.hpp"

namespace subprune {
namespace {

constexpr double kSkipRatio = 1e-12;
constexpr double kCheckSlack = 1e-9;
constexpr double kOrthoLimit = 1e-6;

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0;
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) {
    r = r * (n - k + i) / i;
    if (r > kMaxCombinations * 16) return r;
  }
  return r;
}

double error_bound_rhs(double gamma, std::size_t k, std::size_t n, double baseline, double floor_error) {
  const double decay = std::exp(-gamma * static_cast<double>(k) / static_cast<double>(n));
  return decay * baseline + (1.0 - decay) * floor_error;
}

}  // namespace

std::uint32_t to_mask(const std::vector<std::size_t>& groups) {
  std::uint32_t m = 0;
  for (auto g : groups) m |= 1u << g;
  return m;
}

std::vector<std::size_t> from_mask(std::uint32_t mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; mask != 0; ++i, mask >>= 1)
    if (mask & 1u) out.push_back(i);
  return out;
}

OptResult brute_force_opt(const SelectionProblem& problem, std::size_t k) {
  const std::size_t n = problem.group_count();
  if (k < 1 || k > n) throw std::invalid_argument("brute_force_opt: k outside [1, n]");
  if (binomial(n, k) > kMaxCombinations) {
    throw InstanceTooLarge("brute_force_opt: C(" + std::to_string(n) + "," + std::to_string(k) +
                           ") exceeds the enumeration cap");
  }
  std::vector<std::size_t> comb(k);
  for (std::size_t i = 0; i < k; ++i) comb[i] = i;
  OptResult best;
  best.value = -std::numeric_limits<double>::infinity();
  for (;;) {
    const double v = eval_from_scratch(problem, comb).value;
    if (v > best.value) {
      best.value = v;
      best.set = comb;
    }
    std::size_t i = k;
    while (i > 0 && comb[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++comb[i - 1];
    for (std::size_t j = i; j < k; ++j) comb[j] = comb[j - 1] + 1;
  }
  return best;
}

SubsetOracle::SubsetOracle(const SelectionProblem& problem) : n_(problem.group_count()) {
  if (n_ > kMaxOracleGroups) {
    throw InstanceTooLarge("subset oracle: " + std::to_string(n_) + " groups exceeds " +
                           std::to_string(kMaxOracleGroups));
  }
  values_.resize(std::size_t{1} << n_);
  for (std::uint32_t m = 0; m < values_.size(); ++m) {
    const auto r = eval_from_scratch(problem, from_mask(m));
    values_[m] = r.value;
    baseline_ = r.baseline;
  }
}

GammaReport exact_submodularity_ratio(const SubsetOracle& oracle, const std::vector<std::size_t>& u, std::size_t k) {
  if (u.size() > kMaxGammaAnchor) throw InstanceTooLarge("gamma: |U| exceeds " + std::to_string(kMaxGammaAnchor));
  const std::size_t n = oracle.size();
  const std::uint32_t full = static_cast<std::uint32_t>((std::size_t{1} << n) - 1);
  const std::uint32_t umask = to_mask(u);
  const double skip = kSkipRatio * oracle.baseline();

  GammaReport rep;
  rep.gamma = std::numeric_limits<double>::infinity();
  std::vector<double> sum(std::size_t{1} << n);
  std::vector<double> single(n);
  // Submasks of U, including U itself and the empty set.
  for (std::uint32_t l = umask;; l = (l - 1) & umask) {
    const std::uint32_t rest = full & ~l;
    for (std::size_t i = 0; i < n; ++i)
      single[i] = (rest >> i & 1u) ? oracle.gain(1u << i, l) : 0.0;
    sum[0] = 0.0;
    // Increasing submask order so s & (s - 1) is always filled first.
    for (std::uint32_t s = (0 - rest) & rest; s != 0; s = (s - rest) & rest) {
      sum[s] = sum[s & (s - 1)] + single[static_cast<std::size_t>(std::countr_zero(s))];
      if (static_cast<std::size_t>(std::popcount(s)) > k) continue;
      const double den = oracle.gain(s, l);
      if (den <= skip) {
        ++rep.pairs_skipped;
        continue;
      }
      ++rep.pairs_evaluated;
      const double ratio = sum[s] / den;
      if (ratio < rep.gamma) {
        rep.gamma = ratio;
        rep.witness_l = from_mask(l);
        rep.witness_s = from_mask(s);
      }
    }
    if (l == 0) break;
  }
  if (rep.pairs_evaluated == 0) {
    rep.gamma = 1.0;
    rep.degenerate = true;
  }
  return rep;
}

GammaReport exact_submodularity_ratio(const SelectionProblem& problem, const std::vector<std::size_t>& u,
                                      std::size_t k) {
  return exact_submodularity_ratio(SubsetOracle(problem), u, k);
}

std::size_t definition_spot_check(const SubsetOracle& oracle, const std::vector<std::size_t>& u, std::size_t k,
                                  double gamma, std::size_t samples, SplitMix64& rng) {
  const std::size_t n = oracle.size();
  const std::uint32_t umask = to_mask(u);
  const double slack = kCheckSlack * oracle.baseline();
  std::size_t violations = 0;
  for (std::size_t t = 0; t < samples; ++t) {
    std::uint32_t l = 0;
    for (auto i : u)
      if (rng.uniform_below(2) != 0) l |= 1u << i;
    l &= umask;
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i)
      if (!(l >> i & 1u)) free.push_back(i);
    if (free.empty()) continue;
    const std::size_t size = 1 + rng.uniform_below(std::min(k, free.size()));
    const auto pick = sample_without_replacement(free, size, rng);
    const std::uint32_t s = to_mask(pick);
    double singles = 0.0;
    for (auto i : pick) singles += oracle.gain(1u << i, l);
    if (gamma * oracle.gain(s, l) > singles + slack) ++violations;
  }
  return violations;
}

GuaranteeCheck check_greedy_guarantee(const SelectionProblem& problem, const SubsetOracle& oracle, std::size_t k) {
  GuaranteeCheck c;
  const auto trace = greedy(problem, k);
  c.greedy_set = trace.order;
  c.greedy_value = oracle.value(to_mask(trace.order));
  const std::size_t n = oracle.size();
  c.opt_value = -std::numeric_limits<double>::infinity();
  for (std::uint32_t m = 0; m < (1u << n); ++m) {
    if (static_cast<std::size_t>(std::popcount(m)) != k) continue;
    if (oracle.value(m) > c.opt_value) {
      c.opt_value = oracle.value(m);
      c.opt_set = from_mask(m);
    }
  }
  // Greedy's own set as the anchor U.
  c.gamma = std::clamp(exact_submodularity_ratio(oracle, trace.order, k).gamma, 0.0, 1.0);
  c.bound = (1.0 - std::exp(-c.gamma)) * c.opt_value;
  const double base = oracle.baseline() > 0.0 ? oracle.baseline() : 1.0;
  c.margin = (c.greedy_value - c.bound) / base;
  c.pass = c.greedy_value >= c.bound - kCheckSlack * oracle.baseline();
  return c;
}

GuaranteeCheck check_greedy_guarantee(const SelectionProblem& problem, std::size_t k) {
  return check_greedy_guarantee(problem, SubsetOracle(problem), k);
}

ErrorBoundCheck check_layer_error_bound(const SelectionProblem& problem, const SubsetOracle& oracle, std::size_t k) {
  ErrorBoundCheck c;
  c.k = k;
  c.n = oracle.size();
  const auto trace = greedy(problem, k);
  const Matrix w_tilde = extract_reweighted_weights(problem, trace.order);
  c.lhs = reconstruction_error(problem, w_tilde);
  c.gamma = std::clamp(exact_submodularity_ratio(oracle, trace.order, c.n).gamma, 0.0, 1.0);
  double floor_error = 0.0;
  if (problem.mode == Mode::Asymmetric) {
    const std::uint32_t all = static_cast<std::uint32_t>((std::size_t{1} << c.n) - 1);
    floor_error = std::max(0.0, oracle.baseline() - oracle.value(all));
  }
  c.rhs = error_bound_rhs(c.gamma, k, c.n, oracle.baseline(), floor_error);
  c.pass = c.lhs <= c.rhs + kCheckSlack * oracle.baseline();
  return c;
}

ErrorBoundCheck check_layer_error_bound(const SelectionProblem& problem, std::size_t k) {
  return check_layer_error_bound(problem, SubsetOracle(problem), k);
}

RankDiagnostic rank_diagnostic(const Matrix& a, std::size_t group_size, double tol) {
  if (group_size == 0 || a.cols() % group_size != 0) {
    throw std::invalid_argument("rank_diagnostic: group size must divide the column count");
  }
  RankDiagnostic d;
  d.columns = a.cols();
  d.units = a.cols() / group_size;
  d.rank = numerical_rank(a, tol).numerical_rank;
  if (d.rank == d.columns) {
    d.k = d.units;
    d.fraction = 1.0;
  } else {
    d.k = d.rank / (2 * group_size);
    d.fraction = d.units == 0 ? 0.0 : static_cast<double>(d.k) / static_cast<double>(d.units);
  }
  return d;
}

double orthogonality_check(const SelectionProblem& problem, const std::vector<std::size_t>& groups,
                           const Matrix& w_tilde) {
  const Matrix tw = matmul(problem.target_matrix(), problem.weights);
  const Matrix resid = tw - matmul(problem.basis, w_tilde);
  double worst = 0.0;
  for (auto g : groups) {
    for (auto s : problem.groups.at(g)) {
      const auto b = problem.basis.column(s);
      const double nb = std::sqrt(norm_sq(b));
      for (std::size_t m = 0; m < tw.cols(); ++m) {
        const double scale = nb * std::sqrt(norm_sq(tw.column(m))) + 1e-300;
        worst = std::max(worst, std::abs(dot(b, resid.column(m))) / scale);
      }
    }
  }
  return worst;
}

SelectionProblem random_problem(const RandomProblemSpec& spec, SplitMix64& rng) {
  const std::size_t cols = spec.groups * spec.group_size;
  Matrix basis(spec.rows, cols);
  if (spec.rank > 0) {
    Matrix left(spec.rows, spec.rank), right(spec.rank, cols);
    for (double& v : left.data()) v = rng.normal();
    for (double& v : right.data()) v = rng.normal();
    basis = matmul(left, right);
  } else {
    for (double& v : basis.data()) v = rng.normal();
  }
  Matrix w(cols, spec.outputs);
  for (double& v : w.data()) v = rng.normal();
  auto groups = spec.group_size == 1 ? singleton_groups(spec.groups) : [&] {
    std::vector<std::vector<std::size_t>> g(spec.groups);
    for (std::size_t u = 0; u < spec.groups; ++u)
      for (std::size_t j = 0; j < spec.group_size; ++j) g[u].push_back(u * spec.group_size + j);
    return g;
  }();
  if (!spec.asymmetric) return make_symmetric(std::move(basis), std::move(w), std::move(groups));
  Matrix target = basis;
  for (double& v : target.data()) v += 0.5 * rng.normal();
  return make_asymmetric(std::move(basis), std::move(target), std::move(w), std::move(groups));
}

nlohmann::json SuiteReport::to_json() const {
  return {{"instances", instances},
          {"violations",
           {{"greedy_guarantee", guarantee_violations},
            {"submodularity_ratio_definition", definition_violations},
            {"layer_error_bound", error_bound_violations},
            {"orthogonality", orthogonality_violations}}},
          {"min_guarantee_margin", min_guarantee_margin},
          {"min_error_bound_margin", min_error_bound_margin},
          {"max_orthogonality", max_orthogonality},
          {"pass", violations() == 0},
          {"checks", details}};
}

SuiteReport run_theorem_suite(const SuiteOptions& opts) {
  SplitMix64 rng(opts.seed);
  SuiteReport rep;
  rep.min_guarantee_margin = std::numeric_limits<double>::infinity();
  rep.min_error_bound_margin = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < opts.instances; ++t) {
    RandomProblemSpec spec;
    spec.groups = 4 + rng.uniform_below(opts.max_groups - 3);
    spec.group_size = rng.uniform_below(3) == 0 ? 2 + rng.uniform_below(2) : 1;
    spec.rows = 6 + rng.uniform_below(40);
    spec.outputs = 1 + rng.uniform_below(5);
    spec.asymmetric = rng.uniform_below(2) == 1;
    // Some instances are rank-deficient so gamma is genuinely below 1.
    if (rng.uniform_below(4) == 0) spec.rank = 2 + rng.uniform_below(spec.groups * spec.group_size - 1);
    const auto problem = random_problem(spec, rng);
    const std::size_t k = 1 + rng.uniform_below(std::min(opts.max_k, spec.groups));
    const SubsetOracle oracle(problem);

    const auto g = check_greedy_guarantee(problem, oracle, k);
    const auto gamma_rep = exact_submodularity_ratio(oracle, g.greedy_set, k);
    const std::size_t def_bad =
        definition_spot_check(oracle, g.greedy_set, k, gamma_rep.gamma, opts.spot_samples, rng);
    const auto e = check_layer_error_bound(problem, oracle, k);
    const Matrix w_tilde = extract_reweighted_weights(problem, g.greedy_set);
    const double ortho = orthogonality_check(problem, g.greedy_set, w_tilde);
    const double base = oracle.baseline() > 0.0 ? oracle.baseline() : 1.0;

    rep.guarantee_violations += g.pass ? 0 : 1;
    rep.definition_violations += def_bad;
    rep.error_bound_violations += e.pass ? 0 : 1;
    rep.orthogonality_violations += ortho <= kOrthoLimit ? 0 : 1;
    rep.min_guarantee_margin = std::min(rep.min_guarantee_margin, g.margin);
    rep.min_error_bound_margin = std::min(rep.min_error_bound_margin, (e.rhs - e.lhs) / base);
    rep.max_orthogonality = std::max(rep.max_orthogonality, ortho);
    rep.details.push_back({{"instance", t},
                           {"groups", spec.groups},
                           {"group_size", spec.group_size},
                           {"rows", spec.rows},
                           {"mode", spec.asymmetric ? "asymmetric" : "symmetric"},
                           {"k", k},
                           {"gamma", g.gamma},
                           {"gamma_witness", {{"L", gamma_rep.witness_l}, {"S", gamma_rep.witness_s}}},
                           {"greedy_value", g.greedy_value},
                           {"opt_value", g.opt_value},
                           {"guarantee_margin", g.margin},
                           {"guarantee_pass", g.pass},
                           {"definition_violations", def_bad},
                           {"error_bound_lhs", e.lhs},
                           {"error_bound_rhs", e.rhs},
                           {"error_bound_pass", e.pass},
                           {"orthogonality", ortho}});
    ++rep.instances;
  }
  return rep;
}

}  // namespace subprune
