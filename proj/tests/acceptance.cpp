// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "budget_oracle.hpp"
#include "oracles.hpp"
#include "subprune/budget.hpp"
#include "subprune/greedy.hpp"
#include "subprune/linalg.hpp"
#include "subprune/multilayer.hpp"
#include "subprune/pipeline.hpp"
#include "subprune/synth.hpp"
#include "subprune/verify.hpp"

using namespace subprune;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(const char* name, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " [over time limit " + std::to_string(limit_s) + " s]";
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-28s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

std::vector<std::size_t> iota_vec(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Outcome incremental_consistency() {
  SplitMix64 rng(1001);
  double worst = 0.0, worst_oracle = 0.0;
  std::size_t steps = 0, oracle_steps = 0;
  for (int t = 0; t < 200; ++t) {
    RandomProblemSpec s;
    s.group_size = t % 2 == 0 ? 1 : 2 + rng.uniform_below(2);
    s.groups = s.group_size == 1 ? 2 + rng.uniform_below(23) : 2 + rng.uniform_below(24 / s.group_size - 1);
    s.rows = 4 + rng.uniform_below(61);
    s.outputs = 1 + rng.uniform_below(12);
    s.asymmetric = (t / 2) % 2 == 1;
    if (t % 7 == 0) s.rank = 1 + rng.uniform_below(s.groups * s.group_size);
    const auto p = random_problem(s, rng);
    const auto trace = greedy(p, p.group_count());
    const double base = trace.baseline;
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const std::vector<std::size_t> prefix(trace.order.begin(), trace.order.begin() + static_cast<std::ptrdiff_t>(i + 1));
      worst = std::max(worst, std::abs(trace.values[i] - eval_from_scratch(p, prefix).value) / base);
      ++steps;
      // normal equations are only trustworthy when B_S has full column rank
      if (s.rank == 0 && s.rows >= s.groups * s.group_size + 2) {
        worst_oracle = std::max(worst_oracle, std::abs(trace.values[i] - oracle::value(p, prefix)) / base);
        ++oracle_steps;
      }
    }
  }
  return {worst <= 1e-8 && worst_oracle <= 1e-8,
          fmt("%.0f steps, max rel diff %.2e (from scratch), %.2e over %.0f normal-equation steps", double(steps), worst,
              worst_oracle, double(oracle_steps))};
}

Outcome theorem_suite() {
  SuiteOptions o;
  o.instances = 50;
  o.max_groups = 10;
  o.max_k = 4;
  const auto r = run_theorem_suite(o);
  std::ostringstream d;
  d << r.instances << " instances, violations guarantee=" << r.guarantee_violations
    << " definition=" << r.definition_violations << " error_bound=" << r.error_bound_violations
    << " orthogonality=" << r.orthogonality_violations << ", min margins " << r.min_guarantee_margin << " / "
    << r.min_error_bound_margin << ", max ortho " << r.max_orthogonality;
  return {r.instances == 50 && r.violations() == 0, d.str()};
}

Outcome group_equivalence() {
  SplitMix64 rng(1003);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    RandomProblemSpec s;
    const std::size_t sizes[] = {2, 3, 4, 9};
    s.group_size = sizes[t % 4];
    s.groups = 2 + rng.uniform_below(s.group_size == 9 ? 3 : 6);
    s.rows = s.groups * s.group_size + 4 + rng.uniform_below(40);
    s.outputs = 1 + rng.uniform_below(8);
    s.asymmetric = t % 2 == 1;
    const auto p = random_problem(s, rng);
    auto flat = p;
    flat.groups = singleton_groups(p.basis.cols());
    const auto sel = sample_without_replacement(iota_vec(p.group_count()), 1 + rng.uniform_below(p.group_count()), rng);
    auto st = init_state(p);
    for (auto g : sel) apply_selection(st, g);
    auto fst = init_state(flat);
    for (auto c : oracle::expand(p, sel)) apply_selection(fst, c);
    const double ref = oracle::value(flat, oracle::expand(p, sel));
    worst = std::max({worst, std::abs(st.value - fst.value) / st.baseline, std::abs(st.value - ref) / st.baseline});
  }
  return {worst <= 1e-10, fmt("50 channel instances, max |G(S) - F(M(S))| / baseline = %.2e", worst)};
}

Outcome reweighting_optimality() {
  SplitMix64 rng(1004);
  std::size_t decreases = 0;
  double min_increase = INFINITY;
  for (int t = 0; t < 100; ++t) {
    RandomProblemSpec s;
    s.group_size = t % 3 == 0 ? 2 : 1;
    s.groups = 3 + rng.uniform_below(10);
    s.rows = 8 + rng.uniform_below(50);
    s.outputs = 1 + rng.uniform_below(6);
    s.asymmetric = t % 2 == 1;
    const auto p = random_problem(s, rng);
    const auto sel = sample_without_replacement(iota_vec(p.group_count()), 1 + rng.uniform_below(p.group_count()), rng);
    const Matrix w = extract_reweighted_weights(p, sel);
    Matrix delta(w.rows(), w.cols());
    for (auto r : oracle::expand(p, sel))
      for (std::size_t m = 0; m < w.cols(); ++m) delta(r, m) = rng.normal();
    delta = (1e-3 / std::sqrt(oracle::sq(delta))) * delta;
    const double before = reconstruction_error(p, w);
    const double after = reconstruction_error(p, w + delta);
    if (after < before) ++decreases;
    min_increase = std::min(min_increase, after - before);
  }
  return {decreases == 0, fmt("100 triples, %.0f decreases, min increase %.3e", double(decreases), min_increase)};
}

Outcome decay_shape() {
  SplitMix64 rng(1005);
  std::size_t bumps = 0;
  double worst_final = 0.0;
  for (int t = 0; t < 10; ++t) {
    const auto p = make_symmetric(oracle::random_matrix(128, 20, rng), oracle::random_matrix(20, 1 + t, rng));
    const auto trace = greedy(p, 20);
    for (std::size_t i = 1; i < trace.size(); ++i)
      if (trace.relative_error(i) > trace.relative_error(i - 1)) ++bumps;
    worst_final = std::max(worst_final, trace.relative_error(trace.size() - 1));
  }
  return {bumps == 0 && worst_final <= 1e-9,
          fmt("10 layers n=128 n_l=20, %.0f increases, max final relative error %.2e", double(bumps), worst_final)};
}

Outcome comparative() {
  const auto ctx = make_context(synthesize(SynthOptions{}));
  RunConfig cfg;
  cfg.variants = {Variant::Asym, Variant::Random, Variant::WeightNorm};
  cfg.compression = {4.0};
  cfg.seeds.clear();
  for (std::uint64_t s = 0; s < 20; ++s) cfg.seeds.push_back(s);
  const auto rows = run_matrix(ctx, cfg);
  std::vector<double> acc[5], err[5];
  for (const auto& r : rows) {
    acc[static_cast<int>(r.variant)].push_back(r.acc1);
    err[static_cast<int>(r.variant)].push_back(r.out_err);
  }
  const auto a_acc = mean_ci(acc[static_cast<int>(Variant::Asym)]);
  const auto r_acc = mean_ci(acc[static_cast<int>(Variant::Random)]);
  const auto a_err = mean_ci(err[static_cast<int>(Variant::Asym)]);
  const auto w_err = mean_ci(err[static_cast<int>(Variant::WeightNorm)]);
  const bool ok = a_acc.mean >= r_acc.mean + 0.02 && a_err.mean <= w_err.mean;
  return {ok, fmt("acc asym %.4f random %.4f (+-%.4f); ", a_acc.mean, r_acc.mean, r_acc.half_width) +
                  fmt("out_err asym %.4g weightnorm %.4g; original acc %.4f", a_err.mean, w_err.mean, ctx.p_orig)};
}

Outcome budget_optimality() {
  SplitMix64 rng(1007);
  std::size_t mismatches = 0, oversize = 0, checked = 0, infeasible = 0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t n1 = 6 + rng.uniform_below(60), n2 = 6 + rng.uniform_below(60);
    const double p_orig = rng.uniform(0.5, 1.0);
    const std::vector<AccuracyCurve> curves{oracle::random_curve(rng, n1, 2 + rng.uniform_below(19), p_orig),
                                            oracle::random_curve(rng, n2, 2 + rng.uniform_below(19), p_orig)};
    const auto size = oracle::two_layer_size(8 + rng.uniform_below(30), n1, n2, 2 + rng.uniform_below(10));
    for (double c : {1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 10.0}) {
      const auto want = oracle::exhaustive(curves, p_orig, size, c);
      ++checked;
      try {
        const auto plan = select_budgets(curves, p_orig, size, c);
        if (!want.feasible || plan.tau != want.tau || plan.budgets != want.budgets) ++mismatches;
        if (static_cast<double>(plan.size) > static_cast<double>(plan.size_orig) / c) ++oversize;
      } catch (const InfeasibleBudget&) {
        ++infeasible;
        if (want.feasible) ++mismatches;
      }
    }
  }
  return {mismatches == 0 && oversize == 0,
          fmt("%.0f (curve set, c) cases, %.0f infeasible, %.0f mismatches, %.0f over size", double(checked),
              double(infeasible), double(mismatches), double(oversize))};
}

Outcome sequential_sanity() {
  std::size_t compared = 0, differ = 0;
  for (const char* arch : {"mlp:20,64,48,10", "lenet-toy"}) {
    SynthOptions o;
    o.arch = arch;
    o.samples = 256;
    const auto b = synthesize(o);
    const auto model = model_from_bundle(b);
    const auto data = dataset_from_bundle(b);
    const auto x = data.inputs.select_rows(data.pruning);
    const auto idx = prunable_layers(model);
    std::vector<std::size_t> full;
    for (auto i : idx) full.push_back(model.layers[i].out_units());
    for (std::size_t l = 0; l < idx.size(); ++l) {
      for (std::size_t k : {std::size_t{1}, full[l] / 2, full[l] - 1}) {
        if (k == 0) continue;
        PrunePlan plan;
        plan.budgets = full;
        plan.budgets[l] = k;
        plan.variant = Variant::Layer;
        const auto ref = prune(model, x, plan);
        for (auto v : {Variant::Seq, Variant::Asym}) {
          plan.variant = v;
          const auto got = prune(model, x, plan);
          ++compared;
          if (got.layers[l].selected != ref.layers[l].selected || !(got.layers[l].reweighted == ref.layers[l].reweighted))
            ++differ;
        }
      }
    }
  }
  return {differ == 0, fmt("%.0f layer selections compared, %.0f differ", double(compared), double(differ))};
}

Outcome stochastic() {
  SplitMix64 rng(1009);
  std::size_t bad = 0;
  const bool size_ok = sample_size(100, 10, 0.05) == 30;
  for (int t = 0; t < 20; ++t) {
    RandomProblemSpec s;
    s.groups = 4 + rng.uniform_below(20);
    s.rows = 30;
    s.asymmetric = t % 2 == 1;
    const auto p = random_problem(s, rng);
    const std::size_t k = 1 + rng.uniform_below(s.groups);
    const auto g = greedy(p, k);
    // epsilon this small makes every sample the whole remaining pool
    const auto full = stochastic_greedy(p, k, 1e-300, 5);
    if (full.order != g.order || full.values != g.values) ++bad;
    const auto a = stochastic_greedy(p, k, 0.3, 77), b = stochastic_greedy(p, k, 0.3, 77);
    if (a.order != b.order || a.values != b.values) ++bad;
  }
  return {size_ok && bad == 0, fmt("sample_size(100,10,0.05)=%.0f, %.0f mismatches over 20 instances",
                                   double(sample_size(100, 10, 0.05)), double(bad))};
}

Outcome rank_rule() {
  SplitMix64 rng(1010);
  const Matrix deficient = oracle::loop_matmul(oracle::random_matrix(40, 4, rng), oracle::random_matrix(4, 6, rng));
  const auto d = rank_diagnostic(deficient, 1);
  const auto f = rank_diagnostic(oracle::random_matrix(40, 6, rng), 1);
  const bool ok = d.rank == 4 && std::abs(d.fraction - 1.0 / 3.0) < 1e-15 && f.fraction == 1.0;
  return {ok, fmt("rank-4 n_l=6 -> rank %.0f fraction %.4f; full rank -> %.4f", double(d.rank), d.fraction, f.fraction)};
}

}  // namespace

int main() {
  criterion("incremental-consistency", 30, incremental_consistency);
  criterion("theorem-suite", 60, theorem_suite);
  criterion("group-neuron-equivalence", 0, group_equivalence);
  criterion("reweighting-optimality", 0, reweighting_optimality);
  criterion("exponential-decay-shape", 0, decay_shape);
  criterion("comparative-harness", 300, comparative);
  criterion("budget-selection-optimality", 0, budget_optimality);
  criterion("sequential-variant-sanity", 0, sequential_sanity);
  criterion("stochastic-greedy", 0, stochastic);
  criterion("rank-diagnostic", 0, rank_rule);
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
