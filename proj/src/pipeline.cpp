#include "subprune/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace subprune {
namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::vector<std::size_t> full_budgets(const NetworkModel& model) {
  std::vector<std::size_t> ks;
  for (auto i : prunable_layers(model)) ks.push_back(model.layers[i].out_units());
  return ks;
}

}  // namespace

std::string to_string(BudgetMode m) {
  switch (m) {
    case BudgetMode::Accuracy: return "accuracy";
    case BudgetMode::Threshold: return "threshold";
    case BudgetMode::EqualFraction: return "equal-fraction";
  }
  return "?";
}

BudgetMode parse_budget_mode(const std::string& s) {
  for (auto m : {BudgetMode::Accuracy, BudgetMode::Threshold, BudgetMode::EqualFraction})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown budget mode '" + s + "' (accuracy|threshold|equal-fraction)");
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["bundle"] = bundle;
  j["variants"] = nlohmann::json::array();
  for (auto v : variants) j["variants"].push_back(to_string(v));
  j["compression"] = compression;
  j["budget_mode"] = to_string(budget_mode);
  j["seeds"] = seeds;
  j["epsilon"] = epsilon ? nlohmann::json(*epsilon) : nlohmann::json(nullptr);
  j["out_dir"] = out_dir;
  j["reweight"] = reweight;
  j["grid"] = grid;
  return j;
}

RunContext make_context(const Bundle& bundle) {
  RunContext ctx;
  ctx.model = model_from_bundle(bundle);
  const auto data = dataset_from_bundle(bundle);
  if (data.pruning.empty()) throw std::invalid_argument("bundle has no pruning rows");
  if (data.verification.empty()) throw std::invalid_argument("bundle has no verification rows");
  ctx.prune_inputs = data.inputs.select_rows(data.pruning);
  ctx.verify_inputs = data.inputs.select_rows(data.verification);
  ctx.verify_labels = select_labels(data.labels, data.verification);
  ctx.p_orig = evaluate_accuracy(ctx.model, ctx.verify_inputs, ctx.verify_labels);
  ctx.params = count_params(ctx.model);
  ctx.flops = count_flops(ctx.model);
  return ctx;
}

BudgetPlan plan_budgets(const RunContext& ctx, Variant variant, double c, std::uint64_t seed, const RunConfig& cfg) {
  if (!(c >= 1.0)) throw std::invalid_argument("compression ratio must be >= 1");
  if (c == 1.0) {
    BudgetPlan plan;
    plan.budgets = full_budgets(ctx.model);
    plan.size = plan.size_orig = ctx.params;
    return plan;
  }
  switch (cfg.budget_mode) {
    case BudgetMode::Accuracy: {
      const auto curves = accuracy_curves(ctx.model, ctx.prune_inputs, ctx.verify_inputs, ctx.verify_labels,
                                          cfg.grid, variant, seed, cfg.reweight);
      return select_budgets(curves, ctx.p_orig, ctx.model, c);
    }
    case BudgetMode::Threshold: {
      const auto traces = layer_traces(ctx.model, forward_capture(ctx.model, ctx.prune_inputs));
      return threshold_for_compression(traces, ctx.model, c);
    }
    case BudgetMode::EqualFraction:
      return equal_fraction_budgets(ctx.model, c);
  }
  throw std::logic_error("unreachable budget mode");
}

RunRow run_one(const RunContext& ctx, Variant variant, double c, std::uint64_t seed, const RunConfig& cfg,
               PruneResult* result) {
  const auto t0 = std::chrono::steady_clock::now();
  RunRow row;
  row.variant = variant;
  row.c = c;
  row.seed = seed;
  const auto plan = plan_budgets(ctx, variant, c, seed, cfg);
  row.budgets = plan.budgets;
  row.tau = plan.tau;
  if (c == 1.0) {
    row.acc1 = ctx.p_orig;
    row.params = ctx.params;
    row.flops = ctx.flops;
    if (result) {
      *result = PruneResult{};
      result->model = ctx.model;
      result->params_before = result->params_after = ctx.params;
      result->flops_before = result->flops_after = ctx.flops;
    }
  } else {
    PrunePlan pp;
    pp.variant = variant;
    pp.budgets = plan.budgets;
    pp.seed = seed;
    pp.reweight = cfg.reweight;
    pp.epsilon = cfg.epsilon;
    auto res = prune(ctx.model, ctx.prune_inputs, pp);
    row.acc1 = evaluate_accuracy(res.model, ctx.verify_inputs, ctx.verify_labels);
    row.params = res.params_after;
    row.flops = res.flops_after;
    row.out_err = res.output_error;
    if (result) *result = std::move(res);
  }
  row.speedup = row.flops ? static_cast<double>(ctx.flops) / static_cast<double>(row.flops) : 0.0;
  row.time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

std::vector<RunRow> run_matrix(const RunContext& ctx, const RunConfig& cfg) {
  if (cfg.seeds.empty()) throw std::invalid_argument("at least one seed is required");
  if (cfg.variants.empty()) throw std::invalid_argument("at least one variant is required");
  for (double c : cfg.compression)
    if (!(c >= 1.0)) throw std::invalid_argument("compression ratio must be >= 1");
  std::vector<RunRow> rows;
  for (auto v : cfg.variants)
    for (double c : cfg.compression)
      for (auto s : cfg.seeds) rows.push_back(run_one(ctx, v, c, s, cfg));
  std::sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) {
    return std::tuple(static_cast<int>(a.variant), a.c, a.seed) < std::tuple(static_cast<int>(b.variant), b.c, b.seed);
  });
  return rows;
}

std::string rows_to_csv(const std::vector<RunRow>& rows) {
  std::ostringstream os;
  os << "variant,c,seed,acc1,params,flops,speedup,out_err,time_ms\n";
  for (const auto& r : rows) {
    os << to_string(r.variant) << ',' << fmt(r.c) << ',' << r.seed << ',' << fmt(r.acc1) << ',' << r.params << ','
       << r.flops << ',' << fmt(r.speedup) << ',' << fmt(r.out_err) << ',' << fmt(r.time_ms) << '\n';
  }
  return os.str();
}

MeanCi mean_ci(const std::vector<double>& xs) {
  MeanCi out;
  if (xs.empty()) return out;
  double sum = 0.0;
  for (double x : xs) sum += x;
  out.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
    out.half_width = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return out;
}

std::string plot_csv(const std::vector<RunRow>& rows) {
  std::map<std::pair<int, double>, std::vector<const RunRow*>> cells;
  for (const auto& r : rows) cells[{static_cast<int>(r.variant), r.c}].push_back(&r);
  std::ostringstream os;
  os << "variant,c,runs,acc1_mean,acc1_ci95,out_err_mean,out_err_ci95\n";
  for (const auto& [key, cell] : cells) {
    std::vector<double> acc, err;
    for (auto* r : cell) {
      acc.push_back(r->acc1);
      err.push_back(r->out_err);
    }
    const auto a = mean_ci(acc), e = mean_ci(err);
    os << to_string(cell.front()->variant) << ',' << fmt(key.second) << ',' << cell.size() << ',' << fmt(a.mean)
       << ',' << fmt(a.half_width) << ',' << fmt(e.mean) << ',' << fmt(e.half_width) << '\n';
  }
  return os.str();
}

nlohmann::json report_json(const RunConfig& cfg, const RunContext& ctx, const std::vector<RunRow>& rows) {
  nlohmann::json j;
  j["config"] = cfg.to_json();
  j["original"] = {{"acc1", ctx.p_orig}, {"params", ctx.params}, {"flops", ctx.flops}};
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"variant", to_string(r.variant)},
                         {"c", r.c},
                         {"seed", r.seed},
                         {"acc1", r.acc1},
                         {"params", r.params},
                         {"flops", r.flops},
                         {"speedup", r.speedup},
                         {"out_err", r.out_err},
                         {"time_ms", r.time_ms},
                         {"budgets", r.budgets},
                         {"tau", r.tau}});
  }
  return j;
}

}  // namespace subprune
