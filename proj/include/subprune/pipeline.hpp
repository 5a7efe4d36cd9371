#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "subprune/budget.hpp"
#include "subprune/multilayer.hpp"
#include "subprune/network.hpp"

namespace subprune {

enum class BudgetMode { Accuracy, Threshold, EqualFraction };

std::string to_string(BudgetMode m);
/// accuracy | threshold | equal-fraction
BudgetMode parse_budget_mode(const std::string& s);

struct RunConfig {
  std::string bundle;
  std::vector<Variant> variants{Variant::Asym};
  std::vector<double> compression{1.0};
  BudgetMode budget_mode = BudgetMode::Accuracy;
  std::vector<std::uint64_t> seeds{0};
  std::optional<double> epsilon;
  std::string out_dir = ".";
  bool reweight = true;
  std::vector<double> grid = default_grid();

  nlohmann::json to_json() const;
};

/// Bundle contents split into the pruning batch and the verification set.
struct RunContext {
  NetworkModel model;
  Matrix prune_inputs;
  Matrix verify_inputs;
  std::vector<std::int64_t> verify_labels;
  double p_orig = 0.0;  // verification accuracy of the unpruned model
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
};

RunContext make_context(const Bundle& bundle);

struct RunRow {
  Variant variant = Variant::Asym;
  double c = 1.0;
  std::uint64_t seed = 0;
  double acc1 = 0.0;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  double speedup = 1.0;
  double out_err = 0.0;
  double time_ms = 0.0;
  std::vector<std::size_t> budgets;
  double tau = 0.0;
};

/// Budgets for one (variant, c, seed); c == 1 keeps every unit.
BudgetPlan plan_budgets(const RunContext& ctx, Variant variant, double c, std::uint64_t seed, const RunConfig& cfg);
/// Budget selection plus pruning. Throws InfeasibleBudget.
RunRow run_one(const RunContext& ctx, Variant variant, double c, std::uint64_t seed, const RunConfig& cfg,
               PruneResult* result = nullptr);
/// Every variant x ratio x seed, sorted by (variant, c, seed).
std::vector<RunRow> run_matrix(const RunContext& ctx, const RunConfig& cfg);

/// Columns: variant,c,seed,acc1,params,flops,speedup,out_err,time_ms
std::string rows_to_csv(const std::vector<RunRow>& rows);
/// Per (variant, c): mean accuracy and output error with 95% intervals.
std::string plot_csv(const std::vector<RunRow>& rows);
nlohmann::json report_json(const RunConfig& cfg, const RunContext& ctx, const std::vector<RunRow>& rows);

struct MeanCi {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 standard errors
};
MeanCi mean_ci(const std::vector<double>& xs);

}  // namespace subprune
