#include <gtest/gtest.h>

#include "subprune/pipeline.hpp"
#include "subprune/synth.hpp"

using namespace subprune;

namespace {

RunContext small_context() {
  SynthOptions o;
  o.arch = "mlp:10,24,16,4";
  o.samples = 120;
  o.verify_samples = 120;
  o.seed = 5;
  return make_context(synthesize(o));
}

}  // namespace

TEST(Pipeline, UnitCompressionIsTheOriginal) {
  const auto ctx = small_context();
  RunConfig cfg;
  for (auto v : {Variant::Asym, Variant::Random}) {
    const auto row = run_one(ctx, v, 1.0, 0, cfg);
    EXPECT_EQ(row.acc1, ctx.p_orig);
    EXPECT_EQ(row.out_err, 0.0);
    EXPECT_EQ(row.params, ctx.params);
    EXPECT_EQ(row.speedup, 1.0);
  }
}

TEST(Pipeline, RandomVariantIsReproducible) {
  const auto ctx = small_context();
  RunConfig cfg;
  cfg.variants = {Variant::Random};
  cfg.compression = {2.0};
  cfg.seeds = {3, 4};
  const auto a = run_matrix(ctx, cfg), b = run_matrix(ctx, cfg);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].acc1, b[i].acc1);
    EXPECT_EQ(a[i].out_err, b[i].out_err);
    EXPECT_EQ(a[i].budgets, b[i].budgets);
  }
}

TEST(Pipeline, EveryBudgetModeMeetsTheRatio) {
  const auto ctx = small_context();
  for (auto mode : {BudgetMode::Accuracy, BudgetMode::Threshold, BudgetMode::EqualFraction}) {
    RunConfig cfg;
    cfg.budget_mode = mode;
    const auto row = run_one(ctx, Variant::Asym, 2.0, 0, cfg);
    EXPECT_LE(static_cast<double>(row.params) * 2.0, static_cast<double>(ctx.params)) << to_string(mode);
    EXPECT_GE(row.speedup, 1.0);
  }
  RunConfig cfg;
  EXPECT_THROW((void)run_one(ctx, Variant::Asym, 500.0, 0, cfg), InfeasibleBudget);
  EXPECT_THROW((void)run_one(ctx, Variant::Asym, 0.5, 0, cfg), std::invalid_argument);
}

TEST(Pipeline, ReportFormats) {
  const auto ctx = small_context();
  RunConfig cfg;
  cfg.variants = {Variant::Random, Variant::Layer};
  cfg.compression = {2.0, 1.0};
  cfg.seeds = {1, 0};
  const auto rows = run_matrix(ctx, cfg);
  ASSERT_EQ(rows.size(), 8u);
  // sorted by variant, then c, then seed
  EXPECT_EQ(rows[0].variant, Variant::Layer);
  EXPECT_EQ(rows[0].c, 1.0);
  EXPECT_EQ(rows[0].seed, 0u);
  EXPECT_EQ(rows[7].variant, Variant::Random);
  EXPECT_EQ(rows[7].c, 2.0);
  const auto csv = rows_to_csv(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "variant,c,seed,acc1,params,flops,speedup,out_err,time_ms");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
  const auto plot = plot_csv(rows);
  EXPECT_EQ(std::count(plot.begin(), plot.end(), '\n'), 5);
  const auto j = report_json(cfg, ctx, rows);
  EXPECT_EQ(j["config"]["budget_mode"], "accuracy");
  EXPECT_EQ(j["rows"].size(), 8u);
  EXPECT_EQ(j["rows"][0]["budgets"].size(), 2u);
}

TEST(Pipeline, MeanCi) {
  const auto one = mean_ci({2.0});
  EXPECT_EQ(one.mean, 2.0);
  EXPECT_EQ(one.half_width, 0.0);
  const auto m = mean_ci({1.0, 2.0, 3.0, 4.0});
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  // sample sd sqrt(5/3), n = 4
  EXPECT_NEAR(m.half_width, 1.96 * std::sqrt(5.0 / 3.0) / 2.0, 1e-12);
  EXPECT_THROW((void)parse_budget_mode("nope"), std::invalid_argument);
}
