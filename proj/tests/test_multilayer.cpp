#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>

#include "oracles.hpp"
#include "subprune/greedy.hpp"
#include "subprune/linalg.hpp"
#include "subprune/multilayer.hpp"
#include "subprune/synth.hpp"

using namespace subprune;

namespace {

struct Toy {
  NetworkModel model;
  Matrix inputs;
};

Toy toy(const std::string& arch, std::uint64_t seed, std::size_t n = 96) {
  SplitMix64 rng(seed);
  Toy t{make_teacher(arch, rng), {}};
  t.inputs = oracle::random_matrix(n, t.model.input.size(), rng);
  return t;
}

std::vector<std::size_t> half_budgets(const NetworkModel& m) {
  std::vector<std::size_t> ks;
  for (auto i : prunable_layers(m)) ks.push_back(std::max<std::size_t>(1, m.layers[i].out_units() / 2));
  return ks;
}

}  // namespace

TEST(WeightNorm, HandExamples) {
  const auto w = Matrix::from_rows({{2, 0}, {1, 1}, {0, 0}});
  EXPECT_EQ(select_weight_norm(w, singleton_groups(3), 2), (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(select_weight_norm(Matrix(4, 2, 1.0), singleton_groups(4), 1), std::vector<std::size_t>{0});
}

TEST(WeightNorm, MatchesSortOracle) {
  SplitMix64 rng(41);
  for (int t = 0; t < 30; ++t) {
    const std::size_t units = 3 + rng.uniform_below(8), g = 1 + rng.uniform_below(3);
    const auto w = oracle::random_matrix(units * g, 3, rng);
    const auto groups = block_groups(units, g);
    const std::size_t k = 1 + rng.uniform_below(units);
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t u = 0; u < units; ++u) {
      double s = 0.0;
      for (auto r : groups[u])
        for (std::size_t c = 0; c < 3; ++c) s += std::abs(w(r, c));
      keyed.push_back({-s, u});
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> want;
    for (std::size_t i = 0; i < k; ++i) want.push_back(keyed[i].second);
    std::sort(want.begin(), want.end());
    EXPECT_EQ(select_weight_norm(w, groups, k), want);
  }
}

TEST(RandomSelector, FullBudgetAndDeterminism) {
  EXPECT_EQ(select_random(6, 6, 3), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_EQ(select_random(20, 7, 5), select_random(20, 7, 5));
  EXPECT_THROW((void)select_random(3, 4, 0), std::invalid_argument);
}

TEST(RandomSelector, UniformOverSubsets) {
  std::map<std::vector<std::size_t>, int> counts;
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) counts[select_random(5, 2, static_cast<std::uint64_t>(s))]++;
  ASSERT_EQ(counts.size(), 10u);
  const double sigma = std::sqrt(draws * 0.1 * 0.9);
  for (const auto& [set, c] : counts) EXPECT_NEAR(c, draws * 0.1, 3 * sigma);
}

TEST(ApplyPruning, FullSetWithOriginalWeightsIsNoOp) {
  for (const std::string arch : {"mlp:6,8,5,3", "lenet-toy"}) {
    auto t = toy(arch, 42, 8);
    const auto caps = forward_capture(t.model, t.inputs);
    auto m = t.model;
    for (const auto& cap : caps.captures) {
      std::vector<std::size_t> all(cap.units);
      std::iota(all.begin(), all.end(), 0);
      apply_pruning(m, cap.layer, all, successor_weight(m.layers[cap.successor]));
    }
    EXPECT_EQ(forward(m, t.inputs), forward(t.model, t.inputs)) << arch;
  }
}

TEST(ApplyPruning, ConvWeightLayoutRoundTrips) {
  auto t = toy("lenet-toy", 43, 2);
  auto& conv2 = t.model.layers[2];
  const auto original = conv2.weight;
  set_successor_weight(conv2, successor_weight(conv2));
  EXPECT_EQ(conv2.weight, original);
}

TEST(FinalOutputError, IdenticalModelsAndLinearNetwork) {
  auto t = toy("mlp:5,7,4", 44, 40);
  EXPECT_EQ(final_output_error(t.model, t.model, t.inputs), 0.0);
  // no nonlinearity after the pruned layer: the output change is the layer objective residual
  t.model.layers[0].nonlinearity = Nonlinearity::None;
  PrunePlan plan;
  plan.variant = Variant::Layer;
  plan.budgets = {3};
  const auto res = prune(t.model, t.inputs, plan);
  const auto& lo = res.layers[0];
  EXPECT_NEAR(res.output_error, lo.baseline - lo.value, 1e-9 * lo.baseline);
  // loop oracle on the logits
  const auto y0 = forward(t.model, t.inputs), y1 = forward(res.model, t.inputs);
  double s = 0.0;
  for (std::size_t i = 0; i < y0.size(); ++i) s += (y0.data()[i] - y1.data()[i]) * (y0.data()[i] - y1.data()[i]);
  EXPECT_DOUBLE_EQ(res.output_error, s);
}

TEST(LayerInChange, MatchesStandaloneGreedyPerLayer) {
  for (const std::string arch : {"mlp:10,16,12,4", "lenet-toy"}) {
    auto t = toy(arch, 45, 40);
    PrunePlan plan;
    plan.variant = Variant::Layer;
    plan.budgets = half_budgets(t.model);
    const auto res = prune(t.model, t.inputs, plan);
    const auto caps = forward_capture(t.model, t.inputs);
    for (std::size_t i = 0; i < caps.captures.size(); ++i) {
      const auto p = capture_problem(t.model, caps.captures[i]);
      const auto tr = greedy(p, plan.budgets[i]);
      EXPECT_EQ(res.layers[i].selected, tr.order) << arch;
      EXPECT_NEAR(res.layers[i].value, tr.values.back(), 1e-9 * tr.baseline);
      // mask matches the complement of the selection
      const auto& mask = *res.model.layers[caps.captures[i].layer].kept_mask;
      for (std::size_t u = 0; u < mask.size(); ++u)
        EXPECT_EQ(mask[u], std::find(tr.order.begin(), tr.order.end(), u) != tr.order.end());
    }
  }
}

TEST(LayerInChange, OrderIndependent) {
  auto t = toy("mlp:8,10,9,7,3", 46, 50);
  const auto caps = forward_capture(t.model, t.inputs);
  PrunePlan plan;
  plan.variant = Variant::Layer;
  plan.budgets = half_budgets(t.model);
  const auto fwd = prune_layer_in_change(t.model, t.inputs, caps, plan);
  // process layers back to front by hand
  auto m = t.model;
  for (std::size_t i = caps.captures.size(); i-- > 0;) {
    const auto p = capture_problem(t.model, caps.captures[i]);
    const auto tr = greedy(p, plan.budgets[i]);
    apply_pruning(m, caps.captures[i].layer, tr.order, extract_reweighted_weights(p, tr.order));
  }
  EXPECT_EQ(forward(m, t.inputs), forward(fwd.model, t.inputs));
}

TEST(Sequential, FullEarlierBudgetsReproduceLayerInChange) {
  for (const std::string arch : {"mlp:10,16,12,6,4", "lenet-toy"}) {
    auto t = toy(arch, 47, 60);
    const auto idx = prunable_layers(t.model);
    for (std::size_t target = 0; target < idx.size(); ++target) {
      PrunePlan plan;
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t n = t.model.layers[idx[i]].out_units();
        plan.budgets.push_back(i == target ? std::max<std::size_t>(1, n / 3) : n);
      }
      plan.variant = Variant::Layer;
      const auto base = prune(t.model, t.inputs, plan);
      for (auto v : {Variant::Seq, Variant::Asym}) {
        plan.variant = v;
        const auto res = prune(t.model, t.inputs, plan);
        EXPECT_EQ(res.layers[target].selected, base.layers[target].selected) << arch << " " << to_string(v);
      }
    }
  }
}

TEST(Sequential, SeqObjectiveEqualsStandaloneOnUpdatedActivations) {
  auto t = toy("mlp:10,14,12,4", 48, 60);
  PrunePlan plan;
  plan.variant = Variant::Seq;
  plan.budgets = half_budgets(t.model);
  const auto res = prune(t.model, t.inputs, plan);
  // B for layer 2: model with only layer 1 pruned as seq did
  auto partial = t.model;
  apply_pruning(partial, res.layers[0].layer, res.layers[0].selected, res.layers[0].reweighted);
  const auto caps = forward_capture(partial, t.inputs);
  const auto p = capture_problem(partial, caps.captures[1]);
  const auto tr = greedy(p, plan.budgets[1]);
  EXPECT_EQ(res.layers[1].selected, tr.order);
  EXPECT_NEAR(res.layers[1].value, tr.values.back(), 1e-9 * tr.baseline);
}

TEST(Sequential, AsymWeightsAreLeastSquaresOptimalForTheirSet) {
  auto t = toy("mlp:10,14,12,4", 49, 60);
  PrunePlan plan;
  plan.variant = Variant::Asym;
  plan.budgets = half_budgets(t.model);
  const auto res = prune(t.model, t.inputs, plan);
  auto partial = t.model;
  apply_pruning(partial, res.layers[0].layer, res.layers[0].selected, res.layers[0].reweighted);
  const auto b = forward_capture(partial, t.inputs).captures[1];
  const auto a = forward_capture(t.model, t.inputs).captures[1];
  const auto p = make_asymmetric(b.matrix, a.matrix, successor_weight(t.model.layers[b.successor]));
  const auto& lo = res.layers[1];
  EXPECT_EQ(lo.mode, Mode::Asymmetric);
  const auto ref = oracle::reweighted(p, lo.selected);
  const double want = frob_norm_sq(matmul(a.matrix, p.weights) - matmul(b.matrix, ref));
  EXPECT_NEAR(lo.residual_error, want, 1e-8 * frob_norm_sq(matmul(a.matrix, p.weights)));
}

TEST(Sequential, CapturesReflectEarlierPruning) {
  auto t = toy("mlp:8,10,9,3", 50, 30);
  PrunePlan plan;
  plan.variant = Variant::Seq;
  plan.budgets = half_budgets(t.model);
  const auto res = prune(t.model, t.inputs, plan);
  // after pruning, the last capture's dead columns are exactly zero
  const auto caps = forward_capture(res.model, t.inputs);
  const auto& mask = *res.model.layers[caps.captures[0].layer].kept_mask;
  for (std::size_t u = 0; u < mask.size(); ++u)
    if (!mask[u]) {
      for (std::size_t r = 0; r < caps.captures[0].matrix.rows(); ++r) EXPECT_EQ(caps.captures[0].matrix(r, u), 0.0);
    }
}

TEST(Baselines, ReweightFlag) {
  auto t = toy("mlp:8,10,3", 51, 40);
  PrunePlan plan;
  plan.variant = Variant::WeightNorm;
  plan.budgets = {4};
  plan.reweight = false;
  const auto raw = prune(t.model, t.inputs, plan);
  const auto w = successor_weight(t.model.layers[1]);
  const auto& lo = raw.layers[0];
  for (std::size_t r = 0; r < w.rows(); ++r) {
    const bool kept = std::find(lo.selected.begin(), lo.selected.end(), r) != lo.selected.end();
    for (std::size_t c = 0; c < w.cols(); ++c) EXPECT_EQ(lo.reweighted(r, c), kept ? w(r, c) : 0.0);
  }
  plan.reweight = true;
  const auto rw = prune(t.model, t.inputs, plan);
  EXPECT_EQ(rw.layers[0].selected, lo.selected);
  EXPECT_LE(rw.layers[0].residual_error, lo.residual_error + 1e-12);
}

TEST(Plan, RejectsBadBudgets) {
  auto t = toy("mlp:4,5,3", 52, 10);
  PrunePlan plan;
  plan.budgets = {0};
  EXPECT_THROW((void)prune(t.model, t.inputs, plan), std::invalid_argument);
  plan.budgets = {6};
  EXPECT_THROW((void)prune(t.model, t.inputs, plan), std::invalid_argument);
  plan.budgets = {2, 2};
  EXPECT_THROW((void)prune(t.model, t.inputs, plan), std::invalid_argument);
  EXPECT_THROW((void)parse_variant("bogus"), std::invalid_argument);
}

TEST(Plan, ParamsShrinkWithBudgets) {
  auto t = toy("mlp:6,10,8,3", 53, 20);
  PrunePlan plan;
  plan.variant = Variant::Random;
  plan.budgets = {5, 2};
  const auto res = prune(t.model, t.inputs, plan);
  // 6*5+5 + 5*2+2 + 2*3+3
  EXPECT_EQ(res.params_after, 35u + 12u + 9u);
  EXPECT_EQ(res.params_before, 6u * 10 + 10 + 10 * 8 + 8 + 8 * 3 + 3);
  EXPECT_LT(res.flops_after, res.flops_before);
}
