// subprune: command-line front end.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subprune/budget.hpp"
#include "subprune/bundle.hpp"
#include "subprune/objective.hpp"
#include "subprune/parallel.hpp"
#include "subprune/pipeline.hpp"
#include "subprune/synth.hpp"
#include "subprune/verify.hpp"

namespace fs = std::filesystem;
using namespace subprune;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kInfeasible = 2;
constexpr int kVerifyFailed = 3;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::vector<Variant> parse_variants(const std::vector<std::string>& names) {
  std::vector<Variant> out;
  for (const auto& n : names) out.push_back(parse_variant(n));
  return out;
}

std::vector<double> parse_grid(const std::string& name) {
  if (name == "default") return default_grid();
  if (name == "fine") return fine_grid();
  throw std::invalid_argument("unknown grid '" + name + "' (default|fine)");
}

std::string cell(double v, int prec = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

struct SynthArgs {
  SynthOptions opts;
  std::string out = "synth.zip";
};

struct PruneArgs {
  std::string bundle;
  std::vector<std::string> variants{"asym"};
  std::vector<double> compression{1.0};
  std::vector<std::uint64_t> seeds{0};
  std::string budget_mode = "accuracy";
  double epsilon = 0.0;
  std::string out = "run";
  std::string grid = "default";
  bool no_reweight = false;
  bool no_bundles = false;
};

struct BudgetArgs {
  std::string bundle;
  std::string variant = "asym";
  std::vector<double> compression{2.0};
  std::uint64_t seed = 0;
  std::string budget_mode = "accuracy";
  std::string grid = "default";
  std::string out;
};

struct VerifyArgs {
  SuiteOptions suite;
  bool inject = false;
  std::string out;
};

struct RankArgs {
  std::string bundle;
  double tol = kDefaultRankTol;
};

struct ReportArgs {
  std::string in;
  std::string plot;
};

int cmd_synth(const SynthArgs& a) {
  const auto bundle = synthesize(a.opts);
  save_bundle(bundle.manifest, bundle.tensors, a.out);
  std::cout << "wrote " << a.out << " (" << a.opts.arch << ", " << a.opts.samples << "+" << a.opts.verify_samples
            << " samples, seed " << a.opts.seed << ")\n";
  return kOk;
}

int cmd_prune(const PruneArgs& a) {
  RunConfig cfg;
  cfg.bundle = a.bundle;
  cfg.variants = parse_variants(a.variants);
  cfg.compression = a.compression;
  cfg.seeds = a.seeds;
  cfg.budget_mode = parse_budget_mode(a.budget_mode);
  if (a.epsilon > 0.0) cfg.epsilon = a.epsilon;
  cfg.out_dir = a.out;
  cfg.reweight = !a.no_reweight;
  cfg.grid = parse_grid(a.grid);

  const auto bundle = load_bundle(a.bundle);
  const auto ctx = make_context(bundle);
  const auto data = dataset_from_bundle(bundle);

  std::vector<RunRow> rows;
  for (auto v : cfg.variants) {
    for (double c : cfg.compression) {
      for (auto s : cfg.seeds) {
        PruneResult res;
        rows.push_back(run_one(ctx, v, c, s, cfg, &res));
        if (!a.no_bundles) {
          const auto name = "pruned_" + to_string(v) + "_c" + cell(c, 2) + "_s" + std::to_string(s) + ".zip";
          fs::create_directories(fs::path(a.out) / "bundles");
          const auto pruned = bundle_from_model(res.model, data, true);
          save_bundle(pruned.manifest, pruned.tensors, fs::path(a.out) / "bundles" / name);
        }
        const auto& r = rows.back();
        std::cout << to_string(v) << " c=" << cell(c, 2) << " seed=" << s << " acc1=" << cell(r.acc1)
                  << " params=" << r.params << " out_err=" << cell(r.out_err, 6) << '\n';
      }
    }
  }
  std::sort(rows.begin(), rows.end(), [](const RunRow& x, const RunRow& y) {
    return std::tuple(static_cast<int>(x.variant), x.c, x.seed) < std::tuple(static_cast<int>(y.variant), y.c, y.seed);
  });
  write_text(fs::path(a.out) / "runs.csv", rows_to_csv(rows));
  write_text(fs::path(a.out) / "plot.csv", plot_csv(rows));
  write_text(fs::path(a.out) / "report.json", report_json(cfg, ctx, rows).dump(2) + "\n");
  std::cout << "wrote " << (fs::path(a.out) / "runs.csv").string() << ", plot.csv, report.json\n";
  return kOk;
}

int cmd_budget(const BudgetArgs& a) {
  RunConfig cfg;
  cfg.bundle = a.bundle;
  cfg.budget_mode = parse_budget_mode(a.budget_mode);
  cfg.grid = parse_grid(a.grid);
  const auto variant = parse_variant(a.variant);
  const auto bundle = load_bundle(a.bundle);
  const auto ctx = make_context(bundle);
  const auto idx = prunable_layers(ctx.model);

  nlohmann::json plans = nlohmann::json::array();
  for (double c : a.compression) {
    const auto plan = plan_budgets(ctx, variant, c, a.seed, cfg);
    std::cout << "c=" << cell(c, 2) << " tau=" << cell(plan.tau, 6) << " size=" << plan.size << "/"
              << plan.size_orig << '\n';
    nlohmann::json layers = nlohmann::json::array();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& l = ctx.model.layers[idx[i]];
      std::cout << "  " << l.name << ": " << plan.budgets[i] << "/" << l.out_units() << '\n';
      layers.push_back({{"layer", l.name}, {"units", l.out_units()}, {"budget", plan.budgets[i]}});
    }
    plans.push_back({{"c", c}, {"tau", plan.tau}, {"size", plan.size}, {"size_orig", plan.size_orig},
                     {"layers", layers}});
  }
  if (!a.out.empty()) {
    nlohmann::json j{{"config", cfg.to_json()}, {"selector", to_string(variant)}, {"seed", a.seed},
                     {"p_orig", ctx.p_orig}, {"plans", plans}};
    write_text(a.out, j.dump(2) + "\n");
  }
  return kOk;
}

int cmd_verify(const VerifyArgs& a) {
  set_gain_fault(a.inject);
  const auto report = run_theorem_suite(a.suite);
  set_gain_fault(false);
  std::cout << "instances: " << report.instances << '\n'
            << "greedy guarantee violations: " << report.guarantee_violations
            << " (min margin " << report.min_guarantee_margin << ")\n"
            << "ratio definition violations: " << report.definition_violations << '\n'
            << "layer error bound violations: " << report.error_bound_violations
            << " (min margin " << report.min_error_bound_margin << ")\n"
            << "orthogonality violations: " << report.orthogonality_violations
            << " (max " << report.max_orthogonality << ")\n";
  if (!a.out.empty()) {
    auto j = report.to_json();
    j["config"] = {{"instances", a.suite.instances}, {"max_groups", a.suite.max_groups},
                   {"max_k", a.suite.max_k}, {"seed", a.suite.seed},
                   {"spot_samples", a.suite.spot_samples}, {"inject_gain_fault", a.inject}};
    write_text(a.out, j.dump(2) + "\n");
  }
  if (report.violations() != 0) {
    std::cout << "FAIL\n";
    return kVerifyFailed;
  }
  std::cout << "PASS\n";
  return kOk;
}

int cmd_rankdiag(const RankArgs& a) {
  const auto bundle = load_bundle(a.bundle);
  const auto model = model_from_bundle(bundle);
  const auto data = dataset_from_bundle(bundle);
  const auto caps = forward_capture(model, data.inputs.select_rows(data.pruning));
  std::printf("%-12s %8s %4s %8s %8s %6s %10s\n", "layer", "units", "g", "rank", "columns", "k", "k/n_l");
  for (const auto& cap : caps.captures) {
    const auto d = rank_diagnostic(cap.matrix, cap.group_size, a.tol);
    std::printf("%-12s %8zu %4zu %8zu %8zu %6zu %10.4f\n", model.layers[cap.layer].name.c_str(), d.units,
                cap.group_size, d.rank, d.columns, d.k, d.fraction);
  }
  return kOk;
}

int cmd_report(const ReportArgs& a) {
  fs::path in = a.in;
  if (fs::is_directory(in)) in /= "report.json";
  std::ifstream f(in);
  if (!f) throw std::runtime_error("cannot read " + in.string());
  const auto j = nlohmann::json::parse(f);
  std::vector<RunRow> rows;
  for (const auto& r : j.at("rows")) {
    RunRow row;
    row.variant = parse_variant(r.at("variant").get<std::string>());
    row.c = r.at("c").get<double>();
    row.seed = r.at("seed").get<std::uint64_t>();
    row.acc1 = r.at("acc1").get<double>();
    row.params = r.at("params").get<std::uint64_t>();
    row.flops = r.at("flops").get<std::uint64_t>();
    row.speedup = r.at("speedup").get<double>();
    row.out_err = r.at("out_err").get<double>();
    row.time_ms = r.at("time_ms").get<double>();
    rows.push_back(row);
  }
  const auto& orig = j.at("original");
  std::cout << "original: acc1=" << cell(orig.at("acc1").get<double>()) << " params=" << orig.at("params") << '\n';
  std::map<std::pair<int, double>, std::vector<const RunRow*>> cells;
  for (const auto& r : rows) cells[{static_cast<int>(r.variant), r.c}].push_back(&r);
  std::printf("%-11s %6s %5s %18s %22s %9s\n", "variant", "c", "runs", "acc1 (95% CI)", "out_err (95% CI)",
              "speedup");
  for (const auto& [key, runs] : cells) {
    std::vector<double> acc, err, sp;
    for (auto* r : runs) {
      acc.push_back(r->acc1);
      err.push_back(r->out_err);
      sp.push_back(r->speedup);
    }
    const auto ma = mean_ci(acc), me = mean_ci(err), ms = mean_ci(sp);
    std::printf("%-11s %6.2f %5zu %9.4f +- %.4f %12.5g +- %.3g %9.3f\n", to_string(runs.front()->variant).c_str(),
                key.second, runs.size(), ma.mean, ma.half_width, me.mean, me.half_width, ms.mean);
  }
  if (!a.plot.empty()) write_text(a.plot, plot_csv(rows));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structured pruning by greedy column selection with reweighting"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (overrides SUBPRUNE_THREADS)");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a random teacher network and data bundle");
  synth->add_option("--arch", sa.opts.arch, "mlp:d0,d1,...,dL or lenet-toy")->capture_default_str();
  synth->add_option("--samples", sa.opts.samples, "Pruning batch size")->capture_default_str();
  synth->add_option("--verify-samples", sa.opts.verify_samples, "Verification set size")->capture_default_str();
  synth->add_option("--seed", sa.opts.seed)->capture_default_str();
  synth->add_option("--out", sa.out, "Bundle path")->capture_default_str();

  PruneArgs pa;
  auto* prune = app.add_subcommand("prune", "Select budgets, prune and report metrics");
  prune->add_option("--bundle", pa.bundle)->required();
  prune->add_option("--variant", pa.variants, "layer|seq|asym|weightnorm|random")->delimiter(',');
  prune->add_option("--compression", pa.compression, "Ratios >= 1")->delimiter(',');
  prune->add_option("--seed", pa.seeds)->delimiter(',');
  prune->add_option("--budget-mode", pa.budget_mode, "accuracy|threshold|equal-fraction")->capture_default_str();
  prune->add_option("--epsilon", pa.epsilon, "Stochastic-Greedy epsilon; 0 runs full Greedy");
  prune->add_option("--grid", pa.grid, "default|fine")->capture_default_str();
  prune->add_option("--out", pa.out, "Output directory")->capture_default_str();
  prune->add_flag("--no-reweight", pa.no_reweight, "Keep original successor rows");
  prune->add_flag("--no-bundles", pa.no_bundles, "Skip writing pruned bundles");

  BudgetArgs ba;
  auto* budget = app.add_subcommand("budget", "Per-layer budgets for target compression ratios");
  budget->add_option("--bundle", ba.bundle)->required();
  budget->add_option("--variant", ba.variant, "Selector for the accuracy curves")->capture_default_str();
  budget->add_option("--compression", ba.compression)->delimiter(',');
  budget->add_option("--seed", ba.seed)->capture_default_str();
  budget->add_option("--budget-mode", ba.budget_mode)->capture_default_str();
  budget->add_option("--grid", ba.grid)->capture_default_str();
  budget->add_option("--out", ba.out, "JSON plan path");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the tiny-instance guarantee suite");
  verify->add_option("--instances", va.suite.instances)->capture_default_str();
  verify->add_option("--max-groups", va.suite.max_groups)->capture_default_str();
  verify->add_option("--max-k", va.suite.max_k)->capture_default_str();
  verify->add_option("--seed", va.suite.seed)->capture_default_str();
  verify->add_option("--spot-samples", va.suite.spot_samples)->capture_default_str();
  verify->add_flag("--inject-gain-fault", va.inject, "Negate marginal gains (mutation check)");
  verify->add_option("--out", va.out, "JSON report path");

  RankArgs ra;
  auto* rankdiag = app.add_subcommand("rankdiag", "Largest k/n_l with a non-zero ratio bound, per layer");
  rankdiag->add_option("--bundle", ra.bundle)->required();
  rankdiag->add_option("--tol", ra.tol, "Relative rank tolerance")->capture_default_str();

  ReportArgs rp;
  auto* report = app.add_subcommand("report", "Summarize a prune report");
  report->add_option("--in", rp.in, "report.json or its directory")->required();
  report->add_option("--plot", rp.plot, "Write plot CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }
  if (threads > 0) set_thread_count(threads);

  try {
    if (*synth) return cmd_synth(sa);
    if (*prune) return cmd_prune(pa);
    if (*budget) return cmd_budget(ba);
    if (*verify) return cmd_verify(va);
    if (*rankdiag) return cmd_rankdiag(ra);
    if (*report) return cmd_report(rp);
  } catch (const InfeasibleBudget& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInfeasible;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
