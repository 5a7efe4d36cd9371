#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "subprune/linalg.hpp"
#include "subprune/objective.hpp"
#include "subprune/random.hpp"

namespace subprune {

class InstanceTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr std::size_t kMaxOracleGroups = 14;
inline constexpr std::size_t kMaxGammaAnchor = 10;
inline constexpr std::uint64_t kMaxCombinations = 200000;

struct OptResult {
  double value = 0.0;
  std::vector<std::size_t> set;  // ascending
};

/// Exhaustive max of F over all k-subsets; ties go to the lexicographically
/// smallest set.
OptResult brute_force_opt(const SelectionProblem& problem, std::size_t k);

/// F on every subset of the ground set, indexed by bitmask.
class SubsetOracle {
 public:
  explicit SubsetOracle(const SelectionProblem& problem);
  std::size_t size() const noexcept { return n_; }
  double baseline() const noexcept { return baseline_; }
  double value(std::uint32_t mask) const { return values_[mask]; }
  double gain(std::uint32_t add, std::uint32_t base) const { return values_[add | base] - values_[base]; }

 private:
  std::size_t n_ = 0;
  double baseline_ = 0.0;
  std::vector<double> values_;
};

std::uint32_t to_mask(const std::vector<std::size_t>& groups);
std::vector<std::size_t> from_mask(std::uint32_t mask);

struct GammaReport {
  double gamma = 1.0;
  std::uint64_t pairs_evaluated = 0;
  std::uint64_t pairs_skipped = 0;
  bool degenerate = false;  // every pair had F(S|L) ~ 0
  std::vector<std::size_t> witness_l;
  std::vector<std::size_t> witness_s;
};

/// min over L within U and disjoint non-empty S with |S| <= k of
/// sum_i F(i|L) / F(S|L). Pairs with F(S|L) <= 1e-12 * baseline are skipped.
GammaReport exact_submodularity_ratio(const SubsetOracle& oracle, const std::vector<std::size_t>& u,
                                      std::size_t k);
GammaReport exact_submodularity_ratio(const SelectionProblem& problem, const std::vector<std::size_t>& u,
                                      std::size_t k);

/// Checks gamma * F(S|L) <= sum_i F(i|L) on `samples` random pairs.
std::size_t definition_spot_check(const SubsetOracle& oracle, const std::vector<std::size_t>& u, std::size_t k,
                                  double gamma, std::size_t samples, SplitMix64& rng);

struct GuaranteeCheck {
  bool pass = false;
  double greedy_value = 0.0;
  double opt_value = 0.0;
  double gamma = 1.0;
  double bound = 0.0;   // (1 - e^-gamma) * OPT
  double margin = 0.0;  // greedy_value - bound, scaled by baseline
  std::vector<std::size_t> greedy_set;
  std::vector<std::size_t> opt_set;
};

GuaranteeCheck check_greedy_guarantee(const SelectionProblem& problem, std::size_t k);
GuaranteeCheck check_greedy_guarantee(const SelectionProblem& problem, const SubsetOracle& oracle, std::size_t k);

struct ErrorBoundCheck {
  bool pass = false;
  double lhs = 0.0;  // |T W - B_S W~|^2
  double rhs = 0.0;
  double gamma = 1.0;  // gamma_{S, n}
  std::size_t k = 0;
  std::size_t n = 0;
};

/// Symmetric: lhs <= e^{-gamma k/n} |TW|^2. Asymmetric adds
/// (1 - e^{-gamma k/n}) min_X |TW - B X|^2.
ErrorBoundCheck check_layer_error_bound(const SelectionProblem& problem, std::size_t k);
ErrorBoundCheck check_layer_error_bound(const SelectionProblem& problem, const SubsetOracle& oracle, std::size_t k);

struct RankDiagnostic {
  std::size_t rank = 0;
  std::size_t columns = 0;
  std::size_t units = 0;
  std::size_t k = 0;
  double fraction = 1.0;
};

/// Full column rank gives 1.0; otherwise the largest k with 2 k g <= rank.
RankDiagnostic rank_diagnostic(const Matrix& a, std::size_t group_size, double tol = kDefaultRankTol);

/// max |b_s^T (T w_m - B w~_m)| / (|b_s| |T w_m|) over s in M(S).
double orthogonality_check(const SelectionProblem& problem, const std::vector<std::size_t>& groups,
                           const Matrix& w_tilde);

struct RandomProblemSpec {
  std::size_t rows = 32;
  std::size_t groups = 8;
  std::size_t group_size = 1;
  std::size_t outputs = 4;
  bool asymmetric = false;
  /// 0 keeps the generic (full) rank.
  std::size_t rank = 0;
};

/// Gaussian instance; asymmetric targets are the basis plus a perturbation.
SelectionProblem random_problem(const RandomProblemSpec& spec, SplitMix64& rng);

struct SuiteOptions {
  std::size_t instances = 50;
  std::size_t max_groups = 10;
  std::size_t max_k = 4;
  std::uint64_t seed = 2024;
  std::size_t spot_samples = 200;
};

struct SuiteReport {
  std::size_t instances = 0;
  std::size_t guarantee_violations = 0;
  std::size_t definition_violations = 0;
  std::size_t error_bound_violations = 0;
  std::size_t orthogonality_violations = 0;
  double min_guarantee_margin = 0.0;
  double min_error_bound_margin = 0.0;
  double max_orthogonality = 0.0;
  nlohmann::json details = nlohmann::json::array();

  std::size_t violations() const noexcept {
    return guarantee_violations + definition_violations + error_bound_violations + orthogonality_violations;
  }
  nlohmann::json to_json() const;
};

SuiteReport run_theorem_suite(const SuiteOptions& opts);

}  // namespace subprune
