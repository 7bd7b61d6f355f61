#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hte/causal_boost.hpp"
#include "hte/causal_mars.hpp"
#include "hte/forest.hpp"
#include "hte/rng.hpp"
#include "hte/types.hpp"

namespace hte {

/// Declarative synthetic scenario: sizes, mean/effect function ids, noise
/// variance and treatment-assignment mode.
struct ScenarioSpec {
  int id = 0;
  int n = 0;
  int p = 0;
  int mu_fn = 1;
  int tau_fn = 1;
  double sigma2 = 1.0;
  bool biased = false;  // true: assignment depends on mu and tau
};

/// The 16 built-in scenarios (ids 1..16; 9..16 use biased assignment).
const std::array<ScenarioSpec, 16>& scenario_table();
const ScenarioSpec& scenario(int id);

/// Test functions f1..f8 on a covariate vector with >= 9 entries.
double eval_f(int k, std::span<const double> x);

/// Odd-numbered covariates (1-based) standard normal, even-numbered
/// Bernoulli(1/2) stored as 0/1.
Matrix draw_features(std::size_t n, std::size_t p, Rng& rng);

/// Overflow-safe logistic of mu - tau/2.
double biased_propensity(double mu, double tau);

struct SimDraw {
  Dataset dataset;
  std::vector<double> tau_true;
  std::vector<double> pi_true;
  int redraws = 0;  // wholesale treatment redraws due to an empty arm
};

SimDraw generate(const ScenarioSpec& spec, std::uint64_t seed);

double mse_effect(std::span<const double> est, std::span<const double> truth);

struct BenchResult {
  int scenario = 0;
  std::string method;
  int rep = 0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double wall_ms = 0.0;
  bool failed = false;
  std::string error;
};

/// Method hyperparameters used by the benchmark runner. The defaults are a
/// desk-scale configuration (reduced tree counts, boosting stages and bag
/// sizes) so the full 16-scenario sweep runs in minutes, not hours.
struct BenchConfig {
  ForestParams forest{200, 5, 5, 0, true, 0};
  BoostParams boost{50, 0.2, CausalTreeParams{3, 2, 0, 0.0}, 1.0};
  int cv_folds = 3;
  MarsParams mars{5, 16, 3, true, 20, 0};
  int mars_bags = 50;
  int strata = 10;
  bool holdout = false;  // evaluate on a fresh draw instead of in-sample
};

/// Canonical method tags: null, to, db, pto, cb0, cb1, cm0, cm1, bcm0.
/// Aliases: to_forest, db_forest, causal_boost (cb0), causal_mars (cm0),
/// bagged_causal_mars (bcm0).
std::string normalize_method_tag(const std::string& tag);

/// Runs reps replicates of each scenario under every method. Within a
/// replicate all methods see the identical draw; seeds derive from
/// (base_seed, scenario, replicate, method). Failing cells are recorded, not
/// fatal.
std::vector<BenchResult> run_benchmark(std::span<const int> scenario_ids,
                                       std::span<const std::string> methods, int reps,
                                       std::uint64_t base_seed, const BenchConfig& cfg);

void write_bench_csv(std::ostream& os, std::span<const BenchResult> results);

/// Per-scenario, per-method median and quartiles of the MSE distribution.
void write_bench_summary_json(std::ostream& os, std::span<const BenchResult> results);

struct BiasStudyRow {
  int unit = 0;
  double truth = 0.0;
  double mean_estimate = 0.0;
};

/// Fixes the covariates once, redraws treatment and response reps times and
/// averages each method's per-unit estimate.
std::map<std::string, std::vector<BiasStudyRow>> bias_study(const ScenarioSpec& spec,
                                                            std::span<const std::string> methods,
                                                            int reps, std::uint64_t seed,
                                                            const BenchConfig& cfg);

struct BinnedRow {
  int bin = 0;
  double lo = 0.0;
  double hi = 0.0;
  double mean = 0.0;
  double se = 0.0;
  int count = 0;
};

/// Equal-count bins by feature quantiles with per-bin mean and standard error
/// of the estimates.
std::vector<BinnedRow> binned_effect_report(std::span<const double> estimates,
                                            std::span<const double> feature, int n_bins);

/// Shallow regression tree on per-unit effect estimates; an interpretability
/// readout only.
Tree summarize_with_tree(const Matrix& X, std::span<const double> tau_hat, int max_depth);

}  // namespace hte
