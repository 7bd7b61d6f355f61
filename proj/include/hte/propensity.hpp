#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hte/forest.hpp"
#include "hte/rng.hpp"
#include "hte/types.hpp"

namespace hte {

/// Propensity scores plus per-unit stratum labels in {1..S}. Stratum s covers
/// [boundaries[s-1], boundaries[s]); the last interval is closed on the right.
struct StrataAssignment {
  std::vector<double> scores;
  std::vector<int> strata;
  int S = 1;
  std::vector<double> boundaries;  // length S+1

  /// Single-stratum assignment (scores 1/2); collapses every stratified
  /// formula to its unadjusted form.
  static StrataAssignment uniform(std::size_t n);

  StrataAssignment subset(std::span<const std::size_t> rows) const;
};

/// Equal-width strata over [0,1]: boundaries {0, 1/S, ..., 1}. Empty strata
/// are permitted; they carry zero weight downstream.
StrataAssignment assign_strata(std::span<const double> scores, int S);

/// Out-of-bag probability-forest estimate of P(T=1 | X=x) for each training
/// unit, clipped away from 0 and 1.
std::vector<double> estimate_propensity(const Dataset& d, const ForestParams& params, Rng& rng);
std::vector<double> estimate_propensity(const Dataset& d, const ForestParams& params);

/// Propensity forest together with its out-of-bag training scores, for
/// callers that must keep the forest (e.g. to score new points).
struct PropensityModel {
  RegressionForest forest;
  std::vector<double> oob_scores;
};
PropensityModel fit_propensity(const Dataset& d, const ForestParams& params, Rng& rng);

/// Z_i = T_i*Y_i/score_i - (1-T_i)*Y_i/(1-score_i).
std::vector<double> transformed_outcome(const Dataset& d, std::span<const double> scores);

enum class AteMethod { CM, TO, IPW, STRAT };

std::string to_string(AteMethod m);

struct AteReport {
  double estimate = 0.0;
  std::optional<double> variance_estimate;
  AteMethod method = AteMethod::CM;
};

/// Difference of arm means; variance s1^2/N1 + s0^2/N0.
AteReport ate_cm(const Dataset& d);

/// Mean of transformed outcomes; variance estimated as var(Z)/n.
AteReport ate_to(const Dataset& d, std::span<const double> scores);

/// Self-normalizing inverse-probability-weighted difference of arm means.
AteReport ate_ipw(const Dataset& d, std::span<const double> scores);

/// Stratified estimate weighted by stratum size; strata missing an arm are
/// excluded from numerator and denominator.
AteReport ate_stratified(const Dataset& d, const StrataAssignment& sa);

struct VarianceStudyRow {
  int n = 0;
  double ratio = 0.0;
  double var_to = 0.0;
  double var_cm = 0.0;
  int reps = 0;
};

/// Monte-Carlo marginal variances of the conditional-mean and
/// transformed-outcome ATE estimators under a randomized design with
/// N1 ~ Binomial(n, 1/2) truncated to exclude 0 and n, arm means drawn
/// normal with variance sigma^2 / arm size, and main-effect-to-noise
/// ratio |mu1 + mu0| / (2 sigma) swept over ratio_grid.
std::vector<VarianceStudyRow> ate_variance_study(std::span<const int> n_values,
                                                 std::span<const double> ratio_grid,
                                                 double sigma, int reps, std::uint64_t seed);

}  // namespace hte
