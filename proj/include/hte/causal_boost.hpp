#pragma once

#include <memory>
#include <span>
#include <vector>

#include "hte/causal_tree.hpp"
#include "hte/propensity.hpp"
#include "hte/types.hpp"

namespace hte {

struct BoostParams {
  int n_trees = 200;  // maximum number of stages
  double epsilon = 0.05;
  CausalTreeParams tree;
  double subsample = 1.0;  // <1 enables stochastic row subsampling per stage
};

/// Stagewise sum of shrunken causal trees: G_k(x,t) = eps * sum_{j<=k} g_j(x,t).
class BoostModel : public EffectModel {
 public:
  std::vector<CausalTree> trees;
  double epsilon = 0.05;
  int S = 1;
  std::vector<double> strata_boundaries;
  std::shared_ptr<const RegressionForest> propensity_model;  // set when stratified

  int n_stages() const { return static_cast<int>(trees.size()); }

  /// Pair prediction of the truncated model with the first k trees, 1 <= k <= K.
  std::pair<double, double> predict_at(std::span<const double> x, int k) const;

  std::pair<double, double> predict_means(std::span<const double> x) const override {
    return predict_at(x, n_stages());
  }
};

struct BoostCvReport {
  std::vector<double> per_k_error;
  int k_star = 1;
};

BoostModel fit_causal_boost(const Dataset& d, const StrataAssignment& sa,
                            const BoostParams& params, Rng& rng);

std::pair<double, double> predict_boost(const BoostModel& m, std::span<const double> x, int k);

/// Scores each truncated training model against the saturated re-estimate of
/// the same tree structures on the validation set: the structures are kept,
/// leaf pairs are re-estimated from validation residuals stage by stage, and
/// the error at k is sum over validation points of
/// (effect of G_k - effect of the saturated re-estimate H_K)^2.
BoostCvReport validate_boost(const BoostModel& m, const Dataset& v, const StrataAssignment& sa_v);

struct BoostCvResult {
  BoostCvReport report;
  BoostModel model;  // refit on all data with k_star stages
};

/// K-fold cross-validation of the stage count; folds are assigned round-robin
/// within each arm so every fold keeps both arms.
BoostCvResult cross_validate_boost(const Dataset& d, const StrataAssignment& sa, int folds,
                                   const BoostParams& params, Rng& rng);

}  // namespace hte
