#pragma once

#include <span>
#include <vector>

#include "hte/forest.hpp"
#include "hte/propensity.hpp"
#include "hte/rng.hpp"
#include "hte/types.hpp"

namespace hte {

/// Per-leaf stratified estimate: propensity-adjusted arm means, their
/// difference tau and its estimated variance.
struct LeafEstimate {
  double mu1 = 0.0;
  double mu0 = 0.0;
  double tau = 0.0;
  double var_tau = 0.0;
  int n_leaf = 0;
};

struct CausalTreeParams {
  int max_depth = 3;
  int min_leaf_per_arm = 2;  // per arm within at least one stratum; >= 2
  int mtry = 0;              // 0: all features
  double min_split_gain = 0.0;
};

/// Decision tree whose splits maximize |tau_l - tau_r| / sqrt(var_l + var_r)
/// and whose leaves hold arm-specific (propensity-adjusted) means.
struct CausalTree {
  std::vector<TreeNode> nodes;
  std::vector<LeafEstimate> leaf;  // indexed by node id; valid at leaves
  CausalTreeParams params;

  const LeafEstimate& leaf_at(std::span<const double> x) const {
    return leaf[static_cast<std::size_t>(route(nodes, x))];
  }
};

/// Stratified leaf estimate over a row subset. Only strata with both arms
/// occupied contribute; requires at least one stratum with >= 2 units per
/// arm so the variance is defined.
LeafEstimate leaf_estimate(const Dataset& d, std::span<const std::size_t> rows,
                           const StrataAssignment& sa);

/// Greedy recursive fit. With the uniform (single-stratum) assignment the
/// stratified formulas collapse to plain arm means and two-sample variance.
CausalTree fit_causal_tree(const Dataset& d, const StrataAssignment& sa,
                           const CausalTreeParams& params, Rng& rng);

/// Same fit on an explicit response vector (used by boosting to fit trees on
/// running residuals without copying the feature matrix).
CausalTree fit_causal_tree(const Matrix& X, std::span<const int> treatment,
                           std::span<const double> response, const StrataAssignment& sa,
                           const CausalTreeParams& params, Rng& rng);

std::pair<double, double> predict_pair(const CausalTree& t, std::span<const double> x);

}  // namespace hte
