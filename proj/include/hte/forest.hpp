#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hte/rng.hpp"
#include "hte/types.hpp"

namespace hte {

/// Node of a binary decision tree stored in a flat vector; nodes[0] is the
/// root. feature == -1 marks a leaf. A point with x[feature] < threshold
/// routes left, otherwise right.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf mean for scalar trees
};

int route(const std::vector<TreeNode>& nodes, std::span<const double> x);

struct Tree {
  std::vector<TreeNode> nodes;

  double predict(std::span<const double> x) const {
    return nodes[static_cast<std::size_t>(route(nodes, x))].value;
  }
  int n_leaves() const;
};

struct ForestParams {
  int n_trees = 200;
  int max_depth = 4;
  int min_leaf = 5;
  int mtry = 0;  // 0: use ceil(sqrt(p))
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

/// Default clipping for probability forests; keeps 1/score <= 40.
inline constexpr double kDefaultClip = 0.025;

struct RegressionForest {
  std::vector<Tree> trees;
  ForestParams params;
  double clip = 0.0;  // >0: predictions clipped to [clip, 1-clip]
  std::vector<std::vector<std::uint8_t>> in_bag;  // per tree, length n; empty when bootstrap=false

  double predict(std::span<const double> x) const;
  std::vector<double> predict(const Matrix& X) const;

  /// Per-row prediction over trees whose bootstrap sample excluded the row;
  /// rows with no out-of-bag coverage fall back to the full-forest prediction.
  /// X must be the training matrix the forest was fit on.
  std::vector<double> oob_predict(const Matrix& X) const;
};

/// Greedy CART with variance-reduction splitting. Leaves hold sample means,
/// candidate thresholds are midpoints of consecutive distinct feature values,
/// ties between equal-gain splits resolve to the lowest feature index and
/// smallest threshold.
Tree fit_regression_tree(const Matrix& X, std::span<const double> y,
                         const ForestParams& params, Rng& rng);

RegressionForest fit_regression_forest(const Matrix& X, std::span<const double> y,
                                       const ForestParams& params, Rng& rng);
RegressionForest fit_regression_forest(const Matrix& X, std::span<const double> y,
                                       const ForestParams& params);

/// Forest on 0/1 labels; each leaf stores the class-1 proportion and the
/// forest averages per-tree proportions. Predictions are clipped.
RegressionForest fit_probability_forest(const Matrix& X, std::span<const int> labels,
                                        const ForestParams& params, Rng& rng,
                                        double clip = kDefaultClip);
RegressionForest fit_probability_forest(const Matrix& X, std::span<const int> labels,
                                        const ForestParams& params,
                                        double clip = kDefaultClip);

struct PairPayload {
  double mu1 = 0.0;
  double mu0 = 0.0;
  int n1 = 0;
  int n0 = 0;
};

/// Tree topology with per-leaf arm-specific means.
struct PairTree {
  std::vector<TreeNode> nodes;
  std::vector<PairPayload> payload;  // indexed by node id; valid at leaves

  const PairPayload& leaf_at(std::span<const double> x) const {
    return payload[static_cast<std::size_t>(route(nodes, x))];
  }
};

/// Re-estimates a tree's leaves with arm-specific response means: every row
/// of d is routed down the fixed topology, each leaf gets (mean treated,
/// mean control, counts). Leaves where either arm is empty inherit the
/// payload of the nearest ancestor with both arms present.
PairTree pollinate_tree(const Tree& tree, const Dataset& d);

}  // namespace hte
