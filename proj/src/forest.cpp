#include "hte/forest.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hte/threading.hpp"

namespace hte {

int route(const std::vector<TreeNode>& nodes, std::span<const double> x) {
  int id = 0;
  while (nodes[static_cast<std::size_t>(id)].feature >= 0) {
    const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
    id = x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
  }
  return id;
}

int Tree::n_leaves() const {
  int k = 0;
  for (const auto& nd : nodes) k += nd.feature < 0 ? 1 : 0;
  return k;
}

namespace {

struct SplitChoice {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool found = false;
};

int resolve_mtry(int mtry, std::size_t p) {
  if (mtry <= 0) {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(p))));
  }
  return std::min<int>(mtry, static_cast<int>(p));
}

/// Draws k distinct feature indices (ascending) via partial Fisher-Yates.
/// When k == p no draw is made and all features are used.
std::vector<int> sample_features(std::size_t p, int k, Rng& rng) {
  std::vector<int> all(p);
  std::iota(all.begin(), all.end(), 0);
  if (static_cast<std::size_t>(k) >= p) return all;
  for (int i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(p - static_cast<std::size_t>(i));
    std::swap(all[static_cast<std::size_t>(i)], all[j]);
  }
  all.resize(static_cast<std::size_t>(k));
  std::sort(all.begin(), all.end());
  return all;
}

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& X, std::span<const double> y, const ForestParams& params, Rng& rng)
      : X_(X), y_(y), params_(params), rng_(rng), mtry_(resolve_mtry(params.mtry, X.cols())) {}

  Tree fit(std::vector<std::size_t> rows) {
    Tree tree;
    build(tree, std::move(rows), 0);
    return tree;
  }

 private:
  int build(Tree& tree, std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();

    double sum = 0.0, sumsq = 0.0;
    for (std::size_t r : rows) {
      sum += y_[r];
      sumsq += y_[r] * y_[r];
    }
    const double n = static_cast<double>(rows.size());
    tree.nodes[static_cast<std::size_t>(id)].value = sum / n;

    if (depth >= params_.max_depth ||
        rows.size() < 2 * static_cast<std::size_t>(params_.min_leaf)) {
      return id;
    }

    const SplitChoice best = find_split(rows, sum, sumsq);
    if (!best.found) return id;

    std::vector<std::size_t> left_rows, right_rows;
    left_rows.reserve(rows.size());
    right_rows.reserve(rows.size());
    for (std::size_t r : rows) {
      if (X_(r, static_cast<std::size_t>(best.feature)) < best.threshold)
        left_rows.push_back(r);
      else
        right_rows.push_back(r);
    }
    rows.clear();
    rows.shrink_to_fit();

    tree.nodes[static_cast<std::size_t>(id)].feature = best.feature;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
    const int left = build(tree, std::move(left_rows), depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = left;
    const int right = build(tree, std::move(right_rows), depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].right = right;
    return id;
  }

  SplitChoice find_split(const std::vector<std::size_t>& rows, double sum, double sumsq) {
    const double n = static_cast<double>(rows.size());
    const double parent_score = sum * sum / n;
    // Threshold that filters out split "gains" that are only rounding noise.
    const double min_gain = 1e-10 * (std::abs(sumsq) + 1.0);

    const std::vector<int> features = sample_features(X_.cols(), mtry_, rng_);

    SplitChoice best;
    std::vector<std::pair<double, double>> vals;  // (x_j, y)
    vals.reserve(rows.size());
    for (int j : features) {
      vals.clear();
      const auto col = X_.col(static_cast<std::size_t>(j));
      for (std::size_t r : rows) vals.emplace_back(col[r], y_[r]);
      std::sort(vals.begin(), vals.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });

      double left_sum = 0.0;
      const std::size_t min_leaf = static_cast<std::size_t>(params_.min_leaf);
      for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
        left_sum += vals[k].second;
        if (vals[k].first == vals[k + 1].first) continue;
        const std::size_t n_left = k + 1;
        const std::size_t n_right = vals.size() - n_left;
        if (n_left < min_leaf || n_right < min_leaf) continue;
        const double right_sum = sum - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n_right) -
                            parent_score;
        if (gain > min_gain && gain > best.gain) {
          best.gain = gain;
          best.feature = j;
          best.threshold = 0.5 * (vals[k].first + vals[k + 1].first);
          best.found = true;
        }
      }
    }
    return best;
  }

  const Matrix& X_;
  std::span<const double> y_;
  const ForestParams& params_;
  Rng& rng_;
  int mtry_;
};

void check_tree_inputs(const Matrix& X, std::span<const double> y, const ForestParams& params) {
  if (X.rows() != y.size()) fail("dimension-mismatch", "rows(X) != len(y)");
  if (X.rows() < 2 * static_cast<std::size_t>(params.min_leaf))
    fail("insufficient-samples", "need at least 2*min_leaf rows");
  if (params.n_trees < 1 || params.max_depth < 1 || params.min_leaf < 1)
    fail("invalid-params", "n_trees, max_depth and min_leaf must be >= 1");
}

}  // namespace

Tree fit_regression_tree(const Matrix& X, std::span<const double> y,
                         const ForestParams& params, Rng& rng) {
  check_tree_inputs(X, y, params);
  std::vector<std::size_t> rows(X.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return TreeBuilder(X, y, params, rng).fit(std::move(rows));
}

RegressionForest fit_regression_forest(const Matrix& X, std::span<const double> y,
                                       const ForestParams& params, Rng& rng) {
  check_tree_inputs(X, y, params);
  const std::size_t n = X.rows();

  RegressionForest forest;
  forest.params = params;
  forest.trees.resize(static_cast<std::size_t>(params.n_trees));
  if (params.bootstrap) forest.in_bag.resize(forest.trees.size());

  // Fork a fresh base stream so repeated fits from one rng stay independent.
  const Rng base(rng.next());
  parallel_for(forest.trees.size(), [&](std::size_t t) {
    Rng tree_rng = base.child(t);
    std::vector<std::size_t> rows;
    rows.reserve(n);
    if (params.bootstrap) {
      auto& bag = forest.in_bag[t];
      bag.assign(n, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = tree_rng.uniform_index(n);
        rows.push_back(r);
        bag[r] = 1;
      }
      std::sort(rows.begin(), rows.end());
    } else {
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    }
    forest.trees[t] = TreeBuilder(X, y, params, tree_rng).fit(std::move(rows));
  });
  return forest;
}

RegressionForest fit_regression_forest(const Matrix& X, std::span<const double> y,
                                       const ForestParams& params) {
  Rng rng(params.seed);
  return fit_regression_forest(X, y, params, rng);
}

RegressionForest fit_probability_forest(const Matrix& X, std::span<const int> labels,
                                        const ForestParams& params, Rng& rng, double clip) {
  bool has0 = false, has1 = false;
  for (int v : labels) (v == 1 ? has1 : has0) = true;
  if (!has0 || !has1) fail("single-class-input", "labels must contain both classes");

  std::vector<double> y(labels.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<double>(labels[i]);
  RegressionForest forest = fit_regression_forest(X, y, params, rng);
  forest.clip = clip;
  return forest;
}

RegressionForest fit_probability_forest(const Matrix& X, std::span<const int> labels,
                                        const ForestParams& params, double clip) {
  Rng rng(params.seed);
  return fit_probability_forest(X, labels, params, rng, clip);
}

double RegressionForest::predict(std::span<const double> x) const {
  double sum = 0.0;
  for (const auto& t : trees) sum += t.predict(x);
  double out = sum / static_cast<double>(trees.size());
  if (clip > 0.0) out = std::clamp(out, clip, 1.0 - clip);
  return out;
}

std::vector<double> RegressionForest::predict(const Matrix& X) const {
  std::vector<double> out(X.rows());
  std::vector<double> x;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    X.row(i, x);
    out[i] = predict(x);
  }
  return out;
}

std::vector<double> RegressionForest::oob_predict(const Matrix& X) const {
  std::vector<double> out(X.rows());
  std::vector<double> x;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    X.row(i, x);
    double sum = 0.0;
    std::size_t k = 0;
    if (!in_bag.empty()) {
      for (std::size_t t = 0; t < trees.size(); ++t) {
        if (in_bag[t][i]) continue;
        sum += trees[t].predict(x);
        ++k;
      }
    }
    double v;
    if (k > 0) {
      v = sum / static_cast<double>(k);
    } else {
      for (const auto& t : trees) sum += t.predict(x);
      v = sum / static_cast<double>(trees.size());
    }
    if (clip > 0.0) v = std::clamp(v, clip, 1.0 - clip);
    out[i] = v;
  }
  return out;
}

PairTree pollinate_tree(const Tree& tree, const Dataset& d) {
  struct ArmAcc {
    double sum1 = 0.0, sum0 = 0.0;
    int n1 = 0, n0 = 0;
  };
  std::vector<ArmAcc> acc(tree.nodes.size());

  std::vector<double> x;
  for (std::size_t i = 0; i < d.n(); ++i) {
    d.features.row(i, x);
    int id = 0;
    for (;;) {
      ArmAcc& a = acc[static_cast<std::size_t>(id)];
      if (d.treatment[i] == 1) {
        a.sum1 += d.response[i];
        ++a.n1;
      } else {
        a.sum0 += d.response[i];
        ++a.n0;
      }
      const TreeNode& nd = tree.nodes[static_cast<std::size_t>(id)];
      if (nd.feature < 0) break;
      id = x[static_cast<std::size_t>(nd.feature)] < nd.threshold ? nd.left : nd.right;
    }
  }

  if (acc[0].n1 == 0 || acc[0].n0 == 0)
    fail("root-degenerate", "dataset has a single arm; cannot pollinate");

  PairTree out;
  out.nodes = tree.nodes;
  out.payload.resize(tree.nodes.size());

  auto payload_of = [](const ArmAcc& a) {
    return PairPayload{a.sum1 / static_cast<double>(a.n1), a.sum0 / static_cast<double>(a.n0),
                       a.n1, a.n0};
  };

  // Depth-first assignment carrying the nearest both-arm ancestor payload.
  struct Frame {
    int id;
    PairPayload fallback;
  };
  std::vector<Frame> stack{{0, payload_of(acc[0])}};
  while (!stack.empty()) {
    const Frame fr = stack.back();
    stack.pop_back();
    const ArmAcc& a = acc[static_cast<std::size_t>(fr.id)];
    const bool viable = a.n1 >= 1 && a.n0 >= 1;
    const PairPayload here = viable ? payload_of(a) : fr.fallback;
    const TreeNode& nd = out.nodes[static_cast<std::size_t>(fr.id)];
    if (nd.feature < 0) {
      out.payload[static_cast<std::size_t>(fr.id)] = here;
    } else {
      stack.push_back({nd.right, here});
      stack.push_back({nd.left, here});
    }
  }
  return out;
}

}  // namespace hte
