#include "hte/causal_boost.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hte/threading.hpp"

namespace hte {

namespace {

/// Arm-specific mean pair per node under a strata assignment, with the
/// nearest-viable-ancestor fallback. Used to re-estimate a fixed topology
/// from new data (the boosting analog of forest pollination).
struct MeanCell {
  double sum1 = 0.0, sum0 = 0.0;
  int n1 = 0, n0 = 0;
};

struct RepollinatedTree {
  std::vector<std::pair<double, double>> node_pair;  // per node id
};

RepollinatedTree repollinate(const std::vector<TreeNode>& nodes, const Matrix& X,
                             std::span<const int> treatment, std::span<const double> response,
                             const StrataAssignment& sa,
                             std::span<const int> leaf_of_unit) {
  const std::size_t S = static_cast<std::size_t>(sa.S);
  std::vector<std::vector<MeanCell>> table(nodes.size(), std::vector<MeanCell>(S));

  for (std::size_t i = 0; i < X.rows(); ++i) {
    // Re-walk the path to the (precomputed) leaf, accumulating per node.
    int id = 0;
    const std::size_t s = static_cast<std::size_t>(sa.strata[i] - 1);
    for (;;) {
      MeanCell& c = table[static_cast<std::size_t>(id)][s];
      if (treatment[i] == 1) {
        c.sum1 += response[i];
        ++c.n1;
      } else {
        c.sum0 += response[i];
        ++c.n0;
      }
      if (id == leaf_of_unit[i]) break;
      const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
      id = X(i, static_cast<std::size_t>(nd.feature)) < nd.threshold ? nd.left : nd.right;
    }
  }

  auto stratified_pair = [](const std::vector<MeanCell>& cells,
                            std::pair<double, double>& out) {
    double w1 = 0.0, w0 = 0.0, den = 0.0;
    for (const MeanCell& c : cells) {
      if (c.n1 == 0 || c.n0 == 0) continue;
      const double ns = static_cast<double>(c.n1 + c.n0);
      w1 += ns * (c.sum1 / static_cast<double>(c.n1));
      w0 += ns * (c.sum0 / static_cast<double>(c.n0));
      den += ns;
    }
    if (den == 0.0) return false;
    out = {w1 / den, w0 / den};
    return true;
  };

  RepollinatedTree out;
  out.node_pair.resize(nodes.size());
  std::pair<double, double> root_pair;
  if (!stratified_pair(table[0], root_pair))
    fail("no-valid-stratum", "validation data has no stratum with both arms");

  struct Frame {
    int id;
    std::pair<double, double> fallback;
  };
  std::vector<Frame> stack{{0, root_pair}};
  while (!stack.empty()) {
    const Frame fr = stack.back();
    stack.pop_back();
    std::pair<double, double> here = fr.fallback;
    stratified_pair(table[static_cast<std::size_t>(fr.id)], here);
    out.node_pair[static_cast<std::size_t>(fr.id)] = here;
    const TreeNode& nd = nodes[static_cast<std::size_t>(fr.id)];
    if (nd.feature >= 0) {
      stack.push_back({nd.right, here});
      stack.push_back({nd.left, here});
    }
  }
  return out;
}

}  // namespace

std::pair<double, double> BoostModel::predict_at(std::span<const double> x, int k) const {
  if (k < 1 || k > n_stages()) fail("k-out-of-range", "stage index k must be in [1, K]");
  double m1 = 0.0, m0 = 0.0;
  for (int j = 0; j < k; ++j) {
    const LeafEstimate& e = trees[static_cast<std::size_t>(j)].leaf_at(x);
    m1 += e.mu1;
    m0 += e.mu0;
  }
  return {epsilon * m1, epsilon * m0};
}

std::pair<double, double> predict_boost(const BoostModel& m, std::span<const double> x, int k) {
  return m.predict_at(x, k);
}

BoostModel fit_causal_boost(const Dataset& d, const StrataAssignment& sa,
                            const BoostParams& params, Rng& rng) {
  validate_dataset(d);
  if (params.n_trees < 1) fail("invalid-params", "n_trees must be >= 1");
  if (!(params.epsilon >= 0.0 && params.epsilon <= 1.0))
    fail("invalid-params", "epsilon must lie in [0, 1]");

  BoostModel model;
  model.epsilon = params.epsilon;
  model.S = sa.S;
  model.strata_boundaries = sa.boundaries;

  std::vector<double> residual(d.response.begin(), d.response.end());
  const Rng base(rng.next());

  std::vector<std::size_t> all_rows(d.n());
  std::iota(all_rows.begin(), all_rows.end(), std::size_t{0});

  for (int k = 0; k < params.n_trees; ++k) {
    Rng stage_rng = base.child(static_cast<std::uint64_t>(k));
    CausalTree tree;
    try {
      if (params.subsample < 1.0) {
        const std::size_t m = std::max<std::size_t>(
            2, static_cast<std::size_t>(std::ceil(params.subsample * static_cast<double>(d.n()))));
        std::vector<std::size_t> rows = all_rows;
        for (std::size_t i = 0; i < m; ++i) {
          const std::size_t j = i + stage_rng.uniform_index(rows.size() - i);
          std::swap(rows[i], rows[j]);
        }
        rows.resize(m);
        std::sort(rows.begin(), rows.end());
        const Dataset sub = d.subset(rows);
        std::vector<double> sub_res(m);
        for (std::size_t i = 0; i < m; ++i) sub_res[i] = residual[rows[i]];
        tree = fit_causal_tree(sub.features, sub.treatment, sub_res, sa.subset(rows),
                               params.tree, stage_rng);
      } else {
        tree = fit_causal_tree(d.features, d.treatment, residual, sa, params.tree, stage_rng);
      }
    } catch (const Error& e) {
      if (e.kind() == "root-not-viable" && k > 0) break;  // truncate
      throw;
    }

    std::vector<double> x;
    for (std::size_t i = 0; i < d.n(); ++i) {
      d.features.row(i, x);
      const LeafEstimate& e = tree.leaf_at(x);
      residual[i] -= params.epsilon * (d.treatment[i] == 1 ? e.mu1 : e.mu0);
    }
    model.trees.push_back(std::move(tree));
  }
  return model;
}

BoostCvReport validate_boost(const BoostModel& m, const Dataset& v,
                             const StrataAssignment& sa_v) {
  if (v.n() == 0) fail("empty-validation-set", "validation set is empty");
  validate_dataset(v);
  if (m.trees.empty()) fail("invalid-params", "model has no trees");

  const int K = m.n_stages();
  const std::size_t n = v.n();

  // Leaf of every validation point in every tree, and the training model's
  // cumulative effect at each stage.
  std::vector<std::vector<int>> leaf_ids(static_cast<std::size_t>(K), std::vector<int>(n));
  std::vector<std::vector<double>> g_eff(static_cast<std::size_t>(K),
                                         std::vector<double>(n, 0.0));
  std::vector<double> x;
  for (std::size_t i = 0; i < n; ++i) {
    v.features.row(i, x);
    double eff = 0.0;
    for (int k = 0; k < K; ++k) {
      const auto& tree = m.trees[static_cast<std::size_t>(k)];
      const int leaf = route(tree.nodes, x);
      leaf_ids[static_cast<std::size_t>(k)][i] = leaf;
      const LeafEstimate& e = tree.leaf[static_cast<std::size_t>(leaf)];
      eff += m.epsilon * (e.mu1 - e.mu0);
      g_eff[static_cast<std::size_t>(k)][i] = eff;
    }
  }

  // Saturated validation re-estimate H_K via stagewise re-pollination.
  std::vector<double> residual(v.response.begin(), v.response.end());
  std::vector<double> h_eff(n, 0.0);
  for (int k = 0; k < K; ++k) {
    const auto& tree = m.trees[static_cast<std::size_t>(k)];
    const RepollinatedTree rep =
        repollinate(tree.nodes, v.features, v.treatment, residual, sa_v,
                    leaf_ids[static_cast<std::size_t>(k)]);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& pr = rep.node_pair[static_cast<std::size_t>(
          leaf_ids[static_cast<std::size_t>(k)][i])];
      residual[i] -= m.epsilon * (v.treatment[i] == 1 ? pr.first : pr.second);
      h_eff[i] += m.epsilon * (pr.first - pr.second);
    }
  }

  BoostCvReport report;
  report.per_k_error.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dd = g_eff[static_cast<std::size_t>(k)][i] - h_eff[i];
      err += dd * dd;
    }
    report.per_k_error[static_cast<std::size_t>(k)] = err;
  }
  report.k_star = 1;
  for (int k = 1; k < K; ++k) {
    if (report.per_k_error[static_cast<std::size_t>(k)] <
        report.per_k_error[static_cast<std::size_t>(report.k_star - 1)])
      report.k_star = k + 1;
  }
  return report;
}

BoostCvResult cross_validate_boost(const Dataset& d, const StrataAssignment& sa, int folds,
                                   const BoostParams& params, Rng& rng) {
  validate_dataset(d);
  if (folds < 2) fail("invalid-params", "folds must be >= 2");

  const Rng base(rng.next());
  Rng fold_rng = base.child(0xF01Dull);

  // Round-robin fold assignment within each arm, in shuffled order.
  std::vector<int> fold_of(d.n(), -1);
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < d.n(); ++i) {
      if (d.treatment[i] == arm) idx.push_back(i);
    }
    if (idx.size() < static_cast<std::size_t>(folds))
      fail("fold-too-small", "arm smaller than fold count");
    for (std::size_t i = 0; i + 1 < idx.size(); ++i) {
      const std::size_t j = i + fold_rng.uniform_index(idx.size() - i);
      std::swap(idx[i], idx[j]);
    }
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold_of[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  }

  const std::size_t K = static_cast<std::size_t>(params.n_trees);
  std::vector<std::vector<double>> fold_err(static_cast<std::size_t>(folds));

  parallel_for(static_cast<std::size_t>(folds), [&](std::size_t f) {
    std::vector<std::size_t> train_rows, valid_rows;
    for (std::size_t i = 0; i < d.n(); ++i) {
      (fold_of[i] == static_cast<int>(f) ? valid_rows : train_rows).push_back(i);
    }
    const Dataset train = d.subset(train_rows);
    const Dataset valid = d.subset(valid_rows);
    Rng fit_rng = base.child(1 + f);
    const BoostModel fm = fit_causal_boost(train, sa.subset(train_rows), params, fit_rng);
    const BoostCvReport rep = validate_boost(fm, valid, sa.subset(valid_rows));
    // Truncated fits keep their final error for the missing stages.
    std::vector<double> err = rep.per_k_error;
    err.resize(K, err.back());
    fold_err[f] = std::move(err);
  });

  BoostCvReport report;
  report.per_k_error.assign(K, 0.0);
  for (const auto& err : fold_err) {
    for (std::size_t k = 0; k < K; ++k) report.per_k_error[k] += err[k];
  }
  for (std::size_t k = 0; k < K; ++k)
    report.per_k_error[k] /= static_cast<double>(folds);
  report.k_star = 1;
  for (std::size_t k = 1; k < K; ++k) {
    if (report.per_k_error[k] < report.per_k_error[static_cast<std::size_t>(report.k_star - 1)])
      report.k_star = static_cast<int>(k) + 1;
  }

  BoostParams final_params = params;
  final_params.n_trees = report.k_star;
  Rng final_rng = base.child(0xFFFFull);
  BoostCvResult result{report, fit_causal_boost(d, sa, final_params, final_rng)};
  return result;
}

}  // namespace hte
