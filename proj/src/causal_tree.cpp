#include "hte/causal_tree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hte {

namespace {

struct StratumCell {
  double sum1 = 0.0, sum0 = 0.0;
  double sq1 = 0.0, sq0 = 0.0;
  int n1 = 0, n0 = 0;
};

using StratumTable = std::vector<StratumCell>;  // index 0..S-1

void add_unit(StratumTable& t, int stratum, int treat, double y) {
  StratumCell& c = t[static_cast<std::size_t>(stratum - 1)];
  if (treat == 1) {
    c.sum1 += y;
    c.sq1 += y * y;
    ++c.n1;
  } else {
    c.sum0 += y;
    c.sq0 += y * y;
    ++c.n0;
  }
}

bool viable(const StratumTable& t, int min_leaf_per_arm) {
  for (const auto& c : t) {
    if (c.n1 >= min_leaf_per_arm && c.n0 >= min_leaf_per_arm) return true;
  }
  return false;
}

double cell_sample_var(double sum, double sq, int n) {
  if (n < 2) return 0.0;
  return std::max(0.0, (sq - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1));
}

struct TauVar {
  double tau = 0.0;
  double var = 0.0;
  bool ok = false;
};

TauVar tau_and_var(const StratumTable& t) {
  double num = 0.0, den = 0.0, var_num = 0.0;
  for (const auto& c : t) {
    if (c.n1 == 0 || c.n0 == 0) continue;
    const double ns = static_cast<double>(c.n1 + c.n0);
    const double m1 = c.sum1 / static_cast<double>(c.n1);
    const double m0 = c.sum0 / static_cast<double>(c.n0);
    num += ns * (m1 - m0);
    den += ns;
    const double sigma2 = cell_sample_var(c.sum1, c.sq1, c.n1) / static_cast<double>(c.n1) +
                          cell_sample_var(c.sum0, c.sq0, c.n0) / static_cast<double>(c.n0);
    var_num += ns * ns * sigma2;
  }
  TauVar out;
  if (den == 0.0) return out;
  out.tau = num / den;
  out.var = var_num / (den * den);
  out.ok = true;
  return out;
}

LeafEstimate estimate_from_table(const StratumTable& t) {
  double den = 0.0, w1 = 0.0, w0 = 0.0;
  int n_leaf = 0;
  for (const auto& c : t) {
    n_leaf += c.n1 + c.n0;
    if (c.n1 == 0 || c.n0 == 0) continue;
    const double ns = static_cast<double>(c.n1 + c.n0);
    w1 += ns * (c.sum1 / static_cast<double>(c.n1));
    w0 += ns * (c.sum0 / static_cast<double>(c.n0));
    den += ns;
  }
  const TauVar tv = tau_and_var(t);
  LeafEstimate e;
  e.mu1 = w1 / den;
  e.mu0 = w0 / den;
  e.tau = e.mu1 - e.mu0;
  e.var_tau = tv.var;
  e.n_leaf = n_leaf;
  return e;
}

/// T-statistic split criterion with the zero-variance guard.
double split_score(const TauVar& l, const TauVar& r) {
  const double dtau = std::abs(l.tau - r.tau);
  const double var_sum = l.var + r.var;
  if (var_sum <= 0.0) {
    return dtau > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  return dtau / std::sqrt(var_sum);
}

class CausalTreeBuilder {
 public:
  CausalTreeBuilder(const Matrix& X, std::span<const int> treatment,
                    std::span<const double> response, const StrataAssignment& sa,
                    const CausalTreeParams& params, Rng& rng)
      : X_(X), t_(treatment), y_(response), sa_(sa), params_(params), rng_(rng) {
    mtry_ = params.mtry <= 0 ? static_cast<int>(X.cols())
                             : std::min<int>(params.mtry, static_cast<int>(X.cols()));
  }

  CausalTree fit(std::vector<std::size_t> rows) {
    CausalTree tree;
    tree.params = params_;
    build(tree, std::move(rows), 0);
    tree.leaf.resize(tree.nodes.size());
    for (std::size_t id = 0; id < tree.nodes.size(); ++id) {
      if (tree.nodes[id].feature < 0) tree.leaf[id] = leaf_cache_[id];
    }
    return tree;
  }

 private:
  StratumTable table_of(const std::vector<std::size_t>& rows) const {
    StratumTable t(static_cast<std::size_t>(sa_.S));
    for (std::size_t r : rows) add_unit(t, sa_.strata[r], t_[r], y_[r]);
    return t;
  }

  struct SplitChoice {
    double score = 0.0;
    int feature = -1;
    double threshold = 0.0;
    bool found = false;
  };

  int build(CausalTree& tree, std::vector<std::size_t> rows, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    leaf_cache_.emplace_back();

    const StratumTable node_table = table_of(rows);
    leaf_cache_[static_cast<std::size_t>(id)] = estimate_from_table(node_table);

    if (depth >= params_.max_depth) return id;

    const SplitChoice best = find_split(rows, node_table);
    if (!best.found) return id;

    std::vector<std::size_t> left_rows, right_rows;
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

  SplitChoice find_split(const std::vector<std::size_t>& rows, const StratumTable& node_table) {
    struct Unit {
      double x;
      double y;
      int t;
      int s;
    };

    const std::vector<int> features = sample_features(rows.size());
    SplitChoice best;
    std::vector<Unit> units;
    units.reserve(rows.size());

    for (int j : features) {
      units.clear();
      const auto col = X_.col(static_cast<std::size_t>(j));
      for (std::size_t r : rows) units.push_back({col[r], y_[r], t_[r], sa_.strata[r]});
      std::sort(units.begin(), units.end(),
                [](const Unit& a, const Unit& b) { return a.x < b.x; });

      StratumTable left(static_cast<std::size_t>(sa_.S));
      StratumTable right = node_table;
      for (std::size_t k = 0; k + 1 < units.size(); ++k) {
        const Unit& u = units[k];
        add_unit(left, u.s, u.t, u.y);
        StratumCell& rc = right[static_cast<std::size_t>(u.s - 1)];
        if (u.t == 1) {
          rc.sum1 -= u.y;
          rc.sq1 -= u.y * u.y;
          --rc.n1;
        } else {
          rc.sum0 -= u.y;
          rc.sq0 -= u.y * u.y;
          --rc.n0;
        }
        if (u.x == units[k + 1].x) continue;
        if (!viable(left, params_.min_leaf_per_arm) || !viable(right, params_.min_leaf_per_arm))
          continue;
        const TauVar lt = tau_and_var(left);
        const TauVar rt = tau_and_var(right);
        if (!lt.ok || !rt.ok) continue;
        const double score = split_score(lt, rt);
        if (score > params_.min_split_gain && score > best.score) {
          best.score = score;
          best.feature = j;
          best.threshold = 0.5 * (u.x + units[k + 1].x);
          best.found = true;
        }
      }
    }
    return best;
  }

  std::vector<int> sample_features(std::size_t) {
    const std::size_t p = X_.cols();
    std::vector<int> all(p);
    std::iota(all.begin(), all.end(), 0);
    if (static_cast<std::size_t>(mtry_) >= p) return all;
    for (int i = 0; i < mtry_; ++i) {
      const std::size_t j = i + rng_.uniform_index(p - static_cast<std::size_t>(i));
      std::swap(all[static_cast<std::size_t>(i)], all[j]);
    }
    all.resize(static_cast<std::size_t>(mtry_));
    std::sort(all.begin(), all.end());
    return all;
  }

  const Matrix& X_;
  std::span<const int> t_;
  std::span<const double> y_;
  const StrataAssignment& sa_;
  const CausalTreeParams& params_;
  Rng& rng_;
  int mtry_ = 0;
  std::vector<LeafEstimate> leaf_cache_;
};

}  // namespace

LeafEstimate leaf_estimate(const Dataset& d, std::span<const std::size_t> rows,
                           const StrataAssignment& sa) {
  if (sa.strata.size() != d.n()) fail("dimension-mismatch", "strata length != n");
  StratumTable t(static_cast<std::size_t>(sa.S));
  for (std::size_t r : rows) add_unit(t, sa.strata[r], d.treatment[r], d.response[r]);
  bool any = false;
  for (const auto& c : t) any = any || (c.n1 >= 2 && c.n0 >= 2);
  if (!any) fail("no-viable-stratum", "need a stratum with >= 2 units per arm");
  return estimate_from_table(t);
}

CausalTree fit_causal_tree(const Matrix& X, std::span<const int> treatment,
                           std::span<const double> response, const StrataAssignment& sa,
                           const CausalTreeParams& params, Rng& rng) {
  const std::size_t n = X.rows();
  if (treatment.size() != n || response.size() != n || sa.strata.size() != n ||
      sa.scores.size() != n)
    fail("dimension-mismatch", "treatment, response and strata must agree on n");
  if (params.min_leaf_per_arm < 2)
    fail("invalid-params", "min_leaf_per_arm must be >= 2");
  if (params.max_depth < 1) fail("invalid-params", "max_depth must be >= 1");

  {
    StratumTable root(static_cast<std::size_t>(sa.S));
    for (std::size_t i = 0; i < n; ++i) add_unit(root, sa.strata[i], treatment[i], response[i]);
    if (!viable(root, params.min_leaf_per_arm))
      fail("root-not-viable", "no stratum has min_leaf_per_arm units in each arm");
  }

  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return CausalTreeBuilder(X, treatment, response, sa, params, rng).fit(std::move(rows));
}

CausalTree fit_causal_tree(const Dataset& d, const StrataAssignment& sa,
                           const CausalTreeParams& params, Rng& rng) {
  return fit_causal_tree(d.features, d.treatment, d.response, sa, params, rng);
}

std::pair<double, double> predict_pair(const CausalTree& t, std::span<const double> x) {
  const LeafEstimate& e = t.leaf_at(x);
  return {e.mu1, e.mu0};
}

}  // namespace hte
