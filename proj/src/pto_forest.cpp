#include "hte/pto_forest.hpp"

#include "hte/propensity.hpp"
#include "hte/threading.hpp"

namespace hte {

std::pair<double, double> PtoModel::predict_means(std::span<const double> x) const {
  if (smoother) return {smoother->predict(x), 0.0};
  double m1 = 0.0, m0 = 0.0;
  for (const auto& t : pair_forest) {
    const PairPayload& p = t.leaf_at(x);
    m1 += p.mu1;
    m0 += p.mu0;
  }
  const double k = static_cast<double>(pair_forest.size());
  return {m1 / k, m0 / k};
}

PtoModel fit_pto_forest(const Dataset& d, std::span<const double> scores,
                        const ForestParams& params, bool smooth, Rng& rng) {
  validate_dataset(d);
  const std::vector<double> z = transformed_outcome(d, scores);

  PtoModel model;
  model.to_forest = fit_regression_forest(d.features, z, params, rng);

  model.pair_forest.resize(model.to_forest.trees.size());
  parallel_for(model.pair_forest.size(), [&](std::size_t t) {
    model.pair_forest[t] = pollinate_tree(model.to_forest.trees[t], d);
  });

  if (smooth) {
    // Per-unit pollinated effects, out-of-bag per tree where possible.
    std::vector<double> tau_hat(d.n());
    std::vector<double> x;
    for (std::size_t i = 0; i < d.n(); ++i) {
      d.features.row(i, x);
      double sum = 0.0;
      std::size_t k = 0;
      if (!model.to_forest.in_bag.empty()) {
        for (std::size_t t = 0; t < model.pair_forest.size(); ++t) {
          if (model.to_forest.in_bag[t][i]) continue;
          const PairPayload& p = model.pair_forest[t].leaf_at(x);
          sum += p.mu1 - p.mu0;
          ++k;
        }
      }
      if (k == 0) {
        for (const auto& t : model.pair_forest) {
          const PairPayload& p = t.leaf_at(x);
          sum += p.mu1 - p.mu0;
          ++k;
        }
      }
      tau_hat[i] = sum / static_cast<double>(k);
    }
    model.smoother = fit_regression_forest(d.features, tau_hat, params, rng);
  }
  return model;
}

PtoModel fit_pto_forest(const Dataset& d, std::span<const double> scores,
                        const ForestParams& params, bool smooth) {
  Rng rng(params.seed);
  return fit_pto_forest(d, scores, params, smooth, rng);
}

double predict_pto(const PtoModel& m, std::span<const double> x) {
  return m.predict_effect(x);
}

}  // namespace hte
