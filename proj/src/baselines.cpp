#include "hte/baselines.hpp"

#include <numeric>

#include "hte/propensity.hpp"

namespace hte {

NullModel fit_null(const Dataset& d) {
  validate_dataset(d);
  double s1 = 0.0, s0 = 0.0;
  std::size_t n1 = 0, n0 = 0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    if (d.treatment[i] == 1) {
      s1 += d.response[i];
      ++n1;
    } else {
      s0 += d.response[i];
      ++n0;
    }
  }
  NullModel m;
  m.mu1 = s1 / static_cast<double>(n1);
  m.mu0 = s0 / static_cast<double>(n0);
  return m;
}

ToForestModel fit_to_forest(const Dataset& d, std::span<const double> scores,
                            const ForestParams& params, Rng& rng) {
  validate_dataset(d);
  const std::vector<double> z = transformed_outcome(d, scores);
  ToForestModel m;
  m.forest = fit_regression_forest(d.features, z, params, rng);
  return m;
}

DbForestModel fit_db_forest(const Dataset& d, const ForestParams& params, Rng& rng) {
  validate_dataset(d);
  std::vector<std::size_t> rows1, rows0;
  for (std::size_t i = 0; i < d.n(); ++i)
    (d.treatment[i] == 1 ? rows1 : rows0).push_back(i);
  const std::size_t need = 2 * static_cast<std::size_t>(params.min_leaf);
  if (rows1.size() < need || rows0.size() < need)
    fail("arm-too-small", "each arm needs at least 2*min_leaf rows");

  const Dataset d1 = d.subset(rows1);
  const Dataset d0 = d.subset(rows0);
  DbForestModel m;
  m.forest1 = fit_regression_forest(d1.features, d1.response, params, rng);
  m.forest0 = fit_regression_forest(d0.features, d0.response, params, rng);
  return m;
}

}  // namespace hte
