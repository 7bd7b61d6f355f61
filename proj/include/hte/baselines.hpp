#pragma once

#include <span>

#include "hte/forest.hpp"
#include "hte/types.hpp"

namespace hte {

/// Constant predictor: the difference of overall arm means.
class NullModel : public EffectModel {
 public:
  double mu1 = 0.0;
  double mu0 = 0.0;

  double effect() const { return mu1 - mu0; }
  std::pair<double, double> predict_means(std::span<const double>) const override {
    return {mu1, mu0};
  }
};

NullModel fit_null(const Dataset& d);

/// Plain regression forest on the transformed outcome; a pure effect
/// predictor with no per-arm means.
class ToForestModel : public EffectModel {
 public:
  RegressionForest forest;

  std::pair<double, double> predict_means(std::span<const double> x) const override {
    return {forest.predict(x), 0.0};
  }
  bool has_pair() const override { return false; }
};

ToForestModel fit_to_forest(const Dataset& d, std::span<const double> scores,
                            const ForestParams& params, Rng& rng);

/// Two unrelated forests, one per arm ("different basis").
class DbForestModel : public EffectModel {
 public:
  RegressionForest forest1;
  RegressionForest forest0;

  std::pair<double, double> predict_means(std::span<const double> x) const override {
    return {forest1.predict(x), forest0.predict(x)};
  }
};

DbForestModel fit_db_forest(const Dataset& d, const ForestParams& params, Rng& rng);

}  // namespace hte
