#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "hte/causal_boost.hpp"
#include "hte/causal_mars.hpp"
#include "hte/forest.hpp"
#include "hte/types.hpp"

namespace hte {

/// Method selection plus every hyperparameter, as read from a JSON config.
/// Unknown keys are rejected.
struct RunConfig {
  std::string method = "pto";       // null | to_forest | db_forest | pto |
                                    // causal_boost | causal_mars | bagged_causal_mars
  std::string adjustment = "none";  // none | stratified
  int strata = 10;
  std::uint64_t seed = 0;
  std::string scores = "estimate";  // estimate | uniform: transformed-outcome scores
  bool pto_smooth = true;
  ForestParams forest{};
  BoostParams boost{200, 0.05, CausalTreeParams{}, 1.0};
  MarsParams mars{};
  int mars_bags = 50;
  int cv_folds = 5;

  static RunConfig from_file(const std::string& path);
  static RunConfig from_json_text(const std::string& text);
  std::string to_json_text() const;
};

struct FittedModel {
  std::string method;
  std::unique_ptr<EffectModel> model;
};

/// Fits the configured method. Stratified fits embed the propensity forest in
/// the model so new points can be scored.
FittedModel fit_with_config(const Dataset& d, const RunConfig& cfg);

}  // namespace hte
