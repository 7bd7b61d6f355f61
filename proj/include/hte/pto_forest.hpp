#pragma once

#include <optional>
#include <span>
#include <vector>

#include "hte/forest.hpp"
#include "hte/types.hpp"

namespace hte {

/// Transformed-outcome forest whose trees were re-estimated with arm-specific
/// means (pollination), with an optional smoothing forest fit on the
/// resulting per-unit effects.
class PtoModel : public EffectModel {
 public:
  std::vector<PairTree> pair_forest;
  std::optional<RegressionForest> smoother;
  RegressionForest to_forest;  // step-1 forest on Z, kept for the raw readout

  /// Mean of per-tree transformed-outcome leaf means (no pollination).
  double predict_raw(std::span<const double> x) const { return to_forest.predict(x); }

  std::pair<double, double> predict_means(std::span<const double> x) const override;
  bool has_pair() const override { return !smoother.has_value(); }
};

/// Step 1: depth-controlled regression forest on the transformed outcome.
/// Step 2: pollinate every tree with the full data.
/// Step 3 (optional): regression forest on the pollinated effects, fit to
/// out-of-bag effect estimates where bootstrap coverage allows.
PtoModel fit_pto_forest(const Dataset& d, std::span<const double> scores,
                        const ForestParams& params, bool smooth, Rng& rng);
PtoModel fit_pto_forest(const Dataset& d, std::span<const double> scores,
                        const ForestParams& params, bool smooth);

double predict_pto(const PtoModel& m, std::span<const double> x);

}  // namespace hte
