#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "hte/forest.hpp"
#include "hte/propensity.hpp"
#include "hte/rng.hpp"
#include "hte/types.hpp"

namespace hte {

/// One hinge factor: (x_j - knot)+ when positive, else (knot - x_j)+.
struct HingeTerm {
  int feature = 0;
  double knot = 0.0;
  bool positive = true;
};

/// Product of hinge factors; the empty product is the constant 1.
struct BasisFunction {
  std::vector<HingeTerm> terms;

  double eval(std::span<const double> x) const;
  int degree() const { return static_cast<int>(terms.size()); }
  bool uses_feature(int j) const;
};

struct MarsParams {
  int forward_pairs = 5;      // hinge pairs added in the forward pass; the
                              // default gives a regression basis of dimension
                              // 1 + 2*5 = 11
  int knots_per_feature = 32; // distinct values subsampled to this many quantile knots
  int max_degree = 3;
  bool backward_deletion = true;  // deletion + size selection (skipped when bagging)
  int size_select_bags = 20;      // bootstrap resamples for out-of-bag size selection
  int min_span = 0;  // units per arm (per stratum) a hinge side needs to enter a fit;
                     // 0 picks max(3, ceil(3 + log2(p)))
};

int effective_min_span(const MarsParams& params, std::size_t p);

/// Arm-shared hinge basis with arm-specific coefficients; per-stratum
/// coefficient sets when fit with a strata assignment.
class MarsModel : public EffectModel {
 public:
  std::vector<BasisFunction> basis;  // basis[0] is the constant
  std::vector<std::vector<double>> coef1;  // [stratum-1][basis index]
  std::vector<std::vector<double>> coef0;
  int S = 1;
  std::vector<double> strata_boundaries;
  std::shared_ptr<const RegressionForest> propensity_model;  // resolves strata for new x

  std::pair<double, double> predict_means_in_stratum(std::span<const double> x,
                                                     int stratum) const;
  std::pair<double, double> predict_means(std::span<const double> x) const override;
};

/// Candidate score emitted to the step observer: the criterion is
/// sum_s n_s * (RSS_shared,s - RSS_arm-specific,s) for the pair of hinges at
/// (basis_index, feature, knot).
struct MarsCandidateScore {
  int basis_index = 0;
  int feature = 0;
  double knot = 0.0;
  double criterion = 0.0;
};

using MarsStepObserver =
    std::function<void(int step, const std::vector<MarsCandidateScore>&, std::size_t chosen)>;

MarsModel fit_causal_mars(const Dataset& d, const MarsParams& params,
                          const StrataAssignment* sa, Rng& rng,
                          const MarsStepObserver& observer = nullptr);

class BaggedMars : public EffectModel {
 public:
  std::vector<MarsModel> models;

  std::pair<double, double> predict_means_in_stratum(std::span<const double> x,
                                                     int stratum) const;
  std::pair<double, double> predict_means(std::span<const double> x) const override;
};

/// B bootstrap fits without backward deletion or size selection; the bagged
/// effect is the average of member effects.
BaggedMars fit_bagged_causal_mars(const Dataset& d, const MarsParams& params, int bags,
                                  const StrataAssignment* sa, Rng& rng);

std::pair<double, double> predict_mars(const MarsModel& m, std::span<const double> x,
                                       std::optional<int> stratum = std::nullopt);

}  // namespace hte
