#include "hte/propensity.hpp"

#include <algorithm>
#include <cmath>

#include "hte/threading.hpp"

namespace hte {

namespace {

void check_scores(std::span<const double> scores, std::size_t n) {
  if (scores.size() != n) fail("dimension-mismatch", "scores length != n");
  for (double s : scores) {
    if (!(s > 0.0 && s < 1.0)) fail("score-out-of-range", "scores must lie in (0,1)");
  }
}

struct ArmMoments {
  double mean1 = 0.0, mean0 = 0.0;
  double var1 = 0.0, var0 = 0.0;  // sample variances (0 when n < 2)
  std::size_t n1 = 0, n0 = 0;
};

ArmMoments arm_moments(std::span<const double> y, std::span<const int> t) {
  ArmMoments m;
  double s1 = 0.0, s0 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (t[i] == 1) {
      s1 += y[i];
      ++m.n1;
    } else {
      s0 += y[i];
      ++m.n0;
    }
  }
  if (m.n1 > 0) m.mean1 = s1 / static_cast<double>(m.n1);
  if (m.n0 > 0) m.mean0 = s0 / static_cast<double>(m.n0);
  double q1 = 0.0, q0 = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - (t[i] == 1 ? m.mean1 : m.mean0);
    (t[i] == 1 ? q1 : q0) += d * d;
  }
  if (m.n1 > 1) m.var1 = q1 / static_cast<double>(m.n1 - 1);
  if (m.n0 > 1) m.var0 = q0 / static_cast<double>(m.n0 - 1);
  return m;
}

double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double q = 0.0;
  for (double x : v) q += (x - mean) * (x - mean);
  return q / static_cast<double>(v.size() - 1);
}

}  // namespace

StrataAssignment StrataAssignment::uniform(std::size_t n) {
  StrataAssignment sa;
  sa.scores.assign(n, 0.5);
  sa.strata.assign(n, 1);
  sa.S = 1;
  sa.boundaries = {0.0, 1.0};
  return sa;
}

StrataAssignment StrataAssignment::subset(std::span<const std::size_t> rows) const {
  StrataAssignment out;
  out.S = S;
  out.boundaries = boundaries;
  out.scores.reserve(rows.size());
  out.strata.reserve(rows.size());
  for (std::size_t r : rows) {
    out.scores.push_back(scores[r]);
    out.strata.push_back(strata[r]);
  }
  return out;
}

StrataAssignment assign_strata(std::span<const double> scores, int S) {
  if (S < 1) fail("invalid-params", "S must be >= 1");
  check_scores(scores, scores.size());

  StrataAssignment sa;
  sa.S = S;
  sa.boundaries.resize(static_cast<std::size_t>(S) + 1);
  for (int s = 0; s <= S; ++s)
    sa.boundaries[static_cast<std::size_t>(s)] = static_cast<double>(s) / static_cast<double>(S);
  sa.scores.assign(scores.begin(), scores.end());
  sa.strata.resize(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    int s = S;  // last interval closed on the right
    for (int k = 1; k < S; ++k) {
      if (scores[i] < sa.boundaries[static_cast<std::size_t>(k)]) {
        s = k;
        break;
      }
    }
    sa.strata[i] = s;
  }
  return sa;
}

PropensityModel fit_propensity(const Dataset& d, const ForestParams& params, Rng& rng) {
  validate_dataset(d);
  PropensityModel m;
  m.forest = fit_probability_forest(d.features, d.treatment, params, rng, kDefaultClip);
  m.oob_scores = m.forest.oob_predict(d.features);
  return m;
}

std::vector<double> estimate_propensity(const Dataset& d, const ForestParams& params, Rng& rng) {
  return fit_propensity(d, params, rng).oob_scores;
}

std::vector<double> estimate_propensity(const Dataset& d, const ForestParams& params) {
  Rng rng(params.seed);
  return estimate_propensity(d, params, rng);
}

std::vector<double> transformed_outcome(const Dataset& d, std::span<const double> scores) {
  check_scores(scores, d.n());
  std::vector<double> z(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    z[i] = d.treatment[i] == 1 ? d.response[i] / scores[i]
                               : -d.response[i] / (1.0 - scores[i]);
  }
  return z;
}

AteReport ate_cm(const Dataset& d) {
  const ArmMoments m = arm_moments(d.response, d.treatment);
  if (m.n1 == 0 || m.n0 == 0) fail("degenerate-arm", "both arms required");
  AteReport r;
  r.method = AteMethod::CM;
  r.estimate = m.mean1 - m.mean0;
  r.variance_estimate =
      m.var1 / static_cast<double>(m.n1) + m.var0 / static_cast<double>(m.n0);
  return r;
}

AteReport ate_to(const Dataset& d, std::span<const double> scores) {
  const std::vector<double> z = transformed_outcome(d, scores);
  double mean = 0.0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(z.size());
  AteReport r;
  r.method = AteMethod::TO;
  r.estimate = mean;
  r.variance_estimate = sample_variance(z) / static_cast<double>(z.size());
  return r;
}

AteReport ate_ipw(const Dataset& d, std::span<const double> scores) {
  check_scores(scores, d.n());
  double wy1 = 0.0, w1 = 0.0, wy0 = 0.0, w0 = 0.0;
  for (std::size_t i = 0; i < d.n(); ++i) {
    if (d.treatment[i] == 1) {
      const double w = 1.0 / scores[i];
      wy1 += w * d.response[i];
      w1 += w;
    } else {
      const double w = 1.0 / (1.0 - scores[i]);
      wy0 += w * d.response[i];
      w0 += w;
    }
  }
  if (w1 == 0.0 || w0 == 0.0) fail("degenerate-arm", "both arms required");
  AteReport r;
  r.method = AteMethod::IPW;
  r.estimate = wy1 / w1 - wy0 / w0;
  return r;
}

AteReport ate_stratified(const Dataset& d, const StrataAssignment& sa) {
  if (sa.strata.size() != d.n()) fail("dimension-mismatch", "strata length != n");
  const int S = sa.S;
  std::vector<double> sum1(static_cast<std::size_t>(S) + 1, 0.0);
  std::vector<double> sum0(static_cast<std::size_t>(S) + 1, 0.0);
  std::vector<double> sq1(static_cast<std::size_t>(S) + 1, 0.0);
  std::vector<double> sq0(static_cast<std::size_t>(S) + 1, 0.0);
  std::vector<std::size_t> n1(static_cast<std::size_t>(S) + 1, 0);
  std::vector<std::size_t> n0(static_cast<std::size_t>(S) + 1, 0);

  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto s = static_cast<std::size_t>(sa.strata[i]);
    const double y = d.response[i];
    if (d.treatment[i] == 1) {
      sum1[s] += y;
      sq1[s] += y * y;
      ++n1[s];
    } else {
      sum0[s] += y;
      sq0[s] += y * y;
      ++n0[s];
    }
  }

  double num = 0.0, den = 0.0, var_num = 0.0;
  for (int s = 1; s <= S; ++s) {
    const auto k = static_cast<std::size_t>(s);
    if (n1[k] == 0 || n0[k] == 0) continue;  // stratum missing an arm
    const double ns = static_cast<double>(n1[k] + n0[k]);
    const double m1 = sum1[k] / static_cast<double>(n1[k]);
    const double m0 = sum0[k] / static_cast<double>(n0[k]);
    num += ns * (m1 - m0);
    den += ns;
    const double v1 =
        n1[k] > 1 ? std::max(0.0, (sq1[k] - sum1[k] * m1) / static_cast<double>(n1[k] - 1)) : 0.0;
    const double v0 =
        n0[k] > 1 ? std::max(0.0, (sq0[k] - sum0[k] * m0) / static_cast<double>(n0[k] - 1)) : 0.0;
    const double sigma2 =
        v1 / static_cast<double>(n1[k]) + v0 / static_cast<double>(n0[k]);
    var_num += ns * ns * sigma2;
  }
  if (den == 0.0) fail("no-valid-stratum", "no stratum contains both arms");

  AteReport r;
  r.method = AteMethod::STRAT;
  r.estimate = num / den;
  r.variance_estimate = var_num / (den * den);
  return r;
}

std::string to_string(AteMethod m) {
  switch (m) {
    case AteMethod::CM: return "CM";
    case AteMethod::TO: return "TO";
    case AteMethod::IPW: return "IPW";
    case AteMethod::STRAT: return "STRAT";
  }
  return "?";
}

std::vector<VarianceStudyRow> ate_variance_study(std::span<const int> n_values,
                                                 std::span<const double> ratio_grid,
                                                 double sigma, int reps, std::uint64_t seed) {
  if (reps < 1000) fail("invalid-params", "reps must be >= 1000");
  std::vector<VarianceStudyRow> rows(n_values.size() * ratio_grid.size());
  const Rng base(seed);

  parallel_for(rows.size(), [&](std::size_t cell) {
    const int n = n_values[cell / ratio_grid.size()];
    const double ratio = ratio_grid[cell % ratio_grid.size()];
    // tau = 0; the main effect (mu1 + mu0)/2 = sigma * ratio drives the gap.
    const double mu = sigma * ratio;
    Rng rng = base.child(cell);

    std::vector<double> to(static_cast<std::size_t>(reps));
    std::vector<double> cm(static_cast<std::size_t>(reps));
    for (int r = 0; r < reps; ++r) {
      int n1 = 0;
      do {
        n1 = rng.binomial(n, 0.5);
      } while (n1 == 0 || n1 == n);
      const int n0 = n - n1;
      const double y1 = mu + sigma / std::sqrt(static_cast<double>(n1)) * rng.normal();
      const double y0 = mu + sigma / std::sqrt(static_cast<double>(n0)) * rng.normal();
      cm[static_cast<std::size_t>(r)] = y1 - y0;
      to[static_cast<std::size_t>(r)] =
          (2.0 * n1 * y1 - 2.0 * n0 * y0) / static_cast<double>(n);
    }
    rows[cell] = VarianceStudyRow{n, ratio, sample_variance(to), sample_variance(cm), reps};
  });
  return rows;
}

}  // namespace hte
