#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hte/propensity.hpp"
#include "hte/simbench.hpp"

using namespace hte;

namespace {

Dataset make_dataset(const std::vector<int>& t, const std::vector<double>& y) {
  Dataset d;
  d.features = Matrix(t.size(), 1);
  for (std::size_t i = 0; i < t.size(); ++i) d.features(i, 0) = static_cast<double>(i);
  d.treatment = t;
  d.response = y;
  return d;
}

}  // namespace

TEST_CASE("strata boundaries follow the half-open convention") {
  const std::vector<double> scores{0.95, 0.1, 0.05, 0.999, 0.5};
  const StrataAssignment sa = assign_strata(scores, 10);
  CHECK(sa.strata[0] == 10);  // [0.9, 1] closed on the right
  CHECK(sa.strata[1] == 2);   // 0.1 starts the second interval
  CHECK(sa.strata[2] == 1);
  CHECK(sa.strata[3] == 10);
  CHECK(sa.strata[4] == 6);
  CHECK(sa.boundaries.front() == 0.0);
  CHECK(sa.boundaries.back() == 1.0);
}

TEST_CASE("S=1 assigns everything to one stratum") {
  const std::vector<double> scores{0.2, 0.8, 0.5};
  const StrataAssignment sa = assign_strata(scores, 1);
  for (int s : sa.strata) CHECK(s == 1);
}

TEST_CASE("transformed outcome examples") {
  Dataset d = make_dataset({1, 0}, {2.0, 3.0});
  const std::vector<double> scores{0.5, 0.25};
  const std::vector<double> z = transformed_outcome(d, scores);
  CHECK(z[0] == doctest::Approx(4.0));
  CHECK(z[1] == doctest::Approx(-4.0));
}

TEST_CASE("transformed outcome rejects out-of-range scores") {
  Dataset d = make_dataset({1, 0}, {2.0, 3.0});
  CHECK_THROWS_WITH_AS(transformed_outcome(d, std::vector<double>{0.5, 1.0}),
                       doctest::Contains("score-out-of-range"), Error);
}

TEST_CASE("transformed outcome is conditionally unbiased for the effect") {
  // Known propensity and effect; Monte Carlo mean of Z at fixed x matches tau(x).
  const double pis[3] = {0.3, 0.5, 0.8};
  const double taus[3] = {2.0, -1.0, 0.5};
  const double mus[3] = {1.0, 0.0, -2.0};
  Rng rng(99);
  const int reps = 20000;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int r = 0; r < reps; ++r) {
      const int t = rng.bernoulli(pis[c]) ? 1 : 0;
      const double y = mus[c] + (t - 0.5) * taus[c] + 0.5 * rng.normal();
      const double z = t == 1 ? y / pis[c] : -y / (1.0 - pis[c]);
      sum += z;
      sq += z * z;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean - taus[c]) < 4.0 * se);
  }
}

TEST_CASE("ate_cm arithmetic and variance") {
  Dataset d = make_dataset({1, 1, 0, 0}, {3.0, 5.0, 1.0, 1.0});
  const AteReport r = ate_cm(d);
  CHECK(r.estimate == doctest::Approx(3.0));
  // s1^2 = 2, s0^2 = 0 over two units each.
  CHECK(*r.variance_estimate == doctest::Approx(1.0));
}

TEST_CASE("identical arms give a zero ATE") {
  Dataset d = make_dataset({1, 0, 1, 0}, {2.0, 2.0, 4.0, 4.0});
  CHECK(ate_cm(d).estimate == doctest::Approx(0.0));
}

TEST_CASE("TO minus CM identity at scores 1/2") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 9 + rng.uniform_index(30);
    std::vector<int> t(n);
    std::vector<double> y(n);
    bool has1 = false, has0 = false;
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = rng.bernoulli(0.4) ? 1 : 0;
      (t[i] ? has1 : has0) = true;
      y[i] = 3.0 * rng.normal() + 1.0;
    }
    if (!has1 || !has0) continue;
    Dataset d = make_dataset(t, y);
    const std::vector<double> half(n, 0.5);
    const double to = ate_to(d, half).estimate;
    const double cm = ate_cm(d).estimate;
    const double n1 = static_cast<double>(d.n_treated());
    const double n0 = static_cast<double>(d.n_control());
    double m1 = 0.0, m0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) (t[i] ? m1 : m0) += y[i];
    m1 /= n1;
    m0 /= n0;
    const double identity = cm + (n1 - n0) / static_cast<double>(n) * (m1 + m0);
    CHECK(to == doctest::Approx(identity).epsilon(1e-12));
  }
}

TEST_CASE("balanced arms at scores 1/2 make TO equal CM") {
  Dataset d = make_dataset({1, 0, 1, 0}, {4.0, 2.0, 6.0, 0.0});
  const std::vector<double> half(4, 0.5);
  CHECK(ate_to(d, half).estimate == doctest::Approx(ate_cm(d).estimate).epsilon(1e-14));
}

TEST_CASE("all-zero responses give a zero TO estimate") {
  Dataset d = make_dataset({1, 0, 1, 0}, {0.0, 0.0, 0.0, 0.0});
  const std::vector<double> half(4, 0.5);
  CHECK(ate_to(d, half).estimate == 0.0);
}

TEST_CASE("uniform scores collapse IPW to CM") {
  Dataset d = make_dataset({1, 0, 0, 1, 0}, {5.0, 1.0, 2.0, 7.0, 3.0});
  const std::vector<double> half(5, 0.5);
  CHECK(ate_ipw(d, half).estimate == doctest::Approx(ate_cm(d).estimate).epsilon(1e-14));
}

TEST_CASE("a dominant weight pulls the IPW estimate") {
  // Unit 0 is treated with a tiny score, so its response dominates arm 1.
  Dataset d = make_dataset({1, 1, 0, 0}, {10.0, 0.0, 1.0, 1.0});
  const std::vector<double> scores{0.01, 0.99, 0.5, 0.5};
  const AteReport r = ate_ipw(d, scores);
  CHECK(r.estimate > 8.0);
}

TEST_CASE("single-stratum stratified ATE equals CM") {
  Dataset d = make_dataset({1, 0, 1, 0, 1}, {4.0, 1.0, 6.0, 3.0, 5.0});
  const StrataAssignment sa = StrataAssignment::uniform(5);
  const AteReport strat = ate_stratified(d, sa);
  const AteReport cm = ate_cm(d);
  CHECK(strat.estimate == doctest::Approx(cm.estimate).epsilon(1e-14));
  CHECK(*strat.variance_estimate == doctest::Approx(*cm.variance_estimate).epsilon(1e-12));
}

TEST_CASE("two-strata fixture matches hand-computed sums") {
  // Stratum A (scores ~0.15): treated {4, 6}, control {1, 3}.
  // Stratum B (scores ~0.75): treated {10}, control {2, 4, 6}.
  Dataset d = make_dataset({1, 1, 0, 0, 1, 0, 0, 0},
                           {4.0, 6.0, 1.0, 3.0, 10.0, 2.0, 4.0, 6.0});
  std::vector<double> scores{0.15, 0.15, 0.15, 0.15, 0.75, 0.75, 0.75, 0.75};
  const StrataAssignment sa = assign_strata(scores, 10);
  const AteReport r = ate_stratified(d, sa);
  // Per-stratum diffs 3 and 6 with equal weight 4 -> 4.5.
  CHECK(r.estimate == doctest::Approx(4.5));
  // Var: (16*(2/2 + 2/2) + 16*(0 + 4/3)) / 64.
  CHECK(*r.variance_estimate == doctest::Approx((32.0 + 16.0 * 4.0 / 3.0) / 64.0));
}

TEST_CASE("strata missing an arm are excluded") {
  Dataset d = make_dataset({1, 1, 0, 0, 1}, {4.0, 6.0, 1.0, 3.0, 100.0});
  std::vector<double> scores{0.15, 0.15, 0.15, 0.15, 0.95};  // lone treated unit in stratum 10
  const StrataAssignment sa = assign_strata(scores, 10);
  CHECK(ate_stratified(d, sa).estimate == doctest::Approx(3.0));
}

TEST_CASE("no stratum with both arms fails") {
  Dataset d = make_dataset({1, 1, 0, 0}, {1.0, 2.0, 3.0, 4.0});
  std::vector<double> scores{0.15, 0.15, 0.75, 0.75};
  const StrataAssignment sa = assign_strata(scores, 10);
  CHECK_THROWS_WITH_AS(ate_stratified(d, sa), doctest::Contains("no-valid-stratum"), Error);
}

TEST_CASE("ATE estimators are invariant to row permutation") {
  Rng rng(13);
  const std::size_t n = 40;
  std::vector<int> t(n);
  std::vector<double> y(n), scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = i % 3 == 0 ? 1 : 0;
    y[i] = rng.normal() * 2.0 + t[i];
    scores[i] = 0.2 + 0.6 * rng.uniform01();
  }
  Dataset d = make_dataset(t, y);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i + 1 < n; ++i) std::swap(perm[i], perm[i + rng.uniform_index(n - i)]);
  Dataset dp = d.subset(perm);
  std::vector<double> sp(n);
  for (std::size_t i = 0; i < n; ++i) sp[i] = scores[perm[i]];

  CHECK(ate_cm(dp).estimate == doctest::Approx(ate_cm(d).estimate).epsilon(1e-12));
  CHECK(ate_to(dp, sp).estimate == doctest::Approx(ate_to(d, scores).estimate).epsilon(1e-12));
  CHECK(ate_ipw(dp, sp).estimate == doctest::Approx(ate_ipw(d, scores).estimate).epsilon(1e-12));
  CHECK(ate_stratified(dp, assign_strata(sp, 5)).estimate ==
        doctest::Approx(ate_stratified(d, assign_strata(scores, 5)).estimate).epsilon(1e-12));
}

TEST_CASE("confounded draw: weighting beats the raw difference") {
  // T depends on x which also drives the response; tau = 1.
  Rng rng(7);
  const int reps = 200;
  const std::size_t n = 300;
  double bias_cm = 0.0, bias_ipw = 0.0, bias_strat = 0.0;
  for (int r = 0; r < reps; ++r) {
    std::vector<int> t(n);
    std::vector<double> y(n), scores(n);
    Dataset d;
    d.features = Matrix(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = rng.normal();
      d.features(i, 0) = x;
      scores[i] = biased_propensity(x, 0.0);
      scores[i] = std::clamp(scores[i], 0.025, 0.975);
      t[i] = rng.bernoulli(scores[i]) ? 1 : 0;
      y[i] = x + 1.0 * t[i] + 0.5 * rng.normal();
    }
    d.treatment = t;
    d.response = y;
    if (d.n_treated() == 0 || d.n_control() == 0) continue;
    bias_cm += ate_cm(d).estimate - 1.0;
    bias_ipw += ate_ipw(d, scores).estimate - 1.0;
    bias_strat += ate_stratified(d, assign_strata(scores, 10)).estimate - 1.0;
  }
  CHECK(std::abs(bias_ipw) < std::abs(bias_cm));
  CHECK(std::abs(bias_strat) < std::abs(bias_cm));
}

TEST_CASE("estimate_propensity recovers a randomized assignment rate") {
  Rng rng(3);
  const std::size_t n = 500;
  Dataset d;
  d.features = Matrix(n, 5);
  d.treatment.resize(n);
  d.response.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 5; ++j) d.features(i, j) = rng.normal();
    d.treatment[i] = rng.bernoulli(0.5) ? 1 : 0;
  }
  ForestParams p;
  p.n_trees = 50;
  Rng f_rng(1);
  const std::vector<double> scores = estimate_propensity(d, p, f_rng);
  double mean = 0.0;
  for (double s : scores) mean += s;
  mean /= static_cast<double>(n);
  CHECK(mean > 0.45);
  CHECK(mean < 0.55);
}

TEST_CASE("estimate_propensity saturates on a separable assignment") {
  Rng rng(8);
  const std::size_t n = 300;
  Dataset d;
  d.features = Matrix(n, 2);
  d.treatment.resize(n);
  d.response.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    d.features(i, 0) = rng.normal();
    d.features(i, 1) = rng.normal();
    d.treatment[i] = d.features(i, 0) > 0.0 ? 1 : 0;
  }
  ForestParams p;
  p.n_trees = 50;
  p.mtry = 2;
  Rng f_rng(2);
  const std::vector<double> scores = estimate_propensity(d, p, f_rng);
  double hi = 0.0, lo = 0.0;
  std::size_t nhi = 0, nlo = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d.features(i, 0) > 1.0) {
      hi += scores[i];
      ++nhi;
    } else if (d.features(i, 0) < -1.0) {
      lo += scores[i];
      ++nlo;
    }
  }
  CHECK(hi / static_cast<double>(nhi) > 0.85);
  CHECK(lo / static_cast<double>(nlo) < 0.15);
}

TEST_CASE("constant features give the marginal rate") {
  Rng rng(15);
  const std::size_t n = 400;
  Dataset d;
  d.features = Matrix(n, 2, 1.0);
  d.treatment.resize(n);
  d.response.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) d.treatment[i] = rng.bernoulli(0.3) ? 1 : 0;
  const double rate = static_cast<double>(d.n_treated()) / static_cast<double>(n);
  ForestParams p;
  p.n_trees = 50;
  Rng f_rng(3);
  const std::vector<double> scores = estimate_propensity(d, p, f_rng);
  for (double s : scores) CHECK(std::abs(s - rate) < 0.05);
}

TEST_CASE("variance study: basic shape at unit scale") {
  const std::vector<int> ns{10, 300};
  const std::vector<double> ratios{0.0, 0.5};
  const auto rows = ate_variance_study(ns, ratios, 1.0, 2000, 42);
  REQUIRE(rows.size() == 4);
  for (const auto& r : rows) {
    CHECK(r.reps == 2000);
    if (r.ratio == 0.5) CHECK(r.var_to > r.var_cm);
  }
}

TEST_CASE("variance study rejects tiny rep counts") {
  const std::vector<int> ns{10};
  const std::vector<double> ratios{0.0};
  CHECK_THROWS_AS(ate_variance_study(ns, ratios, 1.0, 10, 1), Error);
}

TEST_CASE("conditional variance of the CM estimator matches theory") {
  // With N1 fixed, Var(CM | N1) = sigma^2/N1 + sigma^2/N0.
  Rng rng(123);
  const int n1 = 7, n0 = 3, reps = 50000;
  const double sigma = 1.5;
  double sum = 0.0, sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double y1 = sigma / std::sqrt(n1) * rng.normal();
    const double y0 = sigma / std::sqrt(n0) * rng.normal();
    const double cm = y1 - y0;
    sum += cm;
    sq += cm * cm;
  }
  const double mean = sum / reps;
  const double var = sq / reps - mean * mean;
  const double theory = sigma * sigma * (1.0 / n1 + 1.0 / n0);
  CHECK(std::abs(var - theory) / theory < 0.05);
}
