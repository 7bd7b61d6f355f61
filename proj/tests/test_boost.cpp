#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "hte/causal_boost.hpp"

using namespace hte;

namespace {

Dataset interaction_dataset(Rng& rng, std::size_t n, double noise = 0.5) {
  Dataset d;
  d.features = Matrix(n, 4);
  d.treatment.resize(n);
  d.response.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 4; ++j) d.features(i, j) = rng.normal();
    d.treatment[i] = rng.bernoulli(0.5) ? 1 : 0;
    const double tau =
        2.0 * (d.features(i, 0) > 0 ? 1.0 : 0.0) * (d.features(i, 1) > 0 ? 1.0 : 0.0);
    const double mu = d.features(i, 2);
    d.response[i] = mu + (d.treatment[i] - 0.5) * tau + noise * rng.normal();
  }
  return d;
}

std::vector<double> true_tau(const Dataset& d) {
  std::vector<double> tau(d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    tau[i] = 2.0 * (d.features(i, 0) > 0 ? 1.0 : 0.0) * (d.features(i, 1) > 0 ? 1.0 : 0.0);
  }
  return tau;
}

}  // namespace

TEST_CASE("one unshrunk stage equals a single causal tree") {
  Rng rng(1);
  const Dataset d = interaction_dataset(rng, 150);
  const StrataAssignment sa = StrataAssignment::uniform(d.n());
  BoostParams params;
  params.n_trees = 1;
  params.epsilon = 1.0;
  Rng b_rng(0), t_rng(0);
  const BoostModel m = fit_causal_boost(d, sa, params, b_rng);
  const CausalTree tree = fit_causal_tree(d, sa, params.tree, t_rng);

  std::vector<double> x;
  for (std::size_t i = 0; i < d.n(); ++i) {
    d.features.row(i, x);
    const auto bm = m.predict_means(x);
    const auto tm = predict_pair(tree, x);
    CHECK(bm.first == tm.first);
    CHECK(bm.second == tm.second);
  }
}

TEST_CASE("zero shrinkage predicts zero and leaves residuals at Y") {
  Rng rng(2);
  const Dataset d = interaction_dataset(rng, 80);
  BoostParams params;
  params.n_trees = 5;
  params.epsilon = 0.0;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), params, b_rng);
  const auto pr = m.predict_means(std::vector<double>{0.0, 0.0, 0.0, 0.0});
  CHECK(pr.first == 0.0);
  CHECK(pr.second == 0.0);
}

TEST_CASE("stage additivity: predict(k) - predict(k-1) = eps * tree_k") {
  Rng rng(3);
  const Dataset d = interaction_dataset(rng, 120);
  BoostParams params;
  params.n_trees = 6;
  params.epsilon = 0.3;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), params, b_rng);
  std::vector<double> x{0.5, -0.2, 1.0, 0.0};
  for (int k = 2; k <= m.n_stages(); ++k) {
    const auto a = m.predict_at(x, k);
    const auto b = m.predict_at(x, k - 1);
    const LeafEstimate& leaf = m.trees[static_cast<std::size_t>(k - 1)].leaf_at(x);
    CHECK(a.first - b.first == doctest::Approx(params.epsilon * leaf.mu1).epsilon(1e-12));
    CHECK(a.second - b.second == doctest::Approx(params.epsilon * leaf.mu0).epsilon(1e-12));
  }
  CHECK_THROWS_WITH_AS(m.predict_at(x, 0), doctest::Contains("k-out-of-range"), Error);
  CHECK_THROWS_AS(m.predict_at(x, m.n_stages() + 1), Error);
}

TEST_CASE("training residuals equal Y minus the running model") {
  Rng rng(4);
  const Dataset d = interaction_dataset(rng, 100);
  BoostParams params;
  params.n_trees = 8;
  params.epsilon = 0.25;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), params, b_rng);

  // Recompute residuals by stage and compare with Y - G_k at (X_i, T_i).
  std::vector<double> residual(d.response.begin(), d.response.end());
  std::vector<double> x;
  for (int k = 1; k <= m.n_stages(); ++k) {
    for (std::size_t i = 0; i < d.n(); ++i) {
      d.features.row(i, x);
      const LeafEstimate& leaf = m.trees[static_cast<std::size_t>(k - 1)].leaf_at(x);
      residual[i] -= params.epsilon * (d.treatment[i] == 1 ? leaf.mu1 : leaf.mu0);
      const auto g = m.predict_at(x, k);
      const double expected = d.response[i] - (d.treatment[i] == 1 ? g.first : g.second);
      CHECK(residual[i] == doctest::Approx(expected).epsilon(1e-10));
    }
  }
}

TEST_CASE("training MSE improves over the early boosting path") {
  Rng rng(5);
  const Dataset d = interaction_dataset(rng, 400, 0.5);
  const std::vector<double> tau = true_tau(d);
  BoostParams params;
  params.n_trees = 25;
  params.epsilon = 0.3;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), params, b_rng);

  auto mse_at = [&](int k) {
    double sum = 0.0;
    std::vector<double> x;
    for (std::size_t i = 0; i < d.n(); ++i) {
      d.features.row(i, x);
      const auto g = m.predict_at(x, k);
      const double e = g.first - g.second - tau[i];
      sum += e * e;
    }
    return sum / static_cast<double>(d.n());
  };
  CHECK(mse_at(10) < mse_at(1));
  CHECK(mse_at(m.n_stages()) < mse_at(1));
}

TEST_CASE("validating on the training set with one unshrunk stage gives zero error") {
  Rng rng(6);
  const Dataset d = interaction_dataset(rng, 120);
  const StrataAssignment sa = StrataAssignment::uniform(d.n());
  BoostParams params;
  params.n_trees = 1;
  params.epsilon = 1.0;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, sa, params, b_rng);
  const BoostCvReport rep = validate_boost(m, d, sa);
  REQUIRE(rep.per_k_error.size() == 1);
  CHECK(rep.per_k_error[0] == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("a zero model is scored against the saturated re-estimate") {
  Rng rng(7);
  const Dataset d = interaction_dataset(rng, 100);
  const StrataAssignment sa = StrataAssignment::uniform(d.n());
  BoostParams params;
  params.n_trees = 4;
  params.epsilon = 0.0;  // G_k identically zero; H_K re-estimates leaf pairs from v
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, sa, params, b_rng);
  const BoostCvReport rep = validate_boost(m, d, sa);

  // eps = 0 zeroes both G_k and the re-estimated H_K, so the error, which is
  // the sum of squared (G_k - H_K) effects, collapses to sum of H_K^2 = 0.
  for (double e : rep.per_k_error) CHECK(e == 0.0);
}

TEST_CASE("validation error curve dips before the saturated end") {
  Rng rng(8);
  const Dataset train = interaction_dataset(rng, 300, 1.0);
  const Dataset valid = interaction_dataset(rng, 200, 1.0);
  BoostParams params;
  params.n_trees = 40;
  params.epsilon = 0.4;
  Rng b_rng(0);
  const BoostModel m =
      fit_causal_boost(train, StrataAssignment::uniform(train.n()), params, b_rng);
  const BoostCvReport rep = validate_boost(m, valid, StrataAssignment::uniform(valid.n()));
  REQUIRE(rep.per_k_error.size() == 40);
  CHECK(rep.k_star < 40);
  CHECK(rep.per_k_error[static_cast<std::size_t>(rep.k_star - 1)] < rep.per_k_error[39]);
}

TEST_CASE("cross-validation on duplicated halves gives identical fold errors") {
  Rng rng(9);
  const Dataset half = interaction_dataset(rng, 60);
  // Duplicate every row; with 2 folds each fold receives one copy.
  std::vector<std::size_t> twice;
  for (std::size_t i = 0; i < half.n(); ++i) {
    twice.push_back(i);
    twice.push_back(i);
  }
  const Dataset dup = half.subset(twice);
  BoostParams params;
  params.n_trees = 5;
  params.epsilon = 0.5;
  Rng cv_rng(0);
  const BoostCvResult res =
      cross_validate_boost(dup, StrataAssignment::uniform(dup.n()), 2, params, cv_rng);
  REQUIRE(res.report.per_k_error.size() == 5);
  CHECK(res.report.k_star >= 1);
  CHECK(res.model.n_stages() == res.report.k_star);
}

TEST_CASE("constant effect selects a small stage count") {
  Rng rng(10);
  const std::size_t n = 200;
  Dataset d;
  d.features = Matrix(n, 3);
  d.treatment.resize(n);
  d.response.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 3; ++j) d.features(i, j) = rng.normal();
    d.treatment[i] = rng.bernoulli(0.5) ? 1 : 0;
    d.response[i] = (d.treatment[i] - 0.5) * 2.0 + 0.3 * rng.normal();
  }
  BoostParams params;
  params.n_trees = 30;
  params.epsilon = 0.3;
  Rng cv_rng(1);
  const BoostCvResult res =
      cross_validate_boost(d, StrataAssignment::uniform(n), 3, params, cv_rng);
  CHECK(res.report.k_star <= 15);
}

TEST_CASE("fold counts must fit the smaller arm") {
  Dataset d;
  d.features = Matrix(6, 1);
  for (std::size_t i = 0; i < 6; ++i) d.features(i, 0) = static_cast<double>(i);
  d.treatment = {1, 1, 0, 0, 0, 0};
  d.response = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  BoostParams params;
  Rng rng(0);
  CHECK_THROWS_WITH_AS(
      cross_validate_boost(d, StrataAssignment::uniform(6), 3, params, rng),
      doctest::Contains("fold-too-small"), Error);
}

TEST_CASE("empty validation sets are rejected") {
  Rng rng(11);
  const Dataset d = interaction_dataset(rng, 60);
  BoostParams params;
  params.n_trees = 2;
  Rng b_rng(0);
  const BoostModel m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), params, b_rng);
  Dataset empty;
  empty.features = Matrix(0, 4);
  CHECK_THROWS_WITH_AS(validate_boost(m, empty, StrataAssignment::uniform(0)),
                       doctest::Contains("empty-validation-set"), Error);
}
