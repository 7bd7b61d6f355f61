#include "hte/simbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <ostream>

#include "hte/baselines.hpp"
#include "hte/pto_forest.hpp"
#include "hte/threading.hpp"

namespace hte {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

}  // namespace

const std::array<ScenarioSpec, 16>& scenario_table() {
  static const std::array<ScenarioSpec, 16> table = [] {
    std::array<ScenarioSpec, 16> t{};
    const int ns[8] = {200, 200, 300, 300, 400, 400, 1000, 1000};
    const int ps[8] = {400, 400, 300, 300, 200, 200, 100, 100};
    const int mu[8] = {8, 5, 4, 7, 3, 1, 2, 6};
    const int tau[8] = {1, 2, 3, 4, 5, 6, 7, 8};
    const double s2[8] = {1.0, 0.25, 1.0, 0.25, 1.0, 1.0, 4.0, 4.0};
    for (int k = 0; k < 8; ++k) {
      t[static_cast<std::size_t>(k)] =
          ScenarioSpec{k + 1, ns[k], ps[k], mu[k], tau[k], s2[k], false};
      t[static_cast<std::size_t>(k + 8)] =
          ScenarioSpec{k + 9, ns[k], ps[k], mu[k], tau[k], s2[k], true};
    }
    return t;
  }();
  return table;
}

const ScenarioSpec& scenario(int id) {
  if (id < 1 || id > 16) fail("invalid-params", "scenario id must be in 1..16");
  return scenario_table()[static_cast<std::size_t>(id - 1)];
}

double eval_f(int k, std::span<const double> x) {
  if (x.size() < 9) fail("p-too-small", "test functions need p >= 9");
  const double x1 = x[0], x2 = x[1], x3 = x[2], x4 = x[3], x5 = x[4];
  const double x6 = x[5], x7 = x[6], x8 = x[7], x9 = x[8];
  switch (k) {
    case 1:
      return 0.0;
    case 2:
      return x1 > 1.0 ? 0.0 : -5.0;
    case 3:
      return 2.0 * x1 - 4.0;
    case 4:
      return x2 * x4 * x6 + 2.0 * x2 * x4 * (1.0 - x6) + 3.0 * x2 * (1.0 - x4) * x6 +
             4.0 * x2 * (1.0 - x4) * (1.0 - x6) + 5.0 * (1.0 - x2) * x4 * x6 +
             6.0 * (1.0 - x2) * x4 * (1.0 - x6) + 7.0 * (1.0 - x2) * (1.0 - x4) * x6 +
             8.0 * (1.0 - x2) * (1.0 - x4) * (1.0 - x6);
    case 5:
      return x1 + x3 + x5 + x7 + x8 + x9 - 2.0;
    case 6:
      return 4.0 * (x1 > 1.0 ? 1.0 : 0.0) * (x3 > 0.0 ? 1.0 : 0.0) +
             4.0 * (x5 > 1.0 ? 1.0 : 0.0) * (x7 > 0.0 ? 1.0 : 0.0) + 2.0 * x8 * x9;
    case 7:
      return 0.5 *
             (x1 * x1 + x2 + x3 * x3 + x4 + x5 * x5 + x6 + x7 * x7 + x8 + x9 * x9 - 11.0);
    case 8:
      return (eval_f(4, x) + eval_f(5, x)) / std::sqrt(2.0);
    default:
      fail("invalid-params", "function id must be in 1..8");
  }
}

Matrix draw_features(std::size_t n, std::size_t p, Rng& rng) {
  Matrix X(n, p);
  for (std::size_t j = 0; j < p; ++j) {
    auto col = X.col(j);
    if ((j + 1) % 2 == 1) {
      for (std::size_t i = 0; i < n; ++i) col[i] = rng.normal();
    } else {
      for (std::size_t i = 0; i < n; ++i) col[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
  }
  return X;
}

double biased_propensity(double mu, double tau) {
  const double a = mu - 0.5 * tau;
  if (a >= 0.0) {
    return 1.0 / (1.0 + std::exp(-a));
  }
  const double e = std::exp(a);
  return e / (1.0 + e);
}

SimDraw generate(const ScenarioSpec& spec, std::uint64_t seed) {
  if (spec.n < 2 || spec.p < 9) fail("invalid-params", "scenario needs n >= 2 and p >= 9");
  Rng rng(seed);
  const auto n = static_cast<std::size_t>(spec.n);
  const auto p = static_cast<std::size_t>(spec.p);

  SimDraw draw;
  draw.dataset.features = draw_features(n, p, rng);
  draw.tau_true.resize(n);
  draw.pi_true.resize(n);

  std::vector<double> mu(n);
  std::vector<double> x;
  for (std::size_t i = 0; i < n; ++i) {
    draw.dataset.features.row(i, x);
    mu[i] = eval_f(spec.mu_fn, x);
    draw.tau_true[i] = eval_f(spec.tau_fn, x);
    draw.pi_true[i] = spec.biased ? biased_propensity(mu[i], draw.tau_true[i]) : 0.5;
  }

  const double sd = std::sqrt(spec.sigma2);
  draw.dataset.treatment.resize(n);
  draw.dataset.response.resize(n);
  for (int attempt = 0;; ++attempt) {
    Rng arm_rng = rng.child(static_cast<std::uint64_t>(attempt));
    std::size_t n1 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      draw.dataset.treatment[i] = arm_rng.bernoulli(draw.pi_true[i]) ? 1 : 0;
      n1 += static_cast<std::size_t>(draw.dataset.treatment[i]);
    }
    if (n1 == 0 || n1 == n) {
      ++draw.redraws;
      continue;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double t = static_cast<double>(draw.dataset.treatment[i]);
      draw.dataset.response[i] = mu[i] + (t - 0.5) * draw.tau_true[i] + sd * arm_rng.normal();
    }
    break;
  }
  return draw;
}

double mse_effect(std::span<const double> est, std::span<const double> truth) {
  if (est.size() != truth.size()) fail("length-mismatch", "estimate and truth lengths differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    const double d = est[i] - truth[i];
    sum += d * d;
  }
  return sum / static_cast<double>(est.size());
}

std::string normalize_method_tag(const std::string& tag) {
  if (tag == "null" || tag == "to" || tag == "db" || tag == "pto" || tag == "cb0" ||
      tag == "cb1" || tag == "cm0" || tag == "cm1" || tag == "bcm0")
    return tag;
  if (tag == "to_forest") return "to";
  if (tag == "db_forest") return "db";
  if (tag == "causal_boost") return "cb0";
  if (tag == "causal_mars") return "cm0";
  if (tag == "bagged_causal_mars") return "bcm0";
  fail("invalid-params", "unknown method tag: " + tag);
}

namespace {

/// Fits one method on a draw and returns its in-sample effect estimates.
std::vector<double> fit_and_estimate(const std::string& tag, const SimDraw& draw,
                                     const BenchConfig& cfg, std::uint64_t draw_seed,
                                     std::uint64_t method_seed, const Matrix& eval_X) {
  const Dataset& d = draw.dataset;
  Rng rng(method_seed);

  auto forest_params = [&](Rng& r) {
    ForestParams fp = cfg.forest;
    fp.seed = r.seed();
    return fp;
  };

  // Known assignment probability for randomized draws; estimated scores
  // otherwise, from a stream shared by every method in the replicate.
  auto scores = [&]() -> std::vector<double> {
    bool randomized = true;
    for (double s : draw.pi_true) {
      if (s != 0.5) {
        randomized = false;
        break;
      }
    }
    if (randomized) return std::vector<double>(d.n(), 0.5);
    Rng prop_rng(detail::mix_seed(draw_seed, fnv1a("propensity")));
    return estimate_propensity(d, forest_params(prop_rng), prop_rng);
  };

  auto strata = [&]() {
    Rng prop_rng(detail::mix_seed(draw_seed, fnv1a("propensity")));
    const std::vector<double> sc = estimate_propensity(d, forest_params(prop_rng), prop_rng);
    return assign_strata(sc, cfg.strata);
  };

  std::unique_ptr<EffectModel> model;
  if (tag == "null") {
    model = std::make_unique<NullModel>(fit_null(d));
  } else if (tag == "to") {
    model = std::make_unique<ToForestModel>(fit_to_forest(d, scores(), forest_params(rng), rng));
  } else if (tag == "db") {
    model = std::make_unique<DbForestModel>(fit_db_forest(d, forest_params(rng), rng));
  } else if (tag == "pto") {
    model = std::make_unique<PtoModel>(fit_pto_forest(d, scores(), forest_params(rng), false, rng));
  } else if (tag == "cb0" || tag == "cb1") {
    const StrataAssignment sa =
        tag == "cb1" ? strata() : StrataAssignment::uniform(d.n());
    // Extreme-propensity draws can leave an arm too small for the requested
    // fold count; downshift, and fall back to a fixed-stage fit when even
    // two folds cannot be formed.
    const int max_folds = static_cast<int>(std::min(d.n_treated(), d.n_control()));
    const int folds = std::min(cfg.cv_folds, max_folds);
    if (folds >= 2) {
      try {
        model = std::make_unique<BoostModel>(
            cross_validate_boost(d, sa, folds, cfg.boost, rng).model);
      } catch (const Error&) {
        model.reset();
      }
    }
    if (!model) {
      model = std::make_unique<BoostModel>(fit_causal_boost(d, sa, cfg.boost, rng));
    }
  } else if (tag == "cm0" || tag == "cm1") {
    if (tag == "cm1") {
      Rng prop_rng(detail::mix_seed(draw_seed, fnv1a("propensity")));
      PropensityModel prop = fit_propensity(d, forest_params(prop_rng), prop_rng);
      const StrataAssignment sa = assign_strata(prop.oob_scores, cfg.strata);
      MarsModel m = fit_causal_mars(d, cfg.mars, &sa, rng);
      // Keep the score model so new points can be routed to a stratum.
      m.propensity_model = std::make_shared<RegressionForest>(std::move(prop.forest));
      model = std::make_unique<MarsModel>(std::move(m));
    } else {
      model = std::make_unique<MarsModel>(fit_causal_mars(d, cfg.mars, nullptr, rng));
    }
  } else if (tag == "bcm0") {
    model = std::make_unique<BaggedMars>(
        fit_bagged_causal_mars(d, cfg.mars, cfg.mars_bags, nullptr, rng));
  } else {
    fail("invalid-params", "unknown method tag: " + tag);
  }

  return model->predict(eval_X).tau_hat;
}

}  // namespace

std::vector<BenchResult> run_benchmark(std::span<const int> scenario_ids,
                                       std::span<const std::string> methods, int reps,
                                       std::uint64_t base_seed, const BenchConfig& cfg) {
  if (reps < 1) fail("invalid-params", "reps must be >= 1");
  std::vector<std::string> tags;
  tags.reserve(methods.size());
  for (const auto& m : methods) tags.push_back(normalize_method_tag(m));
  for (int id : scenario_ids) scenario(id);  // validate ids up front

  struct Cell {
    int scenario;
    int rep;
    std::size_t method;
  };
  std::vector<Cell> cells;
  for (int id : scenario_ids) {
    for (int r = 0; r < reps; ++r) {
      for (std::size_t m = 0; m < tags.size(); ++m) cells.push_back({id, r, m});
    }
  }

  std::vector<BenchResult> results(cells.size());
  parallel_for(cells.size(), [&](std::size_t c) {
    const Cell& cell = cells[c];
    const ScenarioSpec& spec = scenario(cell.scenario);
    const std::string& tag = tags[cell.method];
    const std::uint64_t draw_seed = detail::mix_seed(
        detail::mix_seed(base_seed, static_cast<std::uint64_t>(cell.scenario)),
        static_cast<std::uint64_t>(cell.rep));
    const std::uint64_t method_seed = detail::mix_seed(draw_seed, fnv1a(tag));

    BenchResult res;
    res.scenario = cell.scenario;
    res.method = tag;
    res.rep = cell.rep;
    res.seed = method_seed;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SimDraw draw = generate(spec, draw_seed);
      const SimDraw* eval_draw = &draw;
      SimDraw holdout;
      if (cfg.holdout) {
        holdout = generate(spec, detail::mix_seed(draw_seed, fnv1a("holdout")));
        eval_draw = &holdout;
      }
      const std::vector<double> est = fit_and_estimate(
          tag, draw, cfg, draw_seed, method_seed, eval_draw->dataset.features);
      res.mse = mse_effect(est, eval_draw->tau_true);
    } catch (const std::exception& e) {
      res.failed = true;
      res.error = e.what();
    }
    res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
    results[c] = res;
  });
  return results;
}

void write_bench_csv(std::ostream& os, std::span<const BenchResult> results) {
  os << "scenario,method,rep,seed,mse,wall_ms\n";
  for (const auto& r : results) {
    os << r.scenario << ',' << r.method << ',' << r.rep << ',' << r.seed << ',';
    if (r.failed) {
      os << "NA";
    } else {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", r.mse);
      os << buf;
    }
    os << ',' << static_cast<long long>(r.wall_ms) << '\n';
  }
}

void write_bench_summary_json(std::ostream& os, std::span<const BenchResult> results) {
  std::map<int, std::map<std::string, std::vector<double>>> grouped;
  std::map<int, std::map<std::string, int>> failures;
  for (const auto& r : results) {
    if (r.failed) {
      failures[r.scenario][r.method] += 1;
    } else {
      grouped[r.scenario][r.method].push_back(r.mse);
    }
    failures[r.scenario][r.method] += 0;
  }
  os << "{\n  \"scenarios\": {\n";
  bool first_s = true;
  for (auto& [sid, per_method] : grouped) {
    if (!first_s) os << ",\n";
    first_s = false;
    os << "    \"" << sid << "\": {";
    bool first_m = true;
    for (auto& [tag, mses] : per_method) {
      if (!first_m) os << ", ";
      first_m = false;
      std::sort(mses.begin(), mses.end());
      char buf[160];
      std::snprintf(buf, sizeof(buf),
                    "\"%s\": {\"median\": %.10g, \"q25\": %.10g, \"q75\": %.10g, "
                    "\"reps\": %zu, \"failed\": %d}",
                    tag.c_str(), quantile_sorted(mses, 0.5), quantile_sorted(mses, 0.25),
                    quantile_sorted(mses, 0.75), mses.size(), failures[sid][tag]);
      os << buf;
    }
    os << "}";
  }
  os << "\n  }\n}\n";
}

std::map<std::string, std::vector<BiasStudyRow>> bias_study(const ScenarioSpec& spec,
                                                            std::span<const std::string> methods,
                                                            int reps, std::uint64_t seed,
                                                            const BenchConfig& cfg) {
  if (reps < 2) fail("invalid-params", "reps must be >= 2");
  std::vector<std::string> tags;
  for (const auto& m : methods) tags.push_back(normalize_method_tag(m));

  // Fixed covariates, shared by every redraw.
  Rng x_rng(detail::mix_seed(seed, fnv1a("features")));
  const auto n = static_cast<std::size_t>(spec.n);
  Matrix X = draw_features(n, static_cast<std::size_t>(spec.p), x_rng);

  std::vector<double> mu(n), tau(n), pi(n);
  std::vector<double> xrow;
  for (std::size_t i = 0; i < n; ++i) {
    X.row(i, xrow);
    mu[i] = eval_f(spec.mu_fn, xrow);
    tau[i] = eval_f(spec.tau_fn, xrow);
    pi[i] = spec.biased ? biased_propensity(mu[i], tau[i]) : 0.5;
  }
  const double sd = std::sqrt(spec.sigma2);

  struct CellOut {
    std::vector<double> est;
  };
  std::vector<CellOut> outs(static_cast<std::size_t>(reps) * tags.size());

  parallel_for(outs.size(), [&](std::size_t c) {
    const int rep = static_cast<int>(c / tags.size());
    const std::string& tag = tags[c % tags.size()];
    const std::uint64_t rep_seed =
        detail::mix_seed(detail::mix_seed(seed, fnv1a("redraw")), static_cast<std::uint64_t>(rep));

    SimDraw draw;
    draw.dataset.features = X;
    draw.tau_true = tau;
    draw.pi_true = pi;
    draw.dataset.treatment.resize(n);
    draw.dataset.response.resize(n);
    for (int attempt = 0;; ++attempt) {
      Rng arm_rng = Rng(rep_seed).child(static_cast<std::uint64_t>(attempt));
      std::size_t n1 = 0;
      for (std::size_t i = 0; i < n; ++i) {
        draw.dataset.treatment[i] = arm_rng.bernoulli(pi[i]) ? 1 : 0;
        n1 += static_cast<std::size_t>(draw.dataset.treatment[i]);
      }
      if (n1 == 0 || n1 == n) continue;
      for (std::size_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(draw.dataset.treatment[i]);
        draw.dataset.response[i] = mu[i] + (t - 0.5) * tau[i] + sd * arm_rng.normal();
      }
      break;
    }

    const std::uint64_t method_seed = detail::mix_seed(rep_seed, fnv1a(tag));
    outs[c].est = fit_and_estimate(tag, draw, cfg, rep_seed, method_seed, X);
  });

  std::map<std::string, std::vector<BiasStudyRow>> report;
  for (std::size_t m = 0; m < tags.size(); ++m) {
    std::vector<double> mean(n, 0.0);
    for (int r = 0; r < reps; ++r) {
      const auto& est = outs[static_cast<std::size_t>(r) * tags.size() + m].est;
      for (std::size_t i = 0; i < n; ++i) mean[i] += est[i];
    }
    std::vector<BiasStudyRow> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
      rows[i] = BiasStudyRow{static_cast<int>(i), tau[i], mean[i] / static_cast<double>(reps)};
    }
    report[tags[m]] = std::move(rows);
  }
  return report;
}

std::vector<BinnedRow> binned_effect_report(std::span<const double> estimates,
                                            std::span<const double> feature, int n_bins) {
  if (estimates.size() != feature.size())
    fail("length-mismatch", "estimates and feature lengths differ");
  if (n_bins < 1) fail("invalid-params", "n_bins must be >= 1");
  const std::size_t n = estimates.size();
  if (n == 0) fail("length-mismatch", "empty input");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return feature[a] < feature[b]; });

  const std::size_t bins = std::min<std::size_t>(static_cast<std::size_t>(n_bins), n);
  std::vector<BinnedRow> rows;
  std::size_t start = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t count = n / bins + (b < n % bins ? 1 : 0);
    const std::size_t end = start + count;
    double mean = 0.0;
    for (std::size_t k = start; k < end; ++k) mean += estimates[order[k]];
    mean /= static_cast<double>(count);
    double q = 0.0;
    for (std::size_t k = start; k < end; ++k) {
      const double d = estimates[order[k]] - mean;
      q += d * d;
    }
    const double se =
        count > 1 ? std::sqrt(q / static_cast<double>(count - 1) / static_cast<double>(count))
                  : 0.0;
    rows.push_back(BinnedRow{static_cast<int>(b) + 1, feature[order[start]],
                             feature[order[end - 1]], mean, se, static_cast<int>(count)});
    start = end;
  }
  return rows;
}

Tree summarize_with_tree(const Matrix& X, std::span<const double> tau_hat, int max_depth) {
  ForestParams params;
  params.max_depth = max_depth;
  params.min_leaf = 5;
  params.mtry = static_cast<int>(X.cols());  // deterministic: no feature sampling
  params.bootstrap = false;
  Rng rng(0);
  return fit_regression_tree(X, tau_hat, params, rng);
}

}  // namespace hte
