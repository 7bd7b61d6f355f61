#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hte/csv.hpp"
#include "hte/model_io.hpp"
#include "hte/run_config.hpp"
#include "hte/simbench.hpp"
#include "hte/threading.hpp"

namespace {

using namespace hte;

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) fail("io-error", "cannot write " + path);
  return out;
}

/// "1-4,9,12" -> {1,2,3,4,9,12}
std::vector<int> parse_scenarios(const std::string& text) {
  std::vector<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const std::size_t dash = item.find('-');
    if (dash == std::string::npos) {
      ids.push_back(std::stoi(item));
    } else {
      const int lo = std::stoi(item.substr(0, dash));
      const int hi = std::stoi(item.substr(dash + 1));
      for (int k = lo; k <= hi; ++k) ids.push_back(k);
    }
  }
  if (ids.empty()) fail("invalid-params", "no scenarios given");
  return ids;
}

std::vector<std::string> parse_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Matrix features_for_model(const LoadedModel& model, const std::string& path) {
  std::vector<std::string> names;
  Matrix X = load_feature_csv(path, names);
  if (!model.feature_names.empty()) {
    // Reorder by the training feature names when they are all present.
    bool all = true;
    std::vector<std::size_t> pick;
    for (const auto& want : model.feature_names) {
      bool found = false;
      for (std::size_t c = 0; c < names.size(); ++c) {
        if (names[c] == want) {
          pick.push_back(c);
          found = true;
          break;
        }
      }
      if (!found) {
        all = false;
        break;
      }
    }
    if (all) {
      Matrix sel(X.rows(), pick.size());
      for (std::size_t f = 0; f < pick.size(); ++f) {
        for (std::size_t i = 0; i < X.rows(); ++i) sel(i, f) = X(i, pick[f]);
      }
      return sel;
    }
  }
  if (X.cols() != model.n_features) {
    fail("dimension-mismatch", "model expects " + std::to_string(model.n_features) +
                                   " features, data has " + std::to_string(X.cols()));
  }
  return X;
}

void print_tree(std::ostream& os, const std::vector<TreeNode>& nodes, int id,
                const std::vector<std::string>& names, const std::string& indent) {
  const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
  if (nd.feature < 0) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", nd.value);
    os << indent << "leaf: " << buf << '\n';
    return;
  }
  const std::string fname = static_cast<std::size_t>(nd.feature) < names.size()
                                ? names[static_cast<std::size_t>(nd.feature)]
                                : "x" + std::to_string(nd.feature + 1);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", nd.threshold);
  os << indent << fname << " < " << buf << '\n';
  print_tree(os, nodes, nd.left, names, indent + "| ");
  os << indent << fname << " >= " << buf << '\n';
  print_tree(os, nodes, nd.right, names, indent + "| ");
}

int run(int argc, char** argv) {
  CLI::App app{"Heterogeneous treatment effect estimators and benchmark"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "worker thread cap (default: HTE_LAB_THREADS or cores)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "draw a synthetic scenario dataset");
  int sim_scenario = 1;
  std::uint64_t sim_seed = 0;
  std::string sim_out, sim_truth;
  sim->add_option("--scenario", sim_scenario, "scenario id 1..16")->required();
  sim->add_option("--seed", sim_seed, "rng seed");
  sim->add_option("--out", sim_out, "output data CSV")->required();
  sim->add_option("--truth", sim_truth, "output per-unit tau/pi CSV");

  // fit
  auto* fit = app.add_subcommand("fit", "fit a model per a JSON config");
  std::string fit_config, fit_data, fit_out;
  fit->add_option("--config", fit_config, "JSON config")->required();
  fit->add_option("--data", fit_data, "training CSV")->required();
  fit->add_option("--out", fit_out, "output model JSON")->required();

  // cv
  auto* cv = app.add_subcommand("cv", "cross-validated stage selection for causal boosting");
  std::string cv_config, cv_data, cv_out, cv_report;
  int cv_folds = 0;
  cv->add_option("--config", cv_config, "JSON config (method causal_boost)")->required();
  cv->add_option("--data", cv_data, "training CSV")->required();
  cv->add_option("--folds", cv_folds, "fold count (default: config cv_folds)");
  cv->add_option("--out", cv_out, "save the refit model JSON");
  cv->add_option("--report", cv_report, "save per-stage validation errors CSV");

  // predict
  auto* pred = app.add_subcommand("predict", "per-unit effect predictions");
  std::string pred_model, pred_data, pred_out;
  pred->add_option("--model", pred_model, "model JSON")->required();
  pred->add_option("--data", pred_data, "feature CSV")->required();
  pred->add_option("--out", pred_out, "output effects CSV")->required();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "scenario sweep with per-replicate effect MSE");
  std::string bench_scenarios = "1-16", bench_methods = "null,pto,cb0,bcm0";
  int bench_reps = 20;
  std::uint64_t bench_seed = 0;
  std::string bench_out, bench_summary;
  bool bench_holdout = false;
  BenchConfig bench_cfg;
  bench->add_option("--scenarios", bench_scenarios, "ids, e.g. 1-8 or 1,3,9");
  bench->add_option("--methods", bench_methods,
                    "tags: null,to,db,pto,cb0,cb1,cm0,cm1,bcm0 (or long aliases)");
  bench->add_option("--reps", bench_reps, "replicates per scenario");
  bench->add_option("--seed", bench_seed, "base seed");
  bench->add_option("--out", bench_out, "results CSV")->required();
  bench->add_option("--summary", bench_summary, "summary JSON (default: <out>.summary.json)");
  bench->add_flag("--holdout", bench_holdout, "evaluate on a fresh draw instead of in-sample");
  bench->add_option("--forest-trees", bench_cfg.forest.n_trees, "forest size");
  bench->add_option("--boost-k", bench_cfg.boost.n_trees, "max boosting stages");
  bench->add_option("--boost-eps", bench_cfg.boost.epsilon, "boosting shrinkage");
  bench->add_option("--cv-folds", bench_cfg.cv_folds, "boosting CV folds");
  bench->add_option("--mars-bags", bench_cfg.mars_bags, "bagged MARS members");
  bench->add_option("--mars-knots", bench_cfg.mars.knots_per_feature, "knots per feature");
  bench->add_option("--strata", bench_cfg.strata, "propensity strata for adjusted methods");

  // report
  auto* rep = app.add_subcommand("report", "summaries of per-unit effect estimates");
  std::string rep_estimates, rep_data, rep_feature, rep_out;
  int rep_bins = 10, rep_depth = 3;
  bool rep_tree = false;
  rep->add_option("--estimates", rep_estimates, "effects CSV from predict")->required();
  rep->add_option("--data", rep_data, "feature CSV")->required();
  rep->add_option("--feature", rep_feature, "feature name for the binned report");
  rep->add_option("--bins", rep_bins, "bin count");
  rep->add_flag("--summarize-tree", rep_tree, "print a shallow decision-tree summary");
  rep->add_option("--max-depth", rep_depth, "tree depth for --summarize-tree");
  rep->add_option("--out", rep_out, "output path (default stdout)");

  CLI11_PARSE(app, argc, argv);
  if (threads > 0) set_max_threads(static_cast<std::size_t>(threads));

  if (*sim) {
    const SimDraw draw = generate(scenario(sim_scenario), sim_seed);
    auto out = open_out(sim_out);
    write_dataset_csv(out, draw.dataset);
    if (!sim_truth.empty()) {
      auto tout = open_out(sim_truth);
      write_truth_csv(tout, draw.tau_true, draw.pi_true);
    }
    return 0;
  }

  if (*fit) {
    const RunConfig cfg = RunConfig::from_file(fit_config);
    const Dataset d = load_csv(fit_data);
    const FittedModel fm = fit_with_config(d, cfg);
    save_model(fit_out, *fm.model, cfg, d.p(), d.feature_names);
    std::cout << "fit " << cfg.method << " on n=" << d.n() << " p=" << d.p() << "\n";
    return 0;
  }

  if (*cv) {
    RunConfig cfg = RunConfig::from_file(cv_config);
    if (cfg.method != "causal_boost")
      fail("invalid-params", "cv requires method causal_boost");
    if (cv_folds > 0) cfg.cv_folds = cv_folds;
    const Dataset d = load_csv(cv_data);
    Rng rng(cfg.seed);
    StrataAssignment sa = StrataAssignment::uniform(d.n());
    std::shared_ptr<RegressionForest> prop;
    if (cfg.adjustment == "stratified") {
      ForestParams fp = cfg.forest;
      fp.seed = cfg.seed;
      Rng prop_rng = rng.child(0x5C03Eull);
      PropensityModel pm = fit_propensity(d, fp, prop_rng);
      sa = assign_strata(pm.oob_scores, cfg.strata);
      prop = std::make_shared<RegressionForest>(std::move(pm.forest));
    }
    BoostCvResult res = cross_validate_boost(d, sa, cfg.cv_folds, cfg.boost, rng);
    res.model.propensity_model = prop;
    std::cout << "k,validation_error\n";
    for (std::size_t k = 0; k < res.report.per_k_error.size(); ++k) {
      std::printf("%zu,%.10g\n", k + 1, res.report.per_k_error[k]);
    }
    std::cout << "k_star," << res.report.k_star << "\n";
    if (!cv_report.empty()) {
      auto out = open_out(cv_report);
      out << "k,validation_error\n";
      for (std::size_t k = 0; k < res.report.per_k_error.size(); ++k) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", k + 1, res.report.per_k_error[k]);
        out << buf;
      }
    }
    if (!cv_out.empty()) save_model(cv_out, res.model, cfg, d.p(), d.feature_names);
    return 0;
  }

  if (*pred) {
    const LoadedModel lm = load_model(pred_model);
    const Matrix X = features_for_model(lm, pred_data);
    const EffectEstimates est = lm.model->predict(X);
    auto out = open_out(pred_out);
    write_effects_csv(out, est);
    return 0;
  }

  if (*bench) {
    bench_cfg.holdout = bench_holdout;
    const std::vector<int> ids = parse_scenarios(bench_scenarios);
    const std::vector<std::string> methods = parse_list(bench_methods);
    const std::vector<BenchResult> results =
        run_benchmark(ids, methods, bench_reps, bench_seed, bench_cfg);
    auto out = open_out(bench_out);
    write_bench_csv(out, results);
    const std::string summary_path =
        bench_summary.empty() ? bench_out + ".summary.json" : bench_summary;
    auto sout = open_out(summary_path);
    write_bench_summary_json(sout, results);
    int failed = 0;
    for (const auto& r : results) failed += r.failed ? 1 : 0;
    std::cout << "cells: " << results.size() << ", failed: " << failed << "\n";
    return 0;
  }

  if (*rep) {
    const EffectEstimates est = load_effects_csv(rep_estimates);
    std::vector<std::string> names;
    const Matrix X = load_feature_csv(rep_data, names);
    if (X.rows() != est.tau_hat.size())
      fail("length-mismatch", "estimates and data row counts differ");

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!rep_out.empty()) {
      file = open_out(rep_out);
      os = &file;
    }

    if (rep_tree) {
      const Tree t = summarize_with_tree(X, est.tau_hat, rep_depth);
      print_tree(*os, t.nodes, 0, names, "");
      return 0;
    }
    if (rep_feature.empty()) fail("invalid-params", "--feature or --summarize-tree required");
    std::size_t col = names.size();
    for (std::size_t c = 0; c < names.size(); ++c) {
      if (names[c] == rep_feature) col = c;
    }
    if (col == names.size()) fail("missing-column", "feature '" + rep_feature + "' not found");
    const auto rows = binned_effect_report(est.tau_hat, X.col(col), rep_bins);
    *os << "bin,lo,hi,mean,se,count\n";
    for (const auto& r : rows) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g,%d\n", r.bin, r.lo, r.hi,
                    r.mean, r.se, r.count);
      *os << buf;
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hte::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
