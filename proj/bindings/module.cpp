#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <optional>

#include "hte/baselines.hpp"
#include "hte/causal_boost.hpp"
#include "hte/causal_mars.hpp"
#include "hte/causal_tree.hpp"
#include "hte/model_io.hpp"
#include "hte/propensity.hpp"
#include "hte/pto_forest.hpp"
#include "hte/run_config.hpp"
#include "hte/simbench.hpp"
#include "hte/threading.hpp"
#include "hte/types.hpp"

namespace py = pybind11;
using namespace hte;

namespace {

Matrix matrix_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  Matrix X(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  const auto r = a.unchecked<2>();
  for (py::ssize_t i = 0; i < a.shape(0); ++i) {
    for (py::ssize_t j = 0; j < a.shape(1); ++j) {
      X(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = r(i, j);
    }
  }
  return X;
}

py::array_t<double> numpy_from_matrix(const Matrix& X) {
  py::array_t<double> a({X.rows(), X.cols()});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < X.rows(); ++i) {
    for (std::size_t j = 0; j < X.cols(); ++j) {
      w(static_cast<py::ssize_t>(i), static_cast<py::ssize_t>(j)) = X(i, j);
    }
  }
  return a;
}

py::array_t<double> numpy_from_vector(const std::vector<double>& v) {
  py::array_t<double> a(static_cast<py::ssize_t>(v.size()));
  auto w = a.mutable_unchecked<1>();
  for (std::size_t i = 0; i < v.size(); ++i) w(static_cast<py::ssize_t>(i)) = v[i];
  return a;
}

Dataset dataset_from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& X,
                           const std::vector<int>& treatment,
                           const std::vector<double>& response,
                           const std::vector<std::string>& feature_names) {
  Dataset d;
  d.features = matrix_from_numpy(X);
  d.treatment = treatment;
  d.response = response;
  d.feature_names = feature_names;
  validate_dataset(d);
  return d;
}

py::dict predict_dict(const EffectModel& m, const py::array_t<double>& X) {
  const EffectEstimates est = m.predict(matrix_from_numpy(X));
  py::dict out;
  out["tau_hat"] = numpy_from_vector(est.tau_hat);
  if (!est.mu1_hat.empty()) {
    out["mu1_hat"] = numpy_from_vector(est.mu1_hat);
    out["mu0_hat"] = numpy_from_vector(est.mu0_hat);
  }
  return out;
}

StrataAssignment strata_or_uniform(const std::optional<StrataAssignment>& sa, std::size_t n) {
  return sa.has_value() ? *sa : StrataAssignment::uniform(n);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Heterogeneous treatment effect estimators: pollinated "
            "transformed-outcome forests, causal boosting, causal MARS, "
            "propensity machinery and a simulation benchmark";

  py::register_exception<Error>(m, "HteError");

  m.def("set_max_threads", &set_max_threads, py::arg("n"));

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&dataset_from_numpy), py::arg("features"), py::arg("treatment"),
           py::arg("response"), py::arg("feature_names") = std::vector<std::string>{})
      .def_property_readonly("n", &Dataset::n)
      .def_property_readonly("p", &Dataset::p)
      .def_property_readonly("n_treated", &Dataset::n_treated)
      .def_property_readonly("n_control", &Dataset::n_control)
      .def_property_readonly("features", [](const Dataset& d) { return numpy_from_matrix(d.features); })
      .def_readonly("treatment", &Dataset::treatment)
      .def_readonly("response", &Dataset::response)
      .def_readonly("feature_names", &Dataset::feature_names);

  py::class_<ForestParams>(m, "ForestParams")
      .def(py::init<>())
      .def_readwrite("n_trees", &ForestParams::n_trees)
      .def_readwrite("max_depth", &ForestParams::max_depth)
      .def_readwrite("min_leaf", &ForestParams::min_leaf)
      .def_readwrite("mtry", &ForestParams::mtry)
      .def_readwrite("bootstrap", &ForestParams::bootstrap)
      .def_readwrite("seed", &ForestParams::seed);

  py::class_<CausalTreeParams>(m, "CausalTreeParams")
      .def(py::init<>())
      .def_readwrite("max_depth", &CausalTreeParams::max_depth)
      .def_readwrite("min_leaf_per_arm", &CausalTreeParams::min_leaf_per_arm)
      .def_readwrite("mtry", &CausalTreeParams::mtry)
      .def_readwrite("min_split_gain", &CausalTreeParams::min_split_gain);

  py::class_<BoostParams>(m, "BoostParams")
      .def(py::init<>())
      .def_readwrite("n_trees", &BoostParams::n_trees)
      .def_readwrite("epsilon", &BoostParams::epsilon)
      .def_readwrite("tree", &BoostParams::tree)
      .def_readwrite("subsample", &BoostParams::subsample);

  py::class_<MarsParams>(m, "MarsParams")
      .def(py::init<>())
      .def_readwrite("forward_pairs", &MarsParams::forward_pairs)
      .def_readwrite("knots_per_feature", &MarsParams::knots_per_feature)
      .def_readwrite("max_degree", &MarsParams::max_degree)
      .def_readwrite("backward_deletion", &MarsParams::backward_deletion)
      .def_readwrite("size_select_bags", &MarsParams::size_select_bags)
      .def_readwrite("min_span", &MarsParams::min_span);

  py::class_<StrataAssignment>(m, "StrataAssignment")
      .def_readonly("scores", &StrataAssignment::scores)
      .def_readonly("strata", &StrataAssignment::strata)
      .def_readonly("S", &StrataAssignment::S)
      .def_readonly("boundaries", &StrataAssignment::boundaries)
      .def_static("uniform", &StrataAssignment::uniform, py::arg("n"));

  py::class_<AteReport>(m, "AteReport")
      .def_readonly("estimate", &AteReport::estimate)
      .def_readonly("variance_estimate", &AteReport::variance_estimate)
      .def_property_readonly("method", [](const AteReport& r) { return to_string(r.method); });

  // Models share the EffectModel surface.
  py::class_<EffectModel, std::shared_ptr<EffectModel>>(m, "EffectModel")
      .def("predict_means",
           [](const EffectModel& em, const std::vector<double>& x) { return em.predict_means(x); })
      .def("predict_effect",
           [](const EffectModel& em, const std::vector<double>& x) { return em.predict_effect(x); })
      .def("predict", &predict_dict, py::arg("X"))
      .def("has_pair", &EffectModel::has_pair);

  py::class_<NullModel, EffectModel, std::shared_ptr<NullModel>>(m, "NullModel")
      .def_readonly("mu1", &NullModel::mu1)
      .def_readonly("mu0", &NullModel::mu0)
      .def_property_readonly("effect", &NullModel::effect);
  py::class_<ToForestModel, EffectModel, std::shared_ptr<ToForestModel>>(m, "ToForestModel");
  py::class_<DbForestModel, EffectModel, std::shared_ptr<DbForestModel>>(m, "DbForestModel");
  py::class_<PtoModel, EffectModel, std::shared_ptr<PtoModel>>(m, "PtoModel")
      .def("predict_raw",
           [](const PtoModel& pm, const std::vector<double>& x) { return pm.predict_raw(x); });
  py::class_<BoostModel, EffectModel, std::shared_ptr<BoostModel>>(m, "BoostModel")
      .def_property_readonly("n_stages", &BoostModel::n_stages)
      .def_readonly("epsilon", &BoostModel::epsilon)
      .def("predict_at", [](const BoostModel& bm, const std::vector<double>& x,
                            int k) { return bm.predict_at(x, k); });
  py::class_<MarsModel, EffectModel, std::shared_ptr<MarsModel>>(m, "MarsModel")
      .def_property_readonly("n_basis", [](const MarsModel& mm) { return mm.basis.size(); })
      .def("predict_means_in_stratum",
           [](const MarsModel& mm, const std::vector<double>& x, int s) {
             return mm.predict_means_in_stratum(x, s);
           });
  py::class_<BaggedMars, EffectModel, std::shared_ptr<BaggedMars>>(m, "BaggedMars")
      .def_property_readonly("n_members", [](const BaggedMars& bm) { return bm.models.size(); });

  // Propensity machinery.
  m.def("assign_strata",
        [](const std::vector<double>& scores, int S) { return assign_strata(scores, S); },
        py::arg("scores"), py::arg("S"));
  m.def("estimate_propensity",
        [](const Dataset& d, const ForestParams& p) {
          return numpy_from_vector(estimate_propensity(d, p));
        },
        py::arg("dataset"), py::arg("params") = ForestParams{});
  m.def("transformed_outcome",
        [](const Dataset& d, const std::vector<double>& scores) {
          return numpy_from_vector(transformed_outcome(d, scores));
        },
        py::arg("dataset"), py::arg("scores"));
  m.def("ate_cm", &ate_cm, py::arg("dataset"));
  m.def("ate_to", [](const Dataset& d, const std::vector<double>& s) { return ate_to(d, s); },
        py::arg("dataset"), py::arg("scores"));
  m.def("ate_ipw", [](const Dataset& d, const std::vector<double>& s) { return ate_ipw(d, s); },
        py::arg("dataset"), py::arg("scores"));
  m.def("ate_stratified", &ate_stratified, py::arg("dataset"), py::arg("strata"));
  m.def("ate_variance_study",
        [](const std::vector<int>& ns, const std::vector<double>& ratios, double sigma, int reps,
           std::uint64_t seed) {
          py::list rows;
          for (const auto& r : ate_variance_study(ns, ratios, sigma, reps, seed)) {
            py::dict d;
            d["n"] = r.n;
            d["ratio"] = r.ratio;
            d["var_to"] = r.var_to;
            d["var_cm"] = r.var_cm;
            d["reps"] = r.reps;
            rows.append(d);
          }
          return rows;
        },
        py::arg("n_values"), py::arg("ratio_grid"), py::arg("sigma"), py::arg("reps"),
        py::arg("seed"));

  // Estimators.
  m.def("fit_null", [](const Dataset& d) { return std::make_shared<NullModel>(fit_null(d)); },
        py::arg("dataset"));
  m.def("fit_to_forest",
        [](const Dataset& d, const std::vector<double>& scores, const ForestParams& p) {
          Rng rng(p.seed);
          return std::make_shared<ToForestModel>(fit_to_forest(d, scores, p, rng));
        },
        py::arg("dataset"), py::arg("scores"), py::arg("params") = ForestParams{});
  m.def("fit_db_forest",
        [](const Dataset& d, const ForestParams& p) {
          Rng rng(p.seed);
          return std::make_shared<DbForestModel>(fit_db_forest(d, p, rng));
        },
        py::arg("dataset"), py::arg("params") = ForestParams{});
  m.def("fit_pto_forest",
        [](const Dataset& d, const std::vector<double>& scores, const ForestParams& p,
           bool smooth) { return std::make_shared<PtoModel>(fit_pto_forest(d, scores, p, smooth)); },
        py::arg("dataset"), py::arg("scores"), py::arg("params") = ForestParams{},
        py::arg("smooth") = false);
  m.def("fit_causal_boost",
        [](const Dataset& d, const std::optional<StrataAssignment>& sa, const BoostParams& p,
           std::uint64_t seed) {
          Rng rng(seed);
          return std::make_shared<BoostModel>(
              fit_causal_boost(d, strata_or_uniform(sa, d.n()), p, rng));
        },
        py::arg("dataset"), py::arg("strata") = std::nullopt, py::arg("params") = BoostParams{},
        py::arg("seed") = 0);
  m.def("cross_validate_boost",
        [](const Dataset& d, const std::optional<StrataAssignment>& sa, int folds,
           const BoostParams& p, std::uint64_t seed) {
          Rng rng(seed);
          BoostCvResult res =
              cross_validate_boost(d, strata_or_uniform(sa, d.n()), folds, p, rng);
          py::dict out;
          out["per_k_error"] = numpy_from_vector(res.report.per_k_error);
          out["k_star"] = res.report.k_star;
          out["model"] = std::make_shared<BoostModel>(std::move(res.model));
          return out;
        },
        py::arg("dataset"), py::arg("strata") = std::nullopt, py::arg("folds") = 5,
        py::arg("params") = BoostParams{}, py::arg("seed") = 0);
  m.def("validate_boost",
        [](const BoostModel& bm, const Dataset& v, const std::optional<StrataAssignment>& sa) {
          const BoostCvReport rep = validate_boost(bm, v, strata_or_uniform(sa, v.n()));
          py::dict out;
          out["per_k_error"] = numpy_from_vector(rep.per_k_error);
          out["k_star"] = rep.k_star;
          return out;
        },
        py::arg("model"), py::arg("validation"), py::arg("strata") = std::nullopt);
  m.def("fit_causal_mars",
        [](const Dataset& d, const MarsParams& p, const std::optional<StrataAssignment>& sa,
           std::uint64_t seed) {
          Rng rng(seed);
          return std::make_shared<MarsModel>(
              fit_causal_mars(d, p, sa.has_value() ? &*sa : nullptr, rng));
        },
        py::arg("dataset"), py::arg("params") = MarsParams{}, py::arg("strata") = std::nullopt,
        py::arg("seed") = 0);
  m.def("fit_bagged_causal_mars",
        [](const Dataset& d, const MarsParams& p, int bags,
           const std::optional<StrataAssignment>& sa, std::uint64_t seed) {
          Rng rng(seed);
          return std::make_shared<BaggedMars>(
              fit_bagged_causal_mars(d, p, bags, sa.has_value() ? &*sa : nullptr, rng));
        },
        py::arg("dataset"), py::arg("params") = MarsParams{}, py::arg("bags") = 50,
        py::arg("strata") = std::nullopt, py::arg("seed") = 0);

  // Config-driven fitting and persistence.
  m.def("fit_config",
        [](const Dataset& d, const std::string& config_json) {
          const RunConfig cfg = RunConfig::from_json_text(config_json);
          FittedModel fm = fit_with_config(d, cfg);
          return std::shared_ptr<EffectModel>(std::move(fm.model));
        },
        py::arg("dataset"), py::arg("config_json"));
  m.def("save_model",
        [](const std::string& path, const EffectModel& em, const std::string& config_json,
           std::size_t n_features, const std::vector<std::string>& names) {
          save_model(path, em, RunConfig::from_json_text(config_json), n_features, names);
        },
        py::arg("path"), py::arg("model"), py::arg("config_json"), py::arg("n_features"),
        py::arg("feature_names") = std::vector<std::string>{});
  m.def("load_model",
        [](const std::string& path) {
          LoadedModel lm = load_model(path);
          py::dict out;
          out["method"] = lm.method;
          out["seed"] = lm.seed;
          out["n_features"] = lm.n_features;
          out["feature_names"] = lm.feature_names;
          out["model"] = std::shared_ptr<EffectModel>(std::move(lm.model));
          return out;
        },
        py::arg("path"));

  // Simulation benchmark.
  py::class_<ScenarioSpec>(m, "ScenarioSpec")
      .def(py::init<>())
      .def_readwrite("id", &ScenarioSpec::id)
      .def_readwrite("n", &ScenarioSpec::n)
      .def_readwrite("p", &ScenarioSpec::p)
      .def_readwrite("mu_fn", &ScenarioSpec::mu_fn)
      .def_readwrite("tau_fn", &ScenarioSpec::tau_fn)
      .def_readwrite("sigma2", &ScenarioSpec::sigma2)
      .def_readwrite("biased", &ScenarioSpec::biased);

  m.def("scenario", [](int id) { return scenario(id); }, py::arg("id"));
  m.def("eval_f", [](int k, const std::vector<double>& x) { return eval_f(k, x); }, py::arg("k"),
        py::arg("x"));
  m.def("draw_features",
        [](std::size_t n, std::size_t p, std::uint64_t seed) {
          Rng rng(seed);
          return numpy_from_matrix(draw_features(n, p, rng));
        },
        py::arg("n"), py::arg("p"), py::arg("seed") = 0);
  m.def("biased_propensity", &biased_propensity, py::arg("mu"), py::arg("tau"));
  m.def("generate",
        [](const ScenarioSpec& spec, std::uint64_t seed) {
          SimDraw draw = generate(spec, seed);
          py::dict out;
          out["dataset"] = std::move(draw.dataset);
          out["tau_true"] = numpy_from_vector(draw.tau_true);
          out["pi_true"] = numpy_from_vector(draw.pi_true);
          out["redraws"] = draw.redraws;
          return out;
        },
        py::arg("spec"), py::arg("seed") = 0);
  m.def("mse_effect",
        [](const std::vector<double>& est, const std::vector<double>& truth) {
          return mse_effect(est, truth);
        },
        py::arg("estimate"), py::arg("truth"));

  py::class_<BenchConfig>(m, "BenchConfig")
      .def(py::init<>())
      .def_readwrite("forest", &BenchConfig::forest)
      .def_readwrite("boost", &BenchConfig::boost)
      .def_readwrite("cv_folds", &BenchConfig::cv_folds)
      .def_readwrite("mars", &BenchConfig::mars)
      .def_readwrite("mars_bags", &BenchConfig::mars_bags)
      .def_readwrite("strata", &BenchConfig::strata)
      .def_readwrite("holdout", &BenchConfig::holdout);

  m.def("run_benchmark",
        [](const std::vector<int>& ids, const std::vector<std::string>& methods, int reps,
           std::uint64_t seed, const BenchConfig& cfg) {
          py::list rows;
          for (const auto& r : run_benchmark(ids, methods, reps, seed, cfg)) {
            py::dict d;
            d["scenario"] = r.scenario;
            d["method"] = r.method;
            d["rep"] = r.rep;
            d["seed"] = r.seed;
            d["mse"] = r.mse;
            d["wall_ms"] = r.wall_ms;
            d["failed"] = r.failed;
            d["error"] = r.error;
            rows.append(d);
          }
          return rows;
        },
        py::arg("scenarios"), py::arg("methods"), py::arg("reps"), py::arg("seed"),
        py::arg("config") = BenchConfig{});
  m.def("bias_study",
        [](const ScenarioSpec& spec, const std::vector<std::string>& methods, int reps,
           std::uint64_t seed, const BenchConfig& cfg) {
          py::dict out;
          for (const auto& [tag, rows] : bias_study(spec, methods, reps, seed, cfg)) {
            py::list lst;
            for (const auto& r : rows) {
              py::dict d;
              d["unit"] = r.unit;
              d["truth"] = r.truth;
              d["mean_estimate"] = r.mean_estimate;
              lst.append(d);
            }
            out[py::str(tag)] = lst;
          }
          return out;
        },
        py::arg("spec"), py::arg("methods"), py::arg("reps"), py::arg("seed"),
        py::arg("config") = BenchConfig{});
  m.def("binned_effect_report",
        [](const std::vector<double>& est, const std::vector<double>& feature, int bins) {
          py::list rows;
          for (const auto& r : binned_effect_report(est, feature, bins)) {
            py::dict d;
            d["bin"] = r.bin;
            d["lo"] = r.lo;
            d["hi"] = r.hi;
            d["mean"] = r.mean;
            d["se"] = r.se;
            d["count"] = r.count;
            rows.append(d);
          }
          return rows;
        },
        py::arg("estimates"), py::arg("feature"), py::arg("bins"));

#ifdef VERSION_INFO
#define HTELAB_STR(x) #x
#define HTELAB_XSTR(x) HTELAB_STR(x)
  m.attr("__version__") = HTELAB_XSTR(VERSION_INFO);
#else
  m.attr("__version__") = "dev";
#endif
}
