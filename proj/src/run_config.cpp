#include "hte/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "hte/baselines.hpp"
#include "hte/propensity.hpp"
#include "hte/pto_forest.hpp"

namespace hte {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail("config-unknown-key", "'" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

ForestParams forest_from_json(const json& j) {
  reject_unknown(j, {"n_trees", "max_depth", "min_leaf", "mtry", "bootstrap"}, "forest");
  ForestParams p;
  read(j, "n_trees", p.n_trees);
  read(j, "max_depth", p.max_depth);
  read(j, "min_leaf", p.min_leaf);
  read(j, "mtry", p.mtry);
  read(j, "bootstrap", p.bootstrap);
  return p;
}

BoostParams boost_from_json(const json& j) {
  reject_unknown(j,
                 {"n_trees", "epsilon", "max_depth", "min_leaf_per_arm", "mtry",
                  "min_split_gain", "subsample"},
                 "boost");
  BoostParams p{200, 0.05, CausalTreeParams{}, 1.0};
  read(j, "n_trees", p.n_trees);
  read(j, "epsilon", p.epsilon);
  read(j, "max_depth", p.tree.max_depth);
  read(j, "min_leaf_per_arm", p.tree.min_leaf_per_arm);
  read(j, "mtry", p.tree.mtry);
  read(j, "min_split_gain", p.tree.min_split_gain);
  read(j, "subsample", p.subsample);
  return p;
}

MarsParams mars_from_json(const json& j) {
  reject_unknown(
      j, {"forward_pairs", "knots_per_feature", "max_degree", "backward_deletion",
          "size_select_bags"},
      "mars");
  MarsParams p;
  read(j, "forward_pairs", p.forward_pairs);
  read(j, "knots_per_feature", p.knots_per_feature);
  read(j, "max_degree", p.max_degree);
  read(j, "backward_deletion", p.backward_deletion);
  read(j, "size_select_bags", p.size_select_bags);
  return p;
}

const std::set<std::string> kMethods = {"null",         "to_forest",   "db_forest", "pto",
                                        "causal_boost", "causal_mars", "bagged_causal_mars"};

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail("malformed-document", e.what());
  }
  reject_unknown(j,
                 {"method", "adjustment", "strata", "seed", "scores", "pto_smooth", "forest",
                  "boost", "mars", "mars_bags", "cv_folds"},
                 "config");
  RunConfig cfg;
  read(j, "method", cfg.method);
  read(j, "adjustment", cfg.adjustment);
  read(j, "strata", cfg.strata);
  read(j, "seed", cfg.seed);
  read(j, "scores", cfg.scores);
  read(j, "pto_smooth", cfg.pto_smooth);
  if (j.contains("forest")) cfg.forest = forest_from_json(j.at("forest"));
  if (j.contains("boost")) cfg.boost = boost_from_json(j.at("boost"));
  if (j.contains("mars")) cfg.mars = mars_from_json(j.at("mars"));
  read(j, "mars_bags", cfg.mars_bags);
  read(j, "cv_folds", cfg.cv_folds);

  if (!kMethods.count(cfg.method)) fail("invalid-params", "unknown method: " + cfg.method);
  if (cfg.adjustment != "none" && cfg.adjustment != "stratified")
    fail("invalid-params", "adjustment must be none or stratified");
  if (cfg.scores != "estimate" && cfg.scores != "uniform")
    fail("invalid-params", "scores must be estimate or uniform");
  if (cfg.adjustment == "stratified" && cfg.strata < 1)
    fail("invalid-params", "stratified adjustment needs strata >= 1");
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string RunConfig::to_json_text() const {
  json j;
  j["method"] = method;
  j["adjustment"] = adjustment;
  j["strata"] = strata;
  j["seed"] = seed;
  j["scores"] = scores;
  j["pto_smooth"] = pto_smooth;
  j["forest"] = {{"n_trees", forest.n_trees},
                 {"max_depth", forest.max_depth},
                 {"min_leaf", forest.min_leaf},
                 {"mtry", forest.mtry},
                 {"bootstrap", forest.bootstrap}};
  j["boost"] = {{"n_trees", boost.n_trees},
                {"epsilon", boost.epsilon},
                {"max_depth", boost.tree.max_depth},
                {"min_leaf_per_arm", boost.tree.min_leaf_per_arm},
                {"mtry", boost.tree.mtry},
                {"min_split_gain", boost.tree.min_split_gain},
                {"subsample", boost.subsample}};
  j["mars"] = {{"forward_pairs", mars.forward_pairs},
               {"knots_per_feature", mars.knots_per_feature},
               {"max_degree", mars.max_degree},
               {"backward_deletion", mars.backward_deletion},
               {"size_select_bags", mars.size_select_bags}};
  j["mars_bags"] = mars_bags;
  j["cv_folds"] = cv_folds;
  return j.dump(2);
}

FittedModel fit_with_config(const Dataset& d, const RunConfig& cfg) {
  validate_dataset(d);
  Rng rng(cfg.seed);
  ForestParams fp = cfg.forest;
  fp.seed = cfg.seed;

  auto scores_vec = [&]() -> std::vector<double> {
    if (cfg.scores == "uniform") return std::vector<double>(d.n(), 0.5);
    Rng prop_rng = rng.child(0x5C03Eull);
    return estimate_propensity(d, fp, prop_rng);
  };

  auto stratified = [&]() -> std::pair<StrataAssignment, std::shared_ptr<RegressionForest>> {
    Rng prop_rng = rng.child(0x5C03Eull);
    PropensityModel prop = fit_propensity(d, fp, prop_rng);
    return {assign_strata(prop.oob_scores, cfg.strata),
            std::make_shared<RegressionForest>(std::move(prop.forest))};
  };

  FittedModel out;
  out.method = cfg.method;
  if (cfg.method == "null") {
    out.model = std::make_unique<NullModel>(fit_null(d));
  } else if (cfg.method == "to_forest") {
    out.model = std::make_unique<ToForestModel>(fit_to_forest(d, scores_vec(), fp, rng));
  } else if (cfg.method == "db_forest") {
    out.model = std::make_unique<DbForestModel>(fit_db_forest(d, fp, rng));
  } else if (cfg.method == "pto") {
    out.model =
        std::make_unique<PtoModel>(fit_pto_forest(d, scores_vec(), fp, cfg.pto_smooth, rng));
  } else if (cfg.method == "causal_boost") {
    BoostModel m;
    if (cfg.adjustment == "stratified") {
      auto [sa, prop] = stratified();
      m = fit_causal_boost(d, sa, cfg.boost, rng);
      m.propensity_model = prop;
    } else {
      m = fit_causal_boost(d, StrataAssignment::uniform(d.n()), cfg.boost, rng);
    }
    out.model = std::make_unique<BoostModel>(std::move(m));
  } else if (cfg.method == "causal_mars" || cfg.method == "bagged_causal_mars") {
    const bool bagged = cfg.method == "bagged_causal_mars";
    if (cfg.adjustment == "stratified") {
      auto [sa, prop] = stratified();
      if (bagged) {
        BaggedMars m = fit_bagged_causal_mars(d, cfg.mars, cfg.mars_bags, &sa, rng);
        for (auto& member : m.models) member.propensity_model = prop;
        out.model = std::make_unique<BaggedMars>(std::move(m));
      } else {
        MarsModel m = fit_causal_mars(d, cfg.mars, &sa, rng);
        m.propensity_model = prop;
        out.model = std::make_unique<MarsModel>(std::move(m));
      }
    } else {
      if (bagged) {
        out.model = std::make_unique<BaggedMars>(
            fit_bagged_causal_mars(d, cfg.mars, cfg.mars_bags, nullptr, rng));
      } else {
        out.model = std::make_unique<MarsModel>(fit_causal_mars(d, cfg.mars, nullptr, rng));
      }
    }
  } else {
    fail("invalid-params", "unknown method: " + cfg.method);
  }
  return out;
}

}  // namespace hte
