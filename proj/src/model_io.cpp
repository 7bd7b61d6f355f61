#include "hte/model_io.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hte/baselines.hpp"
#include "hte/causal_boost.hpp"
#include "hte/causal_mars.hpp"
#include "hte/pto_forest.hpp"

namespace hte {

namespace {

using nlohmann::json;

// --- trees ---------------------------------------------------------------

json node_to_json(const std::vector<TreeNode>& nodes, int id, const json* leaf_payloads) {
  const TreeNode& nd = nodes[static_cast<std::size_t>(id)];
  if (nd.feature < 0) {
    if (leaf_payloads != nullptr) return (*leaf_payloads)[static_cast<std::size_t>(id)];
    return json{{"value", nd.value}};
  }
  return json{{"split_feature", nd.feature},
              {"split_value", nd.threshold},
              {"left", node_to_json(nodes, nd.left, leaf_payloads)},
              {"right", node_to_json(nodes, nd.right, leaf_payloads)}};
}

/// Rebuilds the flat node vector; leaf_cb(id, leaf_json) stores the payload.
template <typename LeafCb>
int node_from_json(const json& j, std::vector<TreeNode>& nodes, const LeafCb& leaf_cb) {
  const int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (j.contains("split_feature")) {
    nodes[static_cast<std::size_t>(id)].feature = j.at("split_feature").get<int>();
    nodes[static_cast<std::size_t>(id)].threshold = j.at("split_value").get<double>();
    const int left = node_from_json(j.at("left"), nodes, leaf_cb);
    nodes[static_cast<std::size_t>(id)].left = left;
    const int right = node_from_json(j.at("right"), nodes, leaf_cb);
    nodes[static_cast<std::size_t>(id)].right = right;
  } else {
    leaf_cb(id, j);
  }
  return id;
}

json forest_to_json(const RegressionForest& f) {
  json trees = json::array();
  for (const auto& t : f.trees) trees.push_back(node_to_json(t.nodes, 0, nullptr));
  return json{{"n_trees", f.params.n_trees},
              {"max_depth", f.params.max_depth},
              {"min_leaf", f.params.min_leaf},
              {"mtry", f.params.mtry},
              {"bootstrap", f.params.bootstrap},
              {"clip", f.clip},
              {"trees", trees}};
}

RegressionForest forest_from_json(const json& j) {
  RegressionForest f;
  f.params.n_trees = j.at("n_trees").get<int>();
  f.params.max_depth = j.at("max_depth").get<int>();
  f.params.min_leaf = j.at("min_leaf").get<int>();
  f.params.mtry = j.at("mtry").get<int>();
  f.params.bootstrap = j.at("bootstrap").get<bool>();
  f.clip = j.at("clip").get<double>();
  for (const auto& tj : j.at("trees")) {
    Tree t;
    node_from_json(tj, t.nodes, [&](int id, const json& leaf) {
      t.nodes[static_cast<std::size_t>(id)].value = leaf.at("value").get<double>();
    });
    f.trees.push_back(std::move(t));
  }
  return f;
}

json pair_tree_to_json(const PairTree& t) {
  json payloads = json::array();
  for (std::size_t id = 0; id < t.nodes.size(); ++id) {
    if (t.nodes[id].feature < 0) {
      const PairPayload& p = t.payload[id];
      payloads.push_back(json{{"mu1", p.mu1}, {"mu0", p.mu0}, {"n1", p.n1}, {"n0", p.n0}});
    } else {
      payloads.push_back(json());
    }
  }
  return node_to_json(t.nodes, 0, &payloads);
}

PairTree pair_tree_from_json(const json& j) {
  PairTree t;
  std::vector<std::pair<int, json>> leaves;
  node_from_json(j, t.nodes, [&](int id, const json& leaf) { leaves.emplace_back(id, leaf); });
  t.payload.resize(t.nodes.size());
  for (const auto& [id, leaf] : leaves) {
    t.payload[static_cast<std::size_t>(id)] =
        PairPayload{leaf.at("mu1").get<double>(), leaf.at("mu0").get<double>(),
                    leaf.at("n1").get<int>(), leaf.at("n0").get<int>()};
  }
  return t;
}

json causal_tree_to_json(const CausalTree& t) {
  json payloads = json::array();
  for (std::size_t id = 0; id < t.nodes.size(); ++id) {
    if (t.nodes[id].feature < 0) {
      const LeafEstimate& e = t.leaf[id];
      payloads.push_back(json{{"mu1", e.mu1},
                              {"mu0", e.mu0},
                              {"tau", e.tau},
                              {"var_tau", e.var_tau},
                              {"n_leaf", e.n_leaf}});
    } else {
      payloads.push_back(json());
    }
  }
  return node_to_json(t.nodes, 0, &payloads);
}

CausalTree causal_tree_from_json(const json& j) {
  CausalTree t;
  std::vector<std::pair<int, json>> leaves;
  node_from_json(j, t.nodes, [&](int id, const json& leaf) { leaves.emplace_back(id, leaf); });
  t.leaf.resize(t.nodes.size());
  for (const auto& [id, leaf] : leaves) {
    t.leaf[static_cast<std::size_t>(id)] =
        LeafEstimate{leaf.at("mu1").get<double>(), leaf.at("mu0").get<double>(),
                     leaf.at("tau").get<double>(), leaf.at("var_tau").get<double>(),
                     leaf.at("n_leaf").get<int>()};
  }
  return t;
}

// --- MARS ----------------------------------------------------------------

json basis_to_json(const BasisFunction& b) {
  json terms = json::array();
  for (const HingeTerm& t : b.terms) {
    terms.push_back(json{{"feature", t.feature}, {"knot", t.knot}, {"positive", t.positive}});
  }
  return terms;
}

BasisFunction basis_from_json(const json& j) {
  BasisFunction b;
  for (const auto& tj : j) {
    b.terms.push_back(HingeTerm{tj.at("feature").get<int>(), tj.at("knot").get<double>(),
                                tj.at("positive").get<bool>()});
  }
  return b;
}

json mars_to_json(const MarsModel& m) {
  json basis = json::array();
  for (const auto& b : m.basis) basis.push_back(basis_to_json(b));
  json out{{"S", m.S},
           {"boundaries", m.strata_boundaries},
           {"basis", basis},
           {"coef1", m.coef1},
           {"coef0", m.coef0}};
  out["propensity"] = m.propensity_model ? forest_to_json(*m.propensity_model) : json();
  return out;
}

MarsModel mars_from_json(const json& j) {
  MarsModel m;
  m.S = j.at("S").get<int>();
  m.strata_boundaries = j.at("boundaries").get<std::vector<double>>();
  for (const auto& bj : j.at("basis")) m.basis.push_back(basis_from_json(bj));
  m.coef1 = j.at("coef1").get<std::vector<std::vector<double>>>();
  m.coef0 = j.at("coef0").get<std::vector<std::vector<double>>>();
  if (!j.at("propensity").is_null()) {
    m.propensity_model = std::make_shared<RegressionForest>(forest_from_json(j.at("propensity")));
  }
  return m;
}

json model_payload(const EffectModel& model) {
  if (const auto* m = dynamic_cast<const NullModel*>(&model)) {
    return json{{"mu1", m->mu1}, {"mu0", m->mu0}};
  }
  if (const auto* m = dynamic_cast<const ToForestModel*>(&model)) {
    return json{{"forest", forest_to_json(m->forest)}};
  }
  if (const auto* m = dynamic_cast<const DbForestModel*>(&model)) {
    return json{{"forest1", forest_to_json(m->forest1)}, {"forest0", forest_to_json(m->forest0)}};
  }
  if (const auto* m = dynamic_cast<const PtoModel*>(&model)) {
    json pair = json::array();
    for (const auto& t : m->pair_forest) pair.push_back(pair_tree_to_json(t));
    json out{{"pair_trees", pair}, {"to_forest", forest_to_json(m->to_forest)}};
    out["smoother"] = m->smoother ? forest_to_json(*m->smoother) : json();
    return out;
  }
  if (const auto* m = dynamic_cast<const BoostModel*>(&model)) {
    json trees = json::array();
    for (const auto& t : m->trees) trees.push_back(causal_tree_to_json(t));
    json out{{"epsilon", m->epsilon},
             {"S", m->S},
             {"boundaries", m->strata_boundaries},
             {"trees", trees}};
    out["propensity"] = m->propensity_model ? forest_to_json(*m->propensity_model) : json();
    return out;
  }
  if (const auto* m = dynamic_cast<const MarsModel*>(&model)) {
    return mars_to_json(*m);
  }
  if (const auto* m = dynamic_cast<const BaggedMars*>(&model)) {
    json members = json::array();
    for (const auto& member : m->models) members.push_back(mars_to_json(member));
    return json{{"members", members}};
  }
  fail("invalid-params", "unknown model type");
}

std::unique_ptr<EffectModel> payload_to_model(const std::string& method, const json& j) {
  if (method == "null") {
    auto m = std::make_unique<NullModel>();
    m->mu1 = j.at("mu1").get<double>();
    m->mu0 = j.at("mu0").get<double>();
    return m;
  }
  if (method == "to_forest") {
    auto m = std::make_unique<ToForestModel>();
    m->forest = forest_from_json(j.at("forest"));
    return m;
  }
  if (method == "db_forest") {
    auto m = std::make_unique<DbForestModel>();
    m->forest1 = forest_from_json(j.at("forest1"));
    m->forest0 = forest_from_json(j.at("forest0"));
    return m;
  }
  if (method == "pto") {
    auto m = std::make_unique<PtoModel>();
    for (const auto& tj : j.at("pair_trees")) m->pair_forest.push_back(pair_tree_from_json(tj));
    m->to_forest = forest_from_json(j.at("to_forest"));
    if (!j.at("smoother").is_null()) m->smoother = forest_from_json(j.at("smoother"));
    return m;
  }
  if (method == "causal_boost") {
    auto m = std::make_unique<BoostModel>();
    m->epsilon = j.at("epsilon").get<double>();
    m->S = j.at("S").get<int>();
    m->strata_boundaries = j.at("boundaries").get<std::vector<double>>();
    for (const auto& tj : j.at("trees")) m->trees.push_back(causal_tree_from_json(tj));
    if (!j.at("propensity").is_null()) {
      m->propensity_model =
          std::make_shared<RegressionForest>(forest_from_json(j.at("propensity")));
    }
    return m;
  }
  if (method == "causal_mars") {
    return std::make_unique<MarsModel>(mars_from_json(j));
  }
  if (method == "bagged_causal_mars") {
    auto m = std::make_unique<BaggedMars>();
    for (const auto& mj : j.at("members")) m->models.push_back(mars_from_json(mj));
    return m;
  }
  fail("version-mismatch", "unknown method in document: " + method);
}

}  // namespace

void save_model(const std::string& path, const EffectModel& model, const RunConfig& cfg,
                std::size_t n_features, const std::vector<std::string>& feature_names) {
  json doc;
  doc["format_version"] = kModelFormatVersion;
  doc["method"] = cfg.method;
  doc["params"] = json::parse(cfg.to_json_text());
  doc["seed"] = cfg.seed;
  doc["n_features"] = n_features;
  doc["feature_names"] = feature_names;
  doc["model"] = model_payload(model);

  std::ofstream out(path);
  if (!out) fail("io-error", "cannot write " + path);
  out << doc.dump(1) << '\n';
}

LoadedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  json doc;
  try {
    doc = json::parse(ss.str());
  } catch (const json::exception& e) {
    fail("malformed-document", e.what());
  }
  try {
    if (!doc.contains("format_version") || doc.at("format_version").get<int>() != kModelFormatVersion)
      fail("version-mismatch", "unsupported format_version");
    LoadedModel out;
    out.method = doc.at("method").get<std::string>();
    out.seed = doc.at("seed").get<std::uint64_t>();
    out.n_features = doc.at("n_features").get<std::size_t>();
    out.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    out.model = payload_to_model(out.method, doc.at("model"));
    return out;
  } catch (const json::exception& e) {
    fail("malformed-document", e.what());
  }
}

}  // namespace hte
