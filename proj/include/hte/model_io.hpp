#pragma once

#include <memory>
#include <string>
#include <vector>

#include "hte/run_config.hpp"
#include "hte/types.hpp"

namespace hte {

inline constexpr int kModelFormatVersion = 1;

struct LoadedModel {
  std::string method;
  std::uint64_t seed = 0;
  std::size_t n_features = 0;
  std::vector<std::string> feature_names;
  std::unique_ptr<EffectModel> model;
};

/// Self-describing JSON document: format version, method, hyperparameters,
/// seed and the model payload (trees as nested nodes, bases as term lists
/// plus coefficient arrays). Round-trips to bit-identical predictions.
void save_model(const std::string& path, const EffectModel& model, const RunConfig& cfg,
                std::size_t n_features, const std::vector<std::string>& feature_names);

LoadedModel load_model(const std::string& path);

}  // namespace hte
