#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "cloes/core.hpp"
#include "cloes/datagen.hpp"
#include "cloes/objective.hpp"
#include "cloes/trainer.hpp"

namespace cloes {

struct EvalConfig {
  double test_fraction = 0.2;
  std::uint64_t split_seed = 17;
  std::string filter_feature = "Sales Volume";
  std::int64_t keep_k = 400;
  std::vector<std::string> cheap_features{"Sales Volume", "PostPay Score"};
  double cost_units_per_ms = 10.0;
};

struct SimulateConfig {
  double traffic_multiplier = 1.0;
  bool stochastic = false;
  std::uint64_t seed = 1;
};

/// Everything a run needs besides file paths. Missing keys in a config file
/// keep these defaults; unknown keys are rejected.
struct Config {
  FeatureSchema schema = default_schema();
  std::vector<std::vector<std::string>> stages{
      {"Sales Volume", "PostPay Score"}, {"Click-Through-Rate"}, {"Relevance Score", "Deep & Wide"}};
  ObjectiveConfig objective;
  TrainConfig train;
  GenConfig datagen;
  EvalConfig eval;
  SimulateConfig simulate;

  StageAssignment assignment() const { return StageAssignment::from_names(schema, stages); }
  /// Checks every section; throws naming the first bad field.
  void validate() const;
};

Config config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const Config& cfg);
Config load_config(const std::string& path);

}  // namespace cloes
