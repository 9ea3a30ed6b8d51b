#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/training.hpp"

namespace maskfuse {

struct StressConfig {
  std::size_t folds = 5;
  std::size_t fold_limit = 0;  // run only the first n folds; 0 runs all
  std::vector<double> train_rates = {0.0, 0.25, 0.5, 0.75};
  std::vector<double> test_rates = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> methods = {"masked", "zeros", "maxpool", "model-selection", "early", "late"};
  bool nested = true;
  std::size_t threads = 1;
  double validation_share = 0.2;
};

// Resolved configuration of a run. The model schema, class count and image
// size are filled from the data when a fold is prepared.
struct ExperimentConfig {
  GeneratorConfig data;
  ModelConfig model;
  TrainConfig train;
  StressConfig stress;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);

// INI text with sections [data], [model], [train], [stress]. Missing keys
// keep their defaults; unknown sections or keys, malformed values and
// out-of-range settings raise ConfigError naming the key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

}  // namespace maskfuse
