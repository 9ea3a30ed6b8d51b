#pragma once

// Small end-to-end fixtures built from the desk profile.

#include <cstdint>
#include <string>

#include "maskfuse/config.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/hashing.hpp"
#include "maskfuse/stress.hpp"

#ifndef MASKFUSE_CONFIG_DIR
#define MASKFUSE_CONFIG_DIR "configs"
#endif

namespace testing_support {

inline maskfuse::ExperimentConfig desk_config() {
  return maskfuse::load_config(std::string(MASKFUSE_CONFIG_DIR) + "/desk.cfg");
}

// Desk profile shrunk for unit-test runtimes.
inline maskfuse::ExperimentConfig quick_config(std::size_t samples = 300, std::size_t epochs = 4) {
  auto cfg = desk_config();
  cfg.data.samples = samples;
  cfg.data.height = 8;
  cfg.data.width = 8;
  cfg.model.vision.stage_widths = {4, 16};
  cfg.train.max_epochs = epochs;
  cfg.train.schedule.warmup_epochs = 1;
  cfg.train.schedule.plateau_patience = 2;
  cfg.train.schedule.early_stop_patience = 4;
  return cfg;
}

struct QuickFold {
  maskfuse::ExperimentConfig cfg;
  maskfuse::Dataset raw;
  maskfuse::SplitPlan plan;
  maskfuse::FoldData fold;
};

inline QuickFold quick_fold(const maskfuse::ExperimentConfig& cfg, std::uint64_t seed) {
  QuickFold q;
  q.cfg = cfg;
  q.cfg.data.seed = seed;
  q.raw = maskfuse::generate_synthetic_dataset(q.cfg.data);
  q.plan = maskfuse::make_split(q.raw, q.cfg.stress.folds, q.cfg.stress.validation_share, seed);
  q.fold = maskfuse::prepare_fold(q.raw, q.plan, 0, q.cfg);
  return q;
}

}  // namespace testing_support
