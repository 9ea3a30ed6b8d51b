#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/cleaning.hpp"
#include "maskfuse/config.hpp"
#include "maskfuse/dataset.hpp"
#include "maskfuse/evaluation.hpp"

namespace maskfuse {

// Outer k-fold assignment plus the per-fold validation holdout.
struct SplitPlan {
  std::size_t folds = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> fold;                 // test fold per sample
  std::vector<std::vector<bool>> validation;     // [fold][sample]
  std::string hash;                              // of the assignment

  void validate(std::size_t samples) const;
};

SplitPlan make_split(const Dataset& data, std::size_t folds, double validation_share, std::uint64_t seed);
nlohmann::json to_json(const SplitPlan& plan);
SplitPlan split_from_json(const nlohmann::json& j);

// Cleaned train / validation / test sets for one fold. Cleaning statistics
// come from the training rows only.
struct FoldData {
  std::size_t fold = 0;
  Dataset train, val, test;
  CleaningModel cleaning;
  CleaningReport report;
  ModelConfig model;
  nlohmann::json metadata;  // fold id and split hash, stored in checkpoints
};

FoldData prepare_fold(const Dataset& raw, const SplitPlan& plan, std::size_t fold,
                      const ExperimentConfig& cfg);

struct CurveRow {
  std::string protocol;
  std::string method;
  std::string modality;
  double rate = 0.0;
  std::size_t fold = 0;
  double auc = 0.0;
};

struct SummaryRow {
  std::string protocol, method, modality;
  double rate = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t folds = 0;
};

struct AttributionRow {
  std::size_t fold = 0;
  double rate = 0.0;
  std::size_t layer = 0;
  ModalityMass mass;
};

struct StressRequest {
  StressProtocol protocol = StressProtocol::test;
  Modality modality = Modality::vision;
  std::vector<double> rates;              // empty: the protocol grid from the config
  std::vector<std::size_t> folds;         // empty: the configured folds
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint_dir;
  bool keep_models = false;
};

// Models trained for one fold at one training-missingness rate.
struct FoldModels {
  std::size_t fold = 0;
  double rate = 0.0;
  std::unique_ptr<VisionPredictor> vision;
  std::unique_ptr<TabularPredictor> tabular;
  std::map<std::string, std::unique_ptr<Model>> methods;
};

struct StressResult {
  std::vector<CurveRow> rows;
  std::vector<AttributionRow> attribution;
  std::vector<FoldModels> models;  // when requested
  std::vector<std::string> log;
};

// Train protocol: every rate injects missingness into the training and
// validation rows before pre-training and fine-tuning; test rows stay as
// they are. Test protocol: models are trained once on the unmodified fold
// and evaluated on test rows with injected missingness. Reference rows for
// the unimodal predictors are emitted at rate 0 under "reference-vision" and
// "reference-tabular".
StressResult run_stress_protocol(const Dataset& raw, const SplitPlan& plan, const ExperimentConfig& cfg,
                                 const StressRequest& request);

std::vector<SummaryRow> summarize(const std::vector<CurveRow>& rows);

// Tab-separated tables with a header row.
std::string curve_table(const std::vector<CurveRow>& rows);
std::vector<CurveRow> parse_curve_table(const std::string& text);
std::string summary_table(const std::vector<SummaryRow>& rows);
std::string attribution_table(const std::vector<AttributionRow>& rows);

// Shortest decimal form that reads back to the same double.
std::string format_real(double v);

}  // namespace maskfuse
