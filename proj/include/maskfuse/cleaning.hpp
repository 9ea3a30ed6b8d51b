#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/sample.hpp"

namespace maskfuse {

struct RangeRule {
  double low = 0.0;
  double high = 0.0;
  std::string units;
};

struct CleaningRules {
  std::map<std::string, RangeRule> ranges;  // physiological limits by feature name
  std::set<std::string> iqr_features;       // Tukey fences fitted on training rows
  double iqr_multiplier = 1.5;

  void validate() const;
  // Vital-sign limits and blood-pressure fences for the clinical schema.
  static CleaningRules clinical_defaults();
};

// Quantile of sorted data by linear interpolation between closest ranks
// (position q * (n - 1)).
double linear_quantile(std::span<const double> sorted, double q);

struct FeatureStats {
  bool has_range = false;
  double range_low = 0.0, range_high = 0.0;
  bool has_fence = false;
  double q1 = 0.0, q3 = 0.0, fence_low = 0.0, fence_high = 0.0;
  double min = 0.0, max = 0.0;    // of surviving training values (numerical)
  std::vector<double> vocabulary;  // sorted observed codes (categorical)
};

// Statistics fitted on training rows only.
struct CleaningModel {
  TabularSchema raw_schema;
  std::vector<FeatureStats> stats;

  // Schema of cleaned rows: categorical sizes come from the fitted vocabulary.
  TabularSchema schema() const;
};

nlohmann::json to_json(const CleaningModel& model);

struct CleaningReport {
  std::size_t out_of_range = 0;
  std::size_t outside_fence = 0;
  std::size_t unseen_categories = 0;
  std::size_t dropped_rows = 0;  // no modality left after filtering
};

CleaningModel fit_cleaning(std::span<const Sample> train, const TabularSchema& schema,
                           const CleaningRules& rules);

// Marks out-of-range and fenced numerical values missing. Values are left in
// their raw units, so applying it twice changes nothing.
Sample filter_outliers(const Sample& raw, const CleaningModel& model, CleaningReport* report = nullptr);

// Filter, min-max scale surviving numerical values by the training extremes
// and map categorical codes to dense indices. Unseen categories become
// missing (the padding slot) and are counted.
Sample clean_sample(const Sample& raw, const CleaningModel& model, CleaningReport* report = nullptr);

// Rows left without any modality are dropped and counted.
std::vector<Sample> clean_clinical(std::span<const Sample> rows, const CleaningModel& model,
                                   CleaningReport* report = nullptr);

}  // namespace maskfuse
