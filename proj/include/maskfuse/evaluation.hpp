#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/model.hpp"
#include "maskfuse/stratify.hpp"

namespace maskfuse {

// Probability that a random positive outscores a random negative, ties
// counting one half. Computed from tie-grouped ranks in integer arithmetic;
// nullopt when either class is absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels);

struct ClassAuc {
  std::string name;
  std::optional<double> auc;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  double weight = 0.0;
  std::string excluded;  // reason, empty when included
};

struct EvalReport {
  std::vector<ClassAuc> classes;
  double weighted_auc = 0.0;
  std::size_t samples = 0;
};

nlohmann::json to_json(const EvalReport& r);

// Per-class AUC over samples whose label is observed, averaged with weights
// proportional to observed positive counts. Classes with an undefined AUC
// are excluded and the remaining weights renormalized. Throws if no class is
// defined.
EvalReport weighted_auc(const LabelMatrix& scores, const LabelMatrix& labels, const LabelMatrix& masks,
                        const std::vector<std::string>& class_names = {});

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;  // sample standard deviation / sqrt(n); 0 for n = 1
};
MeanStderr mean_stderr(std::span<const double> values);

// Scores of `model` over the samples it accepts, under `masks` (defaults to
// the samples' own masks).
struct ScoredSet {
  LabelMatrix scores, labels, masks;
};
ScoredSet score_samples(const Model& model, std::span<const Sample> samples);
EvalReport evaluate_model(const Model& model, std::span<const Sample> samples,
                          const std::vector<std::string>& class_names = {});

// Attention mass received by the vision and tabular key blocks, per fusion
// layer, averaged over heads, available queries and samples.
struct ModalityMass {
  double vision = 0.0;
  double tabular = 0.0;
};
std::vector<ModalityMass> modality_attribution(const MaskedFusionModel& model,
                                               std::span<const Sample> samples);

}  // namespace maskfuse
