#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "maskfuse/masking.hpp"

namespace maskfuse {

enum class Modality { vision, tabular };

enum class FeatureKind { categorical, numerical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  std::size_t categories = 0;  // categorical only
};

struct TabularSchema {
  std::vector<FeatureSpec> features;

  std::size_t size() const { return features.size(); }
  void validate() const;
};

// One patient record. `image` is H x W (single channel, row-major) with values
// in [0, 1]; `tabular` holds one value per schema feature (normalized for
// numerical features, a dense category index for categorical ones). Values at
// masked positions are retained but must never influence a model.
struct Sample {
  std::uint64_t id = 0;
  std::vector<double> image;
  std::vector<double> tabular;
  std::vector<double> labels;
  SampleMasks masks;
};

}  // namespace maskfuse
