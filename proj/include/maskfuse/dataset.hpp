#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/sample.hpp"

namespace maskfuse {

// A multimodal collection. Tabular values are raw (physical units for
// numerical features, integer codes for categorical ones, NaN where the
// feature was never recorded); masks carry availability.
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  TabularSchema schema;
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  std::size_t classes() const { return class_names.size(); }
  std::size_t size() const { return samples.size(); }
  void validate() const;
};

// Clinical feature definitions used by the generator and the CSV loader.
struct ClinicalFeature {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  std::size_t categories = 0;
  double mean = 0.0;  // numerical baseline, physical units
  double spread = 1.0;
};
const std::vector<ClinicalFeature>& clinical_features();
const std::vector<std::string>& clinical_labels();

struct GeneratorConfig {
  std::size_t samples = 2000;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t features = 12;  // prefix of clinical_features()
  std::size_t classes = 5;
  double image_signal = 0.35;
  double tabular_signal = 1.5;  // in units of the feature spread
  double redundancy = 0.5;      // 1: both modalities informative, 0: complementary
  double noise = 0.15;
  double image_missing = 0.0;
  double feature_missing = 0.1;
  std::vector<double> feature_missing_overrides;  // per feature, empty = uniform
  double label_missing = 0.1;
  double outlier_rate = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const GeneratorConfig& cfg);

// Each class draws its evidence mainly from one modality (even classes from
// the image, odd from the features); the other modality carries the same
// evidence scaled by `redundancy`. Deterministic in cfg.
Dataset generate_synthetic_dataset(const GeneratorConfig& cfg);

enum class StressProtocol { train, test };

std::string protocol_name(StressProtocol p);
StressProtocol parse_protocol(const std::string& name);
std::string modality_name(Modality m);  // "imaging" | "tabular"
Modality parse_modality(const std::string& name);

inline constexpr double kTrainMissingnessCap = 0.75;

// Zeroes the chosen modality's mask for floor(rate * eligible) fully paired
// samples. With `nested`, the chosen samples are a prefix of one seeded
// permutation, so lower rates mask subsets of higher ones; otherwise every
// rate draws independently. Raw values and labels are untouched.
Dataset inject_missingness(const Dataset& data, Modality modality, double rate,
                           std::uint64_t seed, StressProtocol protocol, bool nested = true);

// ---- storage -----------------------------------------------------------------

// Directory with manifest.json and little-endian f64 matrices images.bin,
// tabular.bin, labels.bin, masks.bin (each: 8-byte magic, u32 version, u64
// rows, u64 cols, payload).
void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const nlohmann::json& provenance = nlohmann::json::object());
Dataset read_dataset(const std::filesystem::path& dir);

struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;
};
std::string encode_matrix(const Matrix& m);
Matrix decode_matrix(const std::string& bytes, const std::string& what);

// Clinical CSV: one header row naming the clinical columns and the label
// columns; labels admit 0, 1 or an empty cell. Categorical columns hold
// integer codes. Returns the parsed dataset without images (image masks 0).
void validate_clinical_header(const std::vector<std::string>& header);
Dataset load_clinical_csv(const std::filesystem::path& path);

}  // namespace maskfuse
