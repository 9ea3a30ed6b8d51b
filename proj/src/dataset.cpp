#include "maskfuse/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "maskfuse/errors.hpp"
#include "maskfuse/hashing.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_rate(double r, const std::string& what) {
  if (!(r >= 0.0 && r <= 1.0)) {
    throw PreconditionError(what + ": probability out of range [0, 1]: " + std::to_string(r));
  }
}

}  // namespace

const std::vector<ClinicalFeature>& clinical_features() {
  static const std::vector<ClinicalFeature> kFeatures = {
      {"age", FeatureKind::numerical, 0, 62.0, 17.0},
      {"sex", FeatureKind::categorical, 2, 0.0, 1.0},
      {"ethnicity", FeatureKind::categorical, 5, 0.0, 1.0},
      {"temperature", FeatureKind::numerical, 0, 98.3, 1.3},
      {"heart_rate", FeatureKind::numerical, 0, 86.0, 17.0},
      {"respiration_rate", FeatureKind::numerical, 0, 19.0, 4.0},
      {"oxygen_saturation", FeatureKind::numerical, 0, 97.0, 2.5},
      {"systolic_pressure", FeatureKind::numerical, 0, 132.0, 22.0},
      {"diastolic_pressure", FeatureKind::numerical, 0, 74.0, 14.0},
      {"description_cough", FeatureKind::categorical, 2, 0.0, 1.0},
      {"description_dyspnea", FeatureKind::categorical, 2, 0.0, 1.0},
      {"description_chest_pain", FeatureKind::categorical, 2, 0.0, 1.0},
      {"description_fever", FeatureKind::categorical, 2, 0.0, 1.0},
      {"description_weakness", FeatureKind::categorical, 2, 0.0, 1.0},
  };
  return kFeatures;
}

const std::vector<std::string>& clinical_labels() {
  static const std::vector<std::string> kLabels = {
      "Atelectasis",      "Cardiomegaly",     "Consolidation",    "Edema",
      "Enlarged Cardiomediastinum",           "Fracture",         "Lung Lesion",
      "Lung Opacity",     "No Finding",       "Pleural Effusion", "Pleural Other",
      "Pneumonia",        "Pneumothorax",     "Support Devices"};
  return kLabels;
}

void Dataset::validate() const {
  schema.validate();
  const std::size_t f = schema.size(), c = classes();
  for (const auto& s : samples) {
    const auto id = std::to_string(s.id);
    if (s.image.size() != height * width) throw ShapeError("sample " + id + ": image size mismatch");
    if (s.tabular.size() != f || s.masks.tabular.size() != f) {
      throw ShapeError("sample " + id + ": tabular size mismatch");
    }
    if (s.labels.size() != c || s.masks.labels.size() != c) {
      throw ShapeError("sample " + id + ": label size mismatch");
    }
    if (!s.masks.admissible()) throw PreconditionError("sample " + id + ": no modality present");
  }
}

void GeneratorConfig::validate() const {
  if (samples == 0) throw PreconditionError("generator: samples must be >= 1");
  if (classes == 0) throw PreconditionError("generator: classes must be >= 1");
  if (height < 4 || width < 4) throw PreconditionError("generator: image must be at least 4x4");
  if (features == 0 || features > clinical_features().size()) {
    throw PreconditionError("generator: features must be in [1, " +
                            std::to_string(clinical_features().size()) + "]");
  }
  check_rate(redundancy, "generator redundancy");
  check_rate(image_missing, "generator image_missing");
  check_rate(feature_missing, "generator feature_missing");
  check_rate(label_missing, "generator label_missing");
  check_rate(outlier_rate, "generator outlier_rate");
  if (!feature_missing_overrides.empty() && feature_missing_overrides.size() != features) {
    throw PreconditionError("generator: feature_missing_overrides needs one rate per feature");
  }
  for (double r : feature_missing_overrides) check_rate(r, "generator feature_missing_overrides");
  if (!(noise >= 0.0)) throw PreconditionError("generator: noise must be >= 0");
}

nlohmann::json to_json(const GeneratorConfig& cfg) {
  return {{"samples", cfg.samples},
          {"height", cfg.height},
          {"width", cfg.width},
          {"features", cfg.features},
          {"classes", cfg.classes},
          {"image_signal", cfg.image_signal},
          {"tabular_signal", cfg.tabular_signal},
          {"redundancy", cfg.redundancy},
          {"noise", cfg.noise},
          {"image_missing", cfg.image_missing},
          {"feature_missing", cfg.feature_missing},
          {"feature_missing_overrides", cfg.feature_missing_overrides},
          {"label_missing", cfg.label_missing},
          {"outlier_rate", cfg.outlier_rate},
          {"seed", cfg.seed}};
}

// ---- generator ---------------------------------------------------------------------

namespace {

// Unit-peak pattern for class c: bars, blobs and diagonals at class-specific
// positions.
std::vector<double> class_template(std::size_t c, std::size_t h, std::size_t w) {
  std::vector<double> t(h * w, 0.0);
  const std::size_t family = c % 4;
  const std::size_t slot = c / 4;
  const double fh = static_cast<double>(h), fw = static_cast<double>(w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double y = (static_cast<double>(i) + 0.5) / fh;
      const double x = (static_cast<double>(j) + 0.5) / fw;
      double v = 0.0;
      switch (family) {
        case 0: {  // horizontal bar
          const double row = 0.25 + 0.2 * static_cast<double>(slot % 3);
          v = std::exp(-std::pow((y - row) / 0.07, 2));
          break;
        }
        case 1: {  // vertical bar
          const double col = 0.7 - 0.2 * static_cast<double>(slot % 3);
          v = std::exp(-std::pow((x - col) / 0.07, 2));
          break;
        }
        case 2: {  // blob
          const double cy = 0.3 + 0.35 * static_cast<double>(slot % 2);
          const double cx = 0.65 - 0.3 * static_cast<double>(slot % 2);
          v = std::exp(-(std::pow(y - cy, 2) + std::pow(x - cx, 2)) / (2 * 0.12 * 0.12));
          break;
        }
        default: {  // diagonal
          const double d = slot % 2 == 0 ? x - y : x + y - 1.0;
          v = std::exp(-std::pow(d / 0.08, 2));
          break;
        }
      }
      t[i * w + j] = v;
    }
  }
  return t;
}

}  // namespace

Dataset generate_synthetic_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  const auto& catalog = clinical_features();
  Dataset data;
  data.height = cfg.height;
  data.width = cfg.width;
  for (std::size_t j = 0; j < cfg.features; ++j) {
    data.schema.features.push_back({catalog[j].name, catalog[j].kind, catalog[j].categories});
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    data.class_names.push_back(c < clinical_labels().size() ? clinical_labels()[c]
                                                            : "class_" + std::to_string(c));
  }

  std::vector<std::size_t> numeric, binary;
  for (std::size_t j = 0; j < cfg.features; ++j) {
    if (catalog[j].kind == FeatureKind::numerical) numeric.push_back(j);
    else if (catalog[j].categories == 2 && catalog[j].name.rfind("description", 0) == 0)
      binary.push_back(j);
  }
  std::vector<std::vector<double>> templates;
  for (std::size_t c = 0; c < cfg.classes; ++c) templates.push_back(class_template(c, cfg.height, cfg.width));

  const std::size_t hw = cfg.height * cfg.width;
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    Rng rng(derive_seed(cfg.seed, "data", n));
    Sample s;
    s.id = n;
    s.labels.resize(cfg.classes);
    s.masks.labels.assign(cfg.classes, 1.0);
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const double prevalence =
          cfg.classes == 1 ? 0.4 : 0.15 + 0.4 * static_cast<double>(c) / static_cast<double>(cfg.classes - 1);
      s.labels[c] = rng.bernoulli(prevalence) ? 1.0 : 0.0;
    }

    // image
    s.image.resize(hw);
    for (auto& v : s.image) v = 0.2 + cfg.noise * rng.normal();
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const double strength = c % 2 == 0 ? 1.0 : cfg.redundancy;
      const double intensity = 0.7 + 0.6 * rng.uniform();
      if (s.labels[c] == 0.0) continue;
      const double a = cfg.image_signal * strength * intensity;
      for (std::size_t p = 0; p < hw; ++p) s.image[p] += a * templates[c][p];
    }
    for (auto& v : s.image) v = std::clamp(v, 0.0, 1.0);

    // tabular
    s.tabular.resize(cfg.features);
    for (std::size_t j = 0; j < cfg.features; ++j) {
      const auto& f = catalog[j];
      if (f.kind == FeatureKind::numerical) {
        s.tabular[j] = f.mean + f.spread * rng.normal();
      } else {
        s.tabular[j] = static_cast<double>(rng.index(f.categories));
      }
    }
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      const double strength = c % 2 == 1 ? 1.0 : cfg.redundancy;
      const double u = rng.uniform();
      if (s.labels[c] == 0.0 || numeric.empty()) continue;
      const double shift = cfg.tabular_signal * strength * (0.7 + 0.6 * u);
      const std::size_t a = numeric[c % numeric.size()];
      const std::size_t b = numeric[(c + numeric.size() / 2 + 1) % numeric.size()];
      s.tabular[a] += shift * catalog[a].spread;
      if (b != a) s.tabular[b] -= 0.5 * shift * catalog[b].spread;
    }
    for (std::size_t c = 0; c < cfg.classes && !binary.empty(); ++c) {
      const double strength = c % 2 == 1 ? 1.0 : cfg.redundancy;
      const std::size_t j = binary[c % binary.size()];
      const double p = 0.1 + (s.labels[c] != 0.0 ? 0.6 * strength : 0.0);
      if (rng.bernoulli(p)) s.tabular[j] = 1.0;
    }
    for (std::size_t k : numeric) {
      if (rng.bernoulli(cfg.outlier_rate)) {
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        s.tabular[k] = catalog[k].mean + sign * 12.0 * catalog[k].spread;
      }
    }

    // missingness
    s.masks.image = rng.bernoulli(cfg.image_missing) ? 0.0 : 1.0;
    s.masks.tabular.assign(cfg.features, 1.0);
    for (std::size_t j = 0; j < cfg.features; ++j) {
      const double rate =
          cfg.feature_missing_overrides.empty() ? cfg.feature_missing : cfg.feature_missing_overrides[j];
      if (rng.bernoulli(rate)) s.masks.tabular[j] = 0.0;
    }
    for (std::size_t c = 0; c < cfg.classes; ++c) {
      if (rng.bernoulli(cfg.label_missing)) s.masks.labels[c] = 0.0;
    }
    if (!s.masks.admissible()) s.masks.image = 1.0;
    if (!s.masks.has_image()) std::fill(s.image.begin(), s.image.end(), 0.0);
    for (std::size_t j = 0; j < cfg.features; ++j)
      if (s.masks.tabular[j] == 0.0) s.tabular[j] = kNaN;
    for (std::size_t c = 0; c < cfg.classes; ++c)
      if (s.masks.labels[c] == 0.0) s.labels[c] = 0.0;
    data.samples.push_back(std::move(s));
  }
  return data;
}

// ---- injection ----------------------------------------------------------------------

std::string protocol_name(StressProtocol p) { return p == StressProtocol::train ? "train" : "test"; }

StressProtocol parse_protocol(const std::string& name) {
  if (name == "train") return StressProtocol::train;
  if (name == "test") return StressProtocol::test;
  throw ConfigError("protocol must be 'train' or 'test', got '" + name + "'");
}

std::string modality_name(Modality m) { return m == Modality::vision ? "imaging" : "tabular"; }

Modality parse_modality(const std::string& name) {
  if (name == "imaging" || name == "vision" || name == "image") return Modality::vision;
  if (name == "tabular") return Modality::tabular;
  throw ConfigError("modality must be 'imaging' or 'tabular', got '" + name + "'");
}

Dataset inject_missingness(const Dataset& data, Modality modality, double rate,
                           std::uint64_t seed, StressProtocol protocol, bool nested) {
  check_rate(rate, "missingness rate");
  if (protocol == StressProtocol::train && rate > kTrainMissingnessCap) {
    throw PreconditionError("training-time missingness is capped at 75%; got " +
                            std::to_string(rate * 100.0) + "%");
  }
  Dataset out = data;
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    if (out.samples[i].masks.fully_paired()) eligible.push_back(i);
  }
  const auto count = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(eligible.size()) + 1e-9));
  const std::uint64_t rate_key = nested ? 0 : std::bit_cast<std::uint64_t>(rate);
  Rng rng(derive_seed(seed, "injection", static_cast<std::uint64_t>(modality), rate_key));
  rng.shuffle(eligible);
  for (std::size_t k = 0; k < count; ++k) {
    auto& m = out.samples[eligible[k]].masks;
    if (modality == Modality::vision) m.image = 0.0;
    else std::fill(m.tabular.begin(), m.tabular.end(), 0.0);
  }
  return out;
}

// ---- storage ---------------------------------------------------------------------

namespace {

constexpr char kMatrixMagic[8] = {'M', 'F', 'M', 'A', 'T', 'R', 'I', 'X'};
constexpr std::uint32_t kMatrixVersion = 1;

template <class T>
void put(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > in.size()) throw PreconditionError(what + ": truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::string encode_matrix(const Matrix& m) {
  if (m.values.size() != m.rows * m.cols) throw ShapeError("encode_matrix: size mismatch");
  std::string out(kMatrixMagic, sizeof(kMatrixMagic));
  put<std::uint32_t>(out, kMatrixVersion);
  put<std::uint64_t>(out, m.rows);
  put<std::uint64_t>(out, m.cols);
  for (double v : m.values) put<double>(out, v);
  return out;
}

Matrix decode_matrix(const std::string& bytes, const std::string& what) {
  if (bytes.size() < sizeof(kMatrixMagic) ||
      std::memcmp(bytes.data(), kMatrixMagic, sizeof(kMatrixMagic)) != 0) {
    throw PreconditionError(what + ": bad magic");
  }
  std::size_t pos = sizeof(kMatrixMagic);
  const auto version = take<std::uint32_t>(bytes, pos, what);
  if (version != kMatrixVersion) {
    throw PreconditionError(what + ": unsupported version " + std::to_string(version));
  }
  Matrix m;
  m.rows = take<std::uint64_t>(bytes, pos, what);
  m.cols = take<std::uint64_t>(bytes, pos, what);
  if (bytes.size() - pos != m.rows * m.cols * sizeof(double)) {
    throw PreconditionError(what + ": payload size does not match " + std::to_string(m.rows) +
                            "x" + std::to_string(m.cols));
  }
  m.values.resize(m.rows * m.cols);
  std::memcpy(m.values.data(), bytes.data() + pos, m.values.size() * sizeof(double));
  return m;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& data,
                   const nlohmann::json& provenance) {
  data.validate();
  std::filesystem::create_directories(dir);
  const std::size_t n = data.size(), hw = data.height * data.width, f = data.schema.size(),
                    c = data.classes();
  Matrix images{n, hw, {}}, tabular{n, f, {}}, labels{n, c, {}}, masks{n, 1 + f + c, {}};
  for (const auto& s : data.samples) {
    images.values.insert(images.values.end(), s.image.begin(), s.image.end());
    tabular.values.insert(tabular.values.end(), s.tabular.begin(), s.tabular.end());
    labels.values.insert(labels.values.end(), s.labels.begin(), s.labels.end());
    masks.values.push_back(s.masks.image);
    masks.values.insert(masks.values.end(), s.masks.tabular.begin(), s.masks.tabular.end());
    masks.values.insert(masks.values.end(), s.masks.labels.begin(), s.masks.labels.end());
  }
  nlohmann::json manifest;
  manifest["format"] = "maskfuse-dataset";
  manifest["version"] = 1;
  manifest["samples"] = n;
  manifest["height"] = data.height;
  manifest["width"] = data.width;
  manifest["classes"] = data.class_names;
  manifest["ids"] = nlohmann::json::array();
  for (const auto& s : data.samples) manifest["ids"].push_back(s.id);
  for (const auto& feat : data.schema.features) {
    manifest["schema"].push_back({{"name", feat.name},
                                  {"kind", feat.kind == FeatureKind::numerical ? "numerical" : "categorical"},
                                  {"categories", feat.categories}});
  }
  manifest["provenance"] = provenance;
  const std::pair<const char*, const Matrix*> files[] = {
      {"images.bin", &images}, {"tabular.bin", &tabular}, {"labels.bin", &labels}, {"masks.bin", &masks}};
  for (const auto& [name, m] : files) {
    const std::string bytes = encode_matrix(*m);
    write_file(dir / name, bytes);
    manifest["files"][name] = sha256_hex(bytes);
  }
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw PreconditionError("dataset: missing " + manifest_path.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    throw PreconditionError("dataset manifest: " + std::string(e.what()));
  }
  Dataset data;
  data.height = manifest.at("height").get<std::size_t>();
  data.width = manifest.at("width").get<std::size_t>();
  data.class_names = manifest.at("classes").get<std::vector<std::string>>();
  for (const auto& feat : manifest.at("schema")) {
    data.schema.features.push_back(
        {feat.at("name").get<std::string>(),
         feat.at("kind").get<std::string>() == "numerical" ? FeatureKind::numerical : FeatureKind::categorical,
         feat.at("categories").get<std::size_t>()});
  }
  auto load = [&](const char* name) {
    const std::string bytes = read_file(dir / name);
    const auto expected = manifest.at("files").at(name).get<std::string>();
    if (sha256_hex(bytes) != expected) throw PreconditionError(std::string("dataset: hash mismatch for ") + name);
    return decode_matrix(bytes, name);
  };
  const Matrix images = load("images.bin"), tabular = load("tabular.bin"),
               labels = load("labels.bin"), masks = load("masks.bin");
  const std::size_t n = manifest.at("samples").get<std::size_t>(), f = data.schema.size(),
                    c = data.classes(), hw = data.height * data.width;
  if (images.rows != n || images.cols != hw || tabular.rows != n || tabular.cols != f ||
      labels.rows != n || labels.cols != c || masks.rows != n || masks.cols != 1 + f + c) {
    throw ShapeError("dataset: matrix shapes disagree with the manifest");
  }
  const auto ids = manifest.at("ids").get<std::vector<std::uint64_t>>();
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.id = ids.at(i);
    s.image.assign(images.values.begin() + i * hw, images.values.begin() + (i + 1) * hw);
    s.tabular.assign(tabular.values.begin() + i * f, tabular.values.begin() + (i + 1) * f);
    s.labels.assign(labels.values.begin() + i * c, labels.values.begin() + (i + 1) * c);
    const auto* m = masks.values.data() + i * (1 + f + c);
    s.masks.image = m[0];
    s.masks.tabular.assign(m + 1, m + 1 + f);
    s.masks.labels.assign(m + 1 + f, m + 1 + f + c);
    data.samples.push_back(std::move(s));
  }
  data.validate();
  return data;
}

// ---- clinical CSV --------------------------------------------------------------------

namespace {

const std::vector<std::string>& clinical_columns() {
  static const std::vector<std::string> kColumns = {
      "age",          "sex",           "ethnicity",         "temperature",       "heart_rate",
      "respiration_rate", "oxygen_saturation", "systolic_pressure", "diastolic_pressure",
      "description"};
  return kColumns;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::vector<std::string> split_terms(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string term;
  while (std::getline(ss, term, ';')) {
    const auto b = term.find_first_not_of(' ');
    const auto e = term.find_last_not_of(' ');
    if (b != std::string::npos) out.push_back(term.substr(b, e - b + 1));
  }
  return out;
}

}  // namespace

void validate_clinical_header(const std::vector<std::string>& header) {
  std::vector<std::string> expected = clinical_columns();
  expected.insert(expected.end(), clinical_labels().begin(), clinical_labels().end());
  std::set<std::string> present(header.begin(), header.end());
  if (present.size() != header.size()) throw PreconditionError("clinical CSV: duplicate column");
  for (const auto& col : expected) {
    if (!present.count(col)) throw PreconditionError("clinical CSV: missing column '" + col + "'");
  }
  for (const auto& col : header) {
    const bool known = std::find(expected.begin(), expected.end(), col) != expected.end();
    if (!known && col.rfind("description_", 0) != 0) {
      throw PreconditionError("clinical CSV: unknown column '" + col + "'");
    }
  }
}

Dataset load_clinical_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw PreconditionError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw PreconditionError("clinical CSV: empty file");
  const auto header = split_csv_line(line);
  validate_clinical_header(header);
  auto column = [&](const std::string& name) {
    return static_cast<std::size_t>(std::find(header.begin(), header.end(), name) - header.begin());
  };
  std::vector<std::size_t> expanded;  // pre-expanded multi-hot columns
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i].rfind("description_", 0) == 0) expanded.push_back(i);

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw PreconditionError("clinical CSV: row " + std::to_string(rows.size() + 2) + " has " +
                              std::to_string(cells.size()) + " cells, expected " +
                              std::to_string(header.size()));
    }
    rows.push_back(std::move(cells));
  }
  // Free-text descriptions become one binary feature per observed term.
  std::set<std::string> vocabulary;
  for (const auto& r : rows)
    for (const auto& t : split_terms(r[column("description")])) vocabulary.insert(t);

  Dataset data;
  data.class_names = clinical_labels();
  const auto& catalog = clinical_features();
  for (std::size_t j = 0; j < 9; ++j) {
    data.schema.features.push_back({catalog[j].name, catalog[j].kind, catalog[j].categories});
  }
  for (const auto& t : vocabulary) data.schema.features.push_back({"description=" + t, FeatureKind::categorical, 2});
  for (std::size_t i : expanded) data.schema.features.push_back({header[i], FeatureKind::categorical, 2});

  auto parse_number = [](const std::string& cell, std::size_t row, const std::string& col) {
    try {
      std::size_t used = 0;
      const double v = std::stod(cell, &used);
      if (used != cell.size()) throw std::invalid_argument(cell);
      return v;
    } catch (const std::exception&) {
      throw PreconditionError("clinical CSV: row " + std::to_string(row) + " column '" + col +
                              "' is not a number: '" + cell + "'");
    }
  };
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& cells = rows[r];
    Sample s;
    s.id = r;
    s.masks.image = 0.0;
    for (std::size_t j = 0; j < 9; ++j) {
      const auto& cell = cells[column(catalog[j].name)];
      if (cell.empty()) {
        s.tabular.push_back(kNaN);
        s.masks.tabular.push_back(0.0);
      } else {
        s.tabular.push_back(parse_number(cell, r + 2, catalog[j].name));
        s.masks.tabular.push_back(1.0);
      }
    }
    const auto terms = split_terms(cells[column("description")]);
    const bool described = !cells[column("description")].empty();
    for (const auto& t : vocabulary) {
      s.tabular.push_back(std::find(terms.begin(), terms.end(), t) != terms.end() ? 1.0 : 0.0);
      s.masks.tabular.push_back(described ? 1.0 : 0.0);
    }
    for (std::size_t i : expanded) {
      if (cells[i].empty()) {
        s.tabular.push_back(kNaN);
        s.masks.tabular.push_back(0.0);
      } else {
        s.tabular.push_back(parse_number(cells[i], r + 2, header[i]));
        s.masks.tabular.push_back(1.0);
      }
    }
    for (const auto& name : clinical_labels()) {
      const auto& cell = cells[column(name)];
      if (cell.empty()) {
        s.labels.push_back(0.0);
        s.masks.labels.push_back(0.0);
      } else if (cell == "0" || cell == "1") {
        s.labels.push_back(cell == "1" ? 1.0 : 0.0);
        s.masks.labels.push_back(1.0);
      } else {
        throw PreconditionError("clinical CSV: row " + std::to_string(r + 2) + " label '" + name +
                                "' must be 0, 1 or empty, got '" + cell + "'");
      }
    }
    if (!s.masks.has_tabular()) {
      throw PreconditionError("clinical CSV: row " + std::to_string(r + 2) + " has no modality present");
    }
    data.samples.push_back(std::move(s));
  }
  return data;
}

}  // namespace maskfuse
