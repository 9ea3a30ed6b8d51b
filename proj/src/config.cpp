#include "maskfuse/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "maskfuse/errors.hpp"
#include "maskfuse/hashing.hpp"

namespace maskfuse {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

[[noreturn]] void type_error(const std::string& key, const std::string& expected, const std::string& got) {
  throw ConfigError("config key '" + key + "': expected " + expected + ", got '" + got + "'");
}

std::size_t as_count(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) type_error(key, "non-negative integer", raw);
  return out;
}

double as_real(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) type_error(key, "number", raw);
    return out;
  } catch (const std::logic_error&) {
    type_error(key, "number", raw);
  }
}

bool as_bool(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  type_error(key, "boolean", raw);
}

std::vector<std::string> as_list(const std::string& raw) {
  std::vector<std::string> out;
  std::stringstream ss(raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> as_reals(const std::string& key, const std::string& raw) {
  std::vector<double> out;
  for (const auto& item : as_list(raw)) out.push_back(as_real(key, item));
  return out;
}

std::vector<std::size_t> as_counts(const std::string& key, const std::string& raw) {
  std::vector<std::size_t> out;
  for (const auto& item : as_list(raw)) out.push_back(as_count(key, item));
  return out;
}

void check_probability(const std::string& key, double v) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw ConfigError("config key '" + key + "': probability out of range [0, 1]: " + std::to_string(v));
  }
}

void check_positive(const std::string& key, double v) {
  if (!(v > 0.0)) throw ConfigError("config key '" + key + "': must be > 0");
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, std::map<std::string, Setter>>& setters() {
  static const std::map<std::string, std::map<std::string, Setter>> kSetters = {
      {"data",
       {
           {"samples", [](auto& c, auto& k, auto& v) { c.data.samples = as_count(k, v); }},
           {"height", [](auto& c, auto& k, auto& v) { c.data.height = as_count(k, v); }},
           {"width", [](auto& c, auto& k, auto& v) { c.data.width = as_count(k, v); }},
           {"features", [](auto& c, auto& k, auto& v) { c.data.features = as_count(k, v); }},
           {"classes", [](auto& c, auto& k, auto& v) { c.data.classes = as_count(k, v); }},
           {"image_signal", [](auto& c, auto& k, auto& v) { c.data.image_signal = as_real(k, v); }},
           {"tabular_signal", [](auto& c, auto& k, auto& v) { c.data.tabular_signal = as_real(k, v); }},
           {"redundancy", [](auto& c, auto& k, auto& v) { c.data.redundancy = as_real(k, v); }},
           {"noise", [](auto& c, auto& k, auto& v) { c.data.noise = as_real(k, v); }},
           {"image_missing", [](auto& c, auto& k, auto& v) { c.data.image_missing = as_real(k, v); }},
           {"feature_missing", [](auto& c, auto& k, auto& v) { c.data.feature_missing = as_real(k, v); }},
           {"feature_missing_overrides",
            [](auto& c, auto& k, auto& v) { c.data.feature_missing_overrides = as_reals(k, v); }},
           {"label_missing", [](auto& c, auto& k, auto& v) { c.data.label_missing = as_real(k, v); }},
           {"outlier_rate", [](auto& c, auto& k, auto& v) { c.data.outlier_rate = as_real(k, v); }},
       }},
      {"model",
       {
           {"stage_widths", [](auto& c, auto& k, auto& v) { c.model.vision.stage_widths = as_counts(k, v); }},
           {"token_width", [](auto& c, auto& k, auto& v) { c.model.vision.token_width = as_count(k, v); }},
           {"tabular_layers", [](auto& c, auto& k, auto& v) { c.model.tabular_layers = as_count(k, v); }},
           {"tabular_heads", [](auto& c, auto& k, auto& v) { c.model.tabular_heads = as_count(k, v); }},
           {"fusion_layers", [](auto& c, auto& k, auto& v) { c.model.fusion_layers = as_count(k, v); }},
           {"fusion_heads", [](auto& c, auto& k, auto& v) { c.model.fusion_heads = as_count(k, v); }},
           {"ffn_mult", [](auto& c, auto& k, auto& v) { c.model.ffn_mult = as_count(k, v); }},
           {"mlp_layers", [](auto& c, auto& k, auto& v) { c.model.mlp_layers = as_count(k, v); }},
           {"mlp_width", [](auto& c, auto& k, auto& v) { c.model.mlp_width = as_count(k, v); }},
       }},
      {"train",
       {
           {"batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = as_count(k, v); }},
           {"epochs", [](auto& c, auto& k, auto& v) { c.train.max_epochs = as_count(k, v); }},
           {"learning_rate", [](auto& c, auto& k, auto& v) { c.train.learning_rate = as_real(k, v); }},
           {"warmup_epochs", [](auto& c, auto& k, auto& v) { c.train.schedule.warmup_epochs = as_count(k, v); }},
           {"plateau_patience",
            [](auto& c, auto& k, auto& v) { c.train.schedule.plateau_patience = as_count(k, v); }},
           {"plateau_factor", [](auto& c, auto& k, auto& v) { c.train.schedule.plateau_factor = as_real(k, v); }},
           {"early_stop_patience",
            [](auto& c, auto& k, auto& v) { c.train.schedule.early_stop_patience = as_count(k, v); }},
           {"dropout_r", [](auto& c, auto& k, auto& v) { c.train.dropout_rate = as_real(k, v); }},
           {"dropout_image_share", [](auto& c, auto& k, auto& v) { c.train.dropout_image_share = as_real(k, v); }},
           {"unimodal_lr_divisor", [](auto& c, auto& k, auto& v) { c.train.unimodal_lr_divisor = as_real(k, v); }},
           {"weight_decay", [](auto& c, auto& k, auto& v) { c.train.weight_decay = as_real(k, v); }},
           {"grad_clip", [](auto& c, auto& k, auto& v) { c.train.grad_clip = as_real(k, v); }},
           {"augment", [](auto& c, auto& k, auto& v) { c.train.augment = as_bool(k, v); }},
       }},
      {"stress",
       {
           {"folds", [](auto& c, auto& k, auto& v) { c.stress.folds = as_count(k, v); }},
           {"fold_limit", [](auto& c, auto& k, auto& v) { c.stress.fold_limit = as_count(k, v); }},
           {"train_rates", [](auto& c, auto& k, auto& v) { c.stress.train_rates = as_reals(k, v); }},
           {"test_rates", [](auto& c, auto& k, auto& v) { c.stress.test_rates = as_reals(k, v); }},
           {"methods", [](auto& c, auto&, auto& v) { c.stress.methods = as_list(v); }},
           {"nested", [](auto& c, auto& k, auto& v) { c.stress.nested = as_bool(k, v); }},
           {"threads", [](auto& c, auto& k, auto& v) { c.stress.threads = as_count(k, v); }},
           {"validation_share", [](auto& c, auto& k, auto& v) { c.stress.validation_share = as_real(k, v); }},
       }},
  };
  return kSetters;
}

void check_rates(const std::string& key, const std::vector<double>& rates, double cap) {
  if (rates.empty()) throw ConfigError("config key '" + key + "': at least one rate required");
  for (std::size_t i = 0; i < rates.size(); ++i) {
    check_probability(key, rates[i]);
    if (rates[i] > cap) {
      throw ConfigError("config key '" + key + "': training-time missingness is capped at 75%");
    }
    if (i > 0 && !(rates[i] > rates[i - 1])) {
      throw ConfigError("config key '" + key + "': rates must be strictly increasing");
    }
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (data.samples == 0) throw ConfigError("config key 'data.samples': must be >= 1");
  if (data.classes == 0) throw ConfigError("config key 'data.classes': must be >= 1");
  if (data.features == 0 || data.features > clinical_features().size()) {
    throw ConfigError("config key 'data.features': must be in [1, " +
                      std::to_string(clinical_features().size()) + "]");
  }
  for (auto [key, v] : {std::pair{"data.redundancy", data.redundancy},
                        {"data.image_missing", data.image_missing},
                        {"data.feature_missing", data.feature_missing},
                        {"data.label_missing", data.label_missing},
                        {"data.outlier_rate", data.outlier_rate},
                        {"train.dropout_r", train.dropout_rate},
                        {"train.dropout_image_share", train.dropout_image_share}}) {
    check_probability(key, v);
  }
  for (double v : data.feature_missing_overrides) check_probability("data.feature_missing_overrides", v);
  if (!data.feature_missing_overrides.empty() && data.feature_missing_overrides.size() != data.features) {
    throw ConfigError("config key 'data.feature_missing_overrides': needs one rate per feature");
  }
  const auto& v = model.vision;
  if (v.stage_widths.empty()) throw ConfigError("config key 'model.stage_widths': at least one stage required");
  for (auto w : v.stage_widths)
    if (w == 0) throw ConfigError("config key 'model.stage_widths': widths must be >= 1");
  if (v.token_width == 0 || v.latent_width() % v.token_width != 0) {
    throw ConfigError("config key 'model.token_width': must divide the last stage width " +
                      std::to_string(v.latent_width()));
  }
  if (model.tabular_heads == 0 || v.token_width % model.tabular_heads != 0) {
    throw ConfigError("config key 'model.tabular_heads': must divide token_width");
  }
  if (model.fusion_heads == 0 || v.token_width % model.fusion_heads != 0) {
    throw ConfigError("config key 'model.fusion_heads': must divide token_width");
  }
  if ((data.height >> v.stage_widths.size()) == 0 || (data.width >> v.stage_widths.size()) == 0) {
    throw ConfigError("config key 'data.height': image too small for the number of vision stages");
  }
  if (model.ffn_mult == 0) throw ConfigError("config key 'model.ffn_mult': must be >= 1");
  if (model.mlp_width == 0) throw ConfigError("config key 'model.mlp_width': must be >= 1");
  if (train.batch_size == 0) throw ConfigError("config key 'train.batch_size': must be >= 1");
  if (train.max_epochs == 0) throw ConfigError("config key 'train.epochs': must be >= 1");
  check_positive("train.learning_rate", train.learning_rate);
  check_positive("train.unimodal_lr_divisor", train.unimodal_lr_divisor);
  if (!(train.schedule.plateau_factor > 1.0)) throw ConfigError("config key 'train.plateau_factor': must be > 1");
  if (train.schedule.plateau_patience == 0) throw ConfigError("config key 'train.plateau_patience': must be >= 1");
  if (train.schedule.early_stop_patience == 0) {
    throw ConfigError("config key 'train.early_stop_patience': must be >= 1");
  }
  if (!(train.weight_decay >= 0.0)) throw ConfigError("config key 'train.weight_decay': must be >= 0");
  if (!(train.grad_clip >= 0.0)) throw ConfigError("config key 'train.grad_clip': must be >= 0");
  if (stress.folds < 2) throw ConfigError("config key 'stress.folds': must be >= 2");
  if (stress.fold_limit > stress.folds) throw ConfigError("config key 'stress.fold_limit': exceeds folds");
  if (stress.threads == 0) throw ConfigError("config key 'stress.threads': must be >= 1");
  if (!(stress.validation_share > 0.0 && stress.validation_share < 1.0)) {
    throw ConfigError("config key 'stress.validation_share': must be in (0, 1)");
  }
  check_rates("stress.train_rates", stress.train_rates, kTrainMissingnessCap);
  check_rates("stress.test_rates", stress.test_rates, 1.0);
  if (stress.methods.empty()) throw ConfigError("config key 'stress.methods': at least one method required");
  for (const auto& m : stress.methods) {
    if (!is_known_strategy(m)) throw ConfigError("config key 'stress.methods': unknown strategy '" + m + "'");
  }
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  const auto& s = cfg.train.schedule;
  return {{"data", to_json(cfg.data)},
          {"model",
           {{"stage_widths", cfg.model.vision.stage_widths},
            {"token_width", cfg.model.vision.token_width},
            {"tabular_layers", cfg.model.tabular_layers},
            {"tabular_heads", cfg.model.tabular_heads},
            {"fusion_layers", cfg.model.fusion_layers},
            {"fusion_heads", cfg.model.fusion_heads},
            {"ffn_mult", cfg.model.ffn_mult},
            {"mlp_layers", cfg.model.mlp_layers},
            {"mlp_width", cfg.model.mlp_width}}},
          {"train",
           {{"batch_size", cfg.train.batch_size},
            {"epochs", cfg.train.max_epochs},
            {"learning_rate", cfg.train.learning_rate},
            {"warmup_epochs", s.warmup_epochs},
            {"plateau_patience", s.plateau_patience},
            {"plateau_factor", s.plateau_factor},
            {"early_stop_patience", s.early_stop_patience},
            {"dropout_r", cfg.train.dropout_rate},
            {"dropout_image_share", cfg.train.dropout_image_share},
            {"unimodal_lr_divisor", cfg.train.unimodal_lr_divisor},
            {"weight_decay", cfg.train.weight_decay},
            {"grad_clip", cfg.train.grad_clip},
            {"augment", cfg.train.augment}}},
          {"stress",
           {{"folds", cfg.stress.folds},
            {"fold_limit", cfg.stress.fold_limit},
            {"train_rates", cfg.stress.train_rates},
            {"test_rates", cfg.stress.test_rates},
            {"methods", cfg.stress.methods},
            {"nested", cfg.stress.nested},
            {"threads", cfg.stress.threads},
            {"validation_share", cfg.stress.validation_share}}}};
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  cfg.data.height = 224;
  cfg.data.width = 224;
  cfg.data.classes = 14;
  cfg.data.features = clinical_features().size();
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: malformed file at line " + std::to_string(e.line()) + ": " + e.message());
  }
  const auto& table = setters();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("config key '" + section + "': keys must live inside a [section]");
    }
    auto sec = table.find(section);
    if (sec == table.end()) throw ConfigError("config: unknown section [" + section + "]");
    for (const auto& [key, node] : body) {
      auto it = sec->second.find(key);
      if (it == sec->second.end()) throw ConfigError("config: unknown key '" + section + "." + key + "'");
      it->second(cfg, section + "." + key, node.data());
    }
  }
  cfg.model.vision.height = cfg.data.height;
  cfg.model.vision.width = cfg.data.width;
  cfg.model.classes = cfg.data.classes;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config: file not found: " + path.string());
  return parse_config(read_file(path));
}

}  // namespace maskfuse
