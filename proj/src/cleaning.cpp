#include "maskfuse/cleaning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "maskfuse/errors.hpp"

namespace maskfuse {

void CleaningRules::validate() const {
  for (const auto& [name, r] : ranges) {
    if (!(r.low < r.high)) throw PreconditionError("cleaning: range for '" + name + "' needs low < high");
  }
  if (!(iqr_multiplier >= 0.0)) throw PreconditionError("cleaning: IQR multiplier must be >= 0");
}

CleaningRules CleaningRules::clinical_defaults() {
  CleaningRules rules;
  rules.ranges["temperature"] = {86.0, 113.0, "F"};
  rules.ranges["heart_rate"] = {25.0, 225.0, "bpm"};
  rules.ranges["respiration_rate"] = {7.0, 40.0, "brpm"};
  rules.ranges["oxygen_saturation"] = {50.0, 120.0, "%"};
  rules.iqr_features = {"systolic_pressure", "diastolic_pressure"};
  return rules;
}

double linear_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw PreconditionError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw PreconditionError("quantile level outside [0, 1]");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

TabularSchema CleaningModel::schema() const {
  TabularSchema out = raw_schema;
  for (std::size_t j = 0; j < out.features.size(); ++j) {
    if (out.features[j].kind == FeatureKind::categorical) {
      out.features[j].categories = std::max<std::size_t>(stats[j].vocabulary.size(), 1);
    }
  }
  return out;
}

nlohmann::json to_json(const CleaningModel& model) {
  nlohmann::json out = nlohmann::json::array();
  for (std::size_t j = 0; j < model.stats.size(); ++j) {
    const auto& s = model.stats[j];
    nlohmann::json f{{"name", model.raw_schema.features[j].name}};
    if (model.raw_schema.features[j].kind == FeatureKind::categorical) {
      f["vocabulary"] = s.vocabulary;
    } else {
      if (s.has_range) f["range"] = {s.range_low, s.range_high};
      if (s.has_fence) f["fence"] = {{"q1", s.q1}, {"q3", s.q3}, {"low", s.fence_low}, {"high", s.fence_high}};
      f["min"] = s.min;
      f["max"] = s.max;
    }
    out.push_back(std::move(f));
  }
  return out;
}

namespace {

enum class Verdict { keep, out_of_range, outside_fence };

Verdict judge(const FeatureStats& s, double x) {
  if (s.has_range && (x < s.range_low || x > s.range_high)) return Verdict::out_of_range;
  if (s.has_fence && (x < s.fence_low || x > s.fence_high)) return Verdict::outside_fence;
  return Verdict::keep;
}

}  // namespace

CleaningModel fit_cleaning(std::span<const Sample> train, const TabularSchema& schema,
                           const CleaningRules& rules) {
  rules.validate();
  schema.validate();
  if (train.empty()) throw PreconditionError("cleaning: no training rows to fit on");
  CleaningModel model;
  model.raw_schema = schema;
  model.stats.resize(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& feat = schema.features[j];
    auto& st = model.stats[j];
    std::vector<double> observed;
    for (const auto& s : train) {
      if (s.masks.tabular.at(j) != 0.0 && std::isfinite(s.tabular.at(j))) observed.push_back(s.tabular[j]);
    }
    std::sort(observed.begin(), observed.end());
    if (feat.kind == FeatureKind::categorical) {
      observed.erase(std::unique(observed.begin(), observed.end()), observed.end());
      st.vocabulary = std::move(observed);
      continue;
    }
    if (auto it = rules.ranges.find(feat.name); it != rules.ranges.end()) {
      st.has_range = true;
      st.range_low = it->second.low;
      st.range_high = it->second.high;
      std::erase_if(observed, [&](double x) { return x < st.range_low || x > st.range_high; });
    }
    if (rules.iqr_features.count(feat.name) && !observed.empty()) {
      st.has_fence = true;
      st.q1 = linear_quantile(observed, 0.25);
      st.q3 = linear_quantile(observed, 0.75);
      const double iqr = st.q3 - st.q1;
      st.fence_low = st.q1 - rules.iqr_multiplier * iqr;
      st.fence_high = st.q3 + rules.iqr_multiplier * iqr;
      std::erase_if(observed, [&](double x) { return x < st.fence_low || x > st.fence_high; });
    }
    if (!observed.empty()) {
      st.min = observed.front();
      st.max = observed.back();
    }
  }
  return model;
}

Sample filter_outliers(const Sample& raw, const CleaningModel& model, CleaningReport* report) {
  Sample out = raw;
  for (std::size_t j = 0; j < model.stats.size(); ++j) {
    if (model.raw_schema.features[j].kind != FeatureKind::numerical) continue;
    if (out.masks.tabular.at(j) == 0.0) continue;
    const double x = out.tabular.at(j);
    Verdict v = std::isfinite(x) ? judge(model.stats[j], x) : Verdict::out_of_range;
    if (v == Verdict::keep) continue;
    out.masks.tabular[j] = 0.0;
    if (report) ++(v == Verdict::out_of_range ? report->out_of_range : report->outside_fence);
  }
  return out;
}

Sample clean_sample(const Sample& raw, const CleaningModel& model, CleaningReport* report) {
  if (raw.tabular.size() != model.stats.size()) {
    throw ShapeError("clean: row has " + std::to_string(raw.tabular.size()) + " features, model expects " +
                     std::to_string(model.stats.size()));
  }
  Sample out = filter_outliers(raw, model, report);
  for (std::size_t j = 0; j < model.stats.size(); ++j) {
    const auto& st = model.stats[j];
    double& x = out.tabular[j];
    if (out.masks.tabular[j] == 0.0) {
      x = 0.0;
      continue;
    }
    if (model.raw_schema.features[j].kind == FeatureKind::categorical) {
      auto it = std::lower_bound(st.vocabulary.begin(), st.vocabulary.end(), x);
      if (it == st.vocabulary.end() || *it != x) {
        out.masks.tabular[j] = 0.0;
        x = 0.0;
        if (report) ++report->unseen_categories;
      } else {
        x = static_cast<double>(it - st.vocabulary.begin());
      }
    } else {
      x = st.max > st.min ? (x - st.min) / (st.max - st.min) : 0.0;
    }
  }
  return out;
}

std::vector<Sample> clean_clinical(std::span<const Sample> rows, const CleaningModel& model,
                                   CleaningReport* report) {
  std::vector<Sample> out;
  out.reserve(rows.size());
  for (const auto& r : rows) {
    Sample s = clean_sample(r, model, report);
    if (s.masks.admissible()) out.push_back(std::move(s));
    else if (report) ++report->dropped_rows;
  }
  return out;
}

}  // namespace maskfuse
