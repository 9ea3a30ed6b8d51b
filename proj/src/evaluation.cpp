#include "maskfuse/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maskfuse/errors.hpp"

namespace maskfuse {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw ShapeError("roc_auc: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // twice the Mann-Whitney U: 2 per strict win, 1 per tie
  std::uint64_t u2 = 0, pos = 0, neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::uint64_t p = 0, n = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (std::isnan(scores[order[j]])) throw NumericalError("roc_auc: NaN score");
      (labels[order[j]] != 0.0 ? p : n) += 1;
      ++j;
    }
    u2 += 2 * p * neg + p * n;
    pos += p;
    neg += n;
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.classes) {
    nlohmann::json j{{"name", c.name}, {"positives", c.positives}, {"negatives", c.negatives},
                     {"weight", c.weight}};
    j["auc"] = c.auc ? nlohmann::json(*c.auc) : nlohmann::json(nullptr);
    if (!c.excluded.empty()) j["excluded"] = c.excluded;
    classes.push_back(std::move(j));
  }
  return {{"weighted_auc", r.weighted_auc}, {"samples", r.samples}, {"classes", classes}};
}

EvalReport weighted_auc(const LabelMatrix& scores, const LabelMatrix& labels, const LabelMatrix& masks,
                        const std::vector<std::string>& class_names) {
  if (scores.size() != labels.size() || scores.size() != masks.size()) {
    throw ShapeError("weighted_auc: scores, labels and masks differ in length");
  }
  if (scores.empty()) throw PreconditionError("weighted_auc: no samples");
  const std::size_t C = scores.front().size();
  EvalReport report;
  report.samples = scores.size();
  double total_positives = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    ClassAuc ca;
    ca.name = c < class_names.size() ? class_names[c] : "class_" + std::to_string(c);
    std::vector<double> s, y;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i].size() != C || labels[i].size() != C || masks[i].size() != C) {
        throw ShapeError("weighted_auc: row " + std::to_string(i) + " has the wrong width");
      }
      if (masks[i][c] == 0.0) continue;
      s.push_back(scores[i][c]);
      y.push_back(labels[i][c]);
      (labels[i][c] != 0.0 ? ca.positives : ca.negatives) += 1;
    }
    ca.auc = roc_auc(s, y);
    if (!ca.auc) {
      ca.excluded = ca.positives == 0 ? "no observed positives" : "no observed negatives";
    } else {
      total_positives += static_cast<double>(ca.positives);
    }
    report.classes.push_back(std::move(ca));
  }
  if (total_positives == 0.0) throw PreconditionError("weighted_auc: every class has an undefined AUC");
  for (auto& ca : report.classes) {
    if (!ca.auc) continue;
    ca.weight = static_cast<double>(ca.positives) / total_positives;
    report.weighted_auc += ca.weight * *ca.auc;
  }
  return report;
}

MeanStderr mean_stderr(std::span<const double> values) {
  if (values.empty()) throw PreconditionError("mean_stderr: no values");
  MeanStderr out;
  const double n = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return out;
}

ScoredSet score_samples(const Model& model, std::span<const Sample> samples) {
  ScoredSet out;
  for (const auto& s : samples) {
    if (!model.accepts(s.masks)) continue;
    out.scores.push_back(model.predict(s).probabilities);
    out.labels.push_back(s.labels);
    out.masks.push_back(s.masks.labels);
  }
  if (out.scores.empty()) {
    throw PreconditionError("evaluate: " + model.strategy() + " accepts none of the samples");
  }
  return out;
}

EvalReport evaluate_model(const Model& model, std::span<const Sample> samples,
                          const std::vector<std::string>& class_names) {
  const ScoredSet set = score_samples(model, samples);
  return weighted_auc(set.scores, set.labels, set.masks, class_names);
}

std::vector<ModalityMass> modality_attribution(const MaskedFusionModel& model,
                                               std::span<const Sample> samples) {
  const std::size_t n_vis = model.config().vision.tokens();
  std::vector<ModalityMass> total(model.fusion_stack().size());
  std::size_t counted = 0;
  for (const auto& s : samples) {
    if (!s.masks.admissible()) throw PreconditionError("attribution: inadmissible sample " + std::to_string(s.id));
    AttentionTrace trace;
    model.encode(s, s.masks, &trace);
    std::vector<double> avail(n_vis, s.masks.image);
    avail.insert(avail.end(), s.masks.tabular.begin(), s.masks.tabular.end());
    for (std::size_t l = 0; l < trace.layers.size(); ++l) {
      double vis = 0.0, tab = 0.0;
      for (const auto& head : trace.layers[l]) {
        const std::size_t L = head.length;
        for (std::size_t q = 0; q < L; ++q) {
          if (avail[q] == 0.0) continue;
          for (std::size_t k = 0; k < L; ++k) (k < n_vis ? vis : tab) += head.weights[q * L + k];
        }
      }
      const double mass = vis + tab;
      if (mass > 0.0) {
        total[l].vision += vis / mass;
        total[l].tabular += tab / mass;
      }
    }
    ++counted;
  }
  if (counted > 0) {
    for (auto& m : total) {
      m.vision /= static_cast<double>(counted);
      m.tabular /= static_cast<double>(counted);
    }
  }
  return total;
}

}  // namespace maskfuse
