#include "maskfuse/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "maskfuse/baselines.hpp"
#include "maskfuse/errors.hpp"
#include "maskfuse/rng.hpp"

namespace maskfuse {

// ---- loss ----------------------------------------------------------------------

Tensor masked_bce(const Tensor& probs, std::span<const double> targets,
                  std::span<const double> label_mask) {
  const std::size_t n = probs.numel();
  if (targets.size() != n || label_mask.size() != n) {
    throw ShapeError("masked_bce: " + std::to_string(n) + " predictions, " +
                     std::to_string(targets.size()) + " targets, " +
                     std::to_string(label_mask.size()) + " mask bits");
  }
  double observed = 0.0;
  for (double m : label_mask) observed += m;
  if (!(observed > 0.0)) throw PreconditionError("masked_bce: batch has no observed label");

  const auto& p = probs.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (label_mask[i] == 0.0) continue;
    const double y = targets[i];
    total += label_mask[i] * (y * std::log(p[i]) + (1.0 - y) * std::log(1.0 - p[i]));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = {1};
  node->value = {-total / observed};
  if (probs.requires_grad()) {
    node->requires_grad = true;
    node->parents = {probs.node()};
    node->backward = [y = std::vector<double>(targets.begin(), targets.end()),
                      m = std::vector<double>(label_mask.begin(), label_mask.end()),
                      observed](const detail::Node& self, const std::vector<double>& g,
                                std::span<std::vector<double>*> pg) {
      if (!pg[0]) return;
      const auto& p = self.parents[0]->value;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (m[i] == 0.0) continue;
        (*pg[0])[i] += -g[0] * m[i] * (y[i] / p[i] - (1.0 - y[i]) / (1.0 - p[i])) / observed;
      }
    };
  }
  return Tensor::wrap(std::move(node));
}

// ---- optimizer -------------------------------------------------------------------

void AdamW::step(const ParameterList& params, const Gradients& grads, const GroupRates& rates) {
  for (const auto& p : params) {
    if (rates.is_frozen(p.group)) continue;
    const Tensor grad = grads.of(p.tensor);
    const auto& g = grad.data();
    for (double x : g) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient in parameter '" + p.name + "'");
    }
    auto& st = state_[p.name];
    if (st.m.empty()) {
      st.m.assign(g.size(), 0.0);
      st.v.assign(g.size(), 0.0);
    }
    ++st.t;
    const double lr = rates.rate(p.group);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t));

    std::vector<bool> pinned(g.size(), false);
    if (!p.frozen_rows.empty()) {
      const std::size_t width = p.tensor.rank() == 2 ? p.tensor.dim(1) : g.size();
      for (auto r : p.frozen_rows)
        for (std::size_t j = 0; j < width; ++j) pinned[r * width + j] = true;
    }
    Tensor leaf = p.tensor;
    auto w = leaf.mutable_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (pinned[i]) continue;
      w[i] -= lr * cfg_.weight_decay * w[i];
      st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g[i];
      st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double m_hat = st.m[i] / bc1;
      const double v_hat = st.v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

// ---- schedule ----------------------------------------------------------------------

ScheduleState schedule_step(ScheduleState s, double val_loss, const ScheduleConfig& cfg) {
  ++s.epoch;
  if (s.epoch <= cfg.warmup_epochs) return s;
  if (val_loss < s.best) {
    s.best = val_loss;
    s.plateau_count = 0;
    s.stale_count = 0;
    return s;
  }
  ++s.plateau_count;
  ++s.stale_count;
  if (s.plateau_count >= cfg.plateau_patience) {
    s.lr /= cfg.plateau_factor;
    s.plateau_count = 0;
    ++s.reductions;
  }
  if (s.stale_count >= cfg.early_stop_patience) s.stop = true;
  return s;
}

// ---- fit -------------------------------------------------------------------------

nlohmann::json to_json(const EpochRecord& rec) {
  return {{"epoch", rec.epoch},
          {"train_loss", rec.train_loss},
          {"val_loss", rec.val_loss},
          {"lr",
           {{"vision", rec.lr[0]}, {"tabular", rec.lr[1]}, {"fusion", rec.lr[2]}, {"head", rec.lr[3]}}},
          {"plateau_count", rec.plateau_count},
          {"stale_count", rec.stale_count},
          {"reductions", rec.reductions},
          {"dropped", rec.dropped}};
}

std::string TrainResult::log_lines() const {
  std::string out;
  for (const auto& rec : log) out += to_json(rec).dump() + "\n";
  return out;
}

namespace {

struct BatchLoss {
  Tensor loss;
  bool empty = true;
};

BatchLoss batch_loss(const Model& model, std::span<const Sample* const> batch,
                     std::span<const SampleMasks> masks, std::span<const std::vector<double>> images) {
  std::vector<Tensor> rows;
  std::vector<double> targets, label_mask;
  double observed = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (double m : batch[i]->masks.labels) observed += m;
  }
  if (observed == 0.0) return {};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Sample& s = *batch[i];
    if (!images.empty() && !images[i].empty()) {
      Sample augmented = s;
      augmented.image = images[i];
      rows.push_back(model.forward(augmented, masks[i]));
    } else {
      rows.push_back(model.forward(s, masks[i]));
    }
    targets.insert(targets.end(), s.labels.begin(), s.labels.end());
    label_mask.insert(label_mask.end(), s.masks.labels.begin(), s.masks.labels.end());
  }
  Tensor probs = concat(rows, 0);
  return {masked_bce(probs, targets, label_mask), false};
}

void clip_gradients(Gradients& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (norm > max_norm) grads.scale_all(max_norm / norm);
}

}  // namespace

double evaluate_loss(const Model& model, std::span<const Sample> samples) {
  std::vector<const Sample*> batch;
  std::vector<SampleMasks> masks;
  for (const auto& s : samples) {
    if (!model.accepts(s.masks)) continue;
    batch.push_back(&s);
    masks.push_back(s.masks);
  }
  if (batch.empty()) throw PreconditionError("evaluate_loss: no admissible samples");
  // Chunked forward keeps graphs small; the loss is recombined by observed count.
  double total = 0.0, observed = 0.0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const std::size_t end = std::min(batch.size(), start + chunk);
    std::span<const Sample* const> part(batch.data() + start, end - start);
    std::span<const SampleMasks> part_masks(masks.data() + start, end - start);
    double obs = 0.0;
    for (const auto* s : part)
      for (double m : s->masks.labels) obs += m;
    auto bl = batch_loss(model, part, part_masks, {});
    if (bl.empty) continue;
    total += bl.loss.item() * obs;
    observed += obs;
  }
  if (observed == 0.0) throw PreconditionError("evaluate_loss: no observed labels");
  return total / observed;
}

TrainResult fit(Model& model, std::span<const Sample> train, std::span<const Sample> val,
                const TrainConfig& cfg, const FitOptions& options) {
  std::vector<const Sample*> pool;
  for (const auto& s : train) {
    if (model.accepts(s.masks)) pool.push_back(&s);
  }
  if (pool.empty()) throw PreconditionError("fit: empty training set for " + model.strategy());
  if (cfg.batch_size == 0) throw PreconditionError("fit: batch size must be >= 1");
  DropoutPolicy policy{cfg.dropout_rate, cfg.dropout_image_share};
  policy.validate();

  const ParameterList params = model.parameters();
  AdamW optimizer(AdamWConfig{.weight_decay = cfg.weight_decay});
  ScheduleState schedule;
  schedule.lr = cfg.learning_rate;

  const bool augment = cfg.augment && options.image_height > 0 && options.image_width > 0;
  TrainResult result;
  ParameterList best = snapshot(params);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    Rng order_rng(derive_seed(options.seed, "batches", 0, epoch));
    Rng dropout_rng(derive_seed(options.seed, "dropout", 0, epoch));
    Rng augment_rng(derive_seed(options.seed, "augment", 0, epoch));
    std::vector<const Sample*> order = pool;
    order_rng.shuffle(order);

    GroupRates rates;
    for (std::size_t g = 0; g < 4; ++g) {
      rates.lr[g] = schedule.lr * options.lr_multiplier[g];
      rates.frozen[g] = options.frozen[g];
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = rates.lr;
    double loss_sum = 0.0, loss_weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const Sample* const> batch(order.data() + start, end - start);
      std::vector<SampleMasks> masks;
      std::vector<std::vector<double>> images(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const Sample& s = *batch[i];
        if (options.modality_dropout) {
          auto outcome = apply_modality_dropout(s.masks, policy, dropout_rng);
          if (outcome.dropped != DroppedModality::none) ++rec.dropped;
          masks.push_back(std::move(outcome.masks));
        } else {
          masks.push_back(s.masks);
        }
        if (augment && s.masks.has_image()) images[i] = s.image;
      }
      for (auto& img : images) {
        if (!img.empty()) img = augment_image(img, options.image_height, options.image_width, augment_rng);
      }
      auto bl = batch_loss(model, batch, masks, images);
      if (bl.empty) continue;
      const double value = bl.loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("fit: non-finite training loss at epoch " + std::to_string(epoch));
      }
      Gradients grads = backward(bl.loss);
      if (cfg.grad_clip > 0.0) clip_gradients(grads, cfg.grad_clip);
      optimizer.step(params, grads, rates);
      double obs = 0.0;
      for (const auto* s : batch)
        for (double m : s->masks.labels) obs += m;
      loss_sum += value * obs;
      loss_weight += obs;
    }
    rec.train_loss = loss_weight > 0.0 ? loss_sum / loss_weight : 0.0;
    rec.val_loss = evaluate_loss(model, val);
    if (!std::isfinite(rec.val_loss)) {
      throw NumericalError("fit: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    if (rec.val_loss < result.best_val_loss) {
      result.best_val_loss = rec.val_loss;
      result.best_epoch = epoch;
      best = snapshot(params);
    }
    schedule = schedule_step(schedule, rec.val_loss, cfg.schedule);
    rec.plateau_count = schedule.plateau_count;
    rec.stale_count = schedule.stale_count;
    rec.reductions = schedule.reductions;
    result.log.push_back(rec);
    if (schedule.stop) {
      result.early_stopped = true;
      break;
    }
  }
  restore(params, best);
  return result;
}

// ---- orchestration -------------------------------------------------------------------

bool is_known_strategy(const std::string& s) {
  return s == "masked" || s == "early" || s == "zeros" || s == "maxpool" ||
         s == "model-selection" || s == "late";
}

UnimodalResult train_unimodal(const TrainConfig& cfg, const ModelConfig& model_cfg,
                              std::span<const Sample> train, std::span<const Sample> val,
                              Modality modality, std::uint64_t seed,
                              const nlohmann::json& metadata) {
  if (train.empty()) throw PreconditionError("train_unimodal: empty training fold");
  const bool vision = modality == Modality::vision;
  const bool any = std::any_of(train.begin(), train.end(), [&](const Sample& s) {
    return vision ? s.masks.has_image() : s.masks.has_tabular();
  });
  if (!any) {
    throw PreconditionError(std::string("train_unimodal: no training sample carries the ") +
                            (vision ? "image" : "tabular") + " modality");
  }
  FitOptions options;
  options.seed = derive_seed(seed, vision ? "train.vision" : "train.tabular");
  options.image_height = model_cfg.vision.height;
  options.image_width = model_cfg.vision.width;
  UnimodalResult out;
  if (vision) {
    auto model = VisionPredictor::init(model_cfg, seed);
    out.training = fit(model, train, val, cfg, options);
    out.checkpoint = make_checkpoint(model, model_cfg, seed, metadata);
  } else {
    auto model = TabularPredictor::init(model_cfg, seed);
    out.training = fit(model, train, val, cfg, options);
    out.checkpoint = make_checkpoint(model, model_cfg, seed, metadata);
  }
  return out;
}

FinetuneResult finetune_multimodal(const TrainConfig& cfg, const std::string& strategy,
                                   const Checkpoint& vision_ckpt, const Checkpoint& tabular_ckpt,
                                   std::span<const Sample> train, std::span<const Sample> val,
                                   std::uint64_t seed) {
  if (!is_known_strategy(strategy)) {
    throw PreconditionError("finetune: unknown strategy '" + strategy + "'");
  }
  if (vision_ckpt.metadata != tabular_ckpt.metadata) {
    throw PreconditionError("finetune: fold mismatch between vision checkpoint " +
                            vision_ckpt.metadata.dump() + " and tabular checkpoint " +
                            tabular_ckpt.metadata.dump());
  }
  const ModelConfig model_cfg = model_config_from_json(vision_ckpt.model_config);
  if (to_json(model_cfg) != tabular_ckpt.model_config) {
    throw PreconditionError("finetune: vision and tabular checkpoints disagree on model config");
  }
  const VisionPredictor vision = load_vision_predictor(vision_ckpt);
  const TabularPredictor tabular = load_tabular_predictor(tabular_ckpt);

  FitOptions options;
  options.seed = derive_seed(seed, "finetune." + strategy);
  const double reduced = 1.0 / cfg.unimodal_lr_divisor;
  options.lr_multiplier = {reduced, reduced, 1.0, 1.0};
  options.image_height = model_cfg.vision.height;
  options.image_width = model_cfg.vision.width;

  FinetuneResult out;
  if (strategy == "masked" || strategy == "early") {
    auto model = std::make_unique<MaskedFusionModel>(
        MaskedFusionModel::from_unimodal(model_cfg, vision, tabular, seed, strategy));
    options.modality_dropout = true;
    if (strategy == "early") options.frozen = {true, true, false, false};
    out.training = fit(*model, train, val, cfg, options);
    out.model = std::move(model);
  } else if (strategy == "zeros") {
    auto model = std::make_unique<ZerosFusionModel>(
        ZerosFusionModel::from_unimodal(model_cfg, vision, tabular, seed));
    out.training = fit(*model, train, val, cfg, options);
    out.model = std::move(model);
  } else if (strategy == "maxpool") {
    auto model = std::make_unique<MaxPoolFusionModel>(
        MaxPoolFusionModel::from_unimodal(model_cfg, vision, tabular, seed));
    out.training = fit(*model, train, val, cfg, options);
    out.model = std::move(model);
  } else if (strategy == "model-selection") {
    std::vector<Sample> paired_train, paired_val;
    for (const auto& s : train)
      if (s.masks.fully_paired()) paired_train.push_back(s);
    for (const auto& s : val)
      if (s.masks.fully_paired()) paired_val.push_back(s);
    if (paired_train.empty()) {
      throw PreconditionError("finetune: model selection needs fully paired training samples");
    }
    auto member = MaskedFusionModel::from_unimodal(model_cfg, vision, tabular, seed);
    out.training = fit(member, paired_train, paired_val.empty() ? std::span<const Sample>(val)
                                                                : std::span<const Sample>(paired_val),
                       cfg, options);
    out.model = std::make_unique<ModelSelectionBundle>(vision, tabular, std::move(member));
  } else {
    out.model = std::make_unique<LateFusionModel>(vision, tabular);
  }
  out.checkpoint = make_checkpoint(*out.model, model_cfg, seed, vision_ckpt.metadata);
  return out;
}

}  // namespace maskfuse
