#include "maskfuse/baselines.hpp"

#include "maskfuse/errors.hpp"

namespace maskfuse {

namespace {

void prefix_into(ParameterList& out, ParameterList members, const std::string& prefix) {
  for (auto& p : members) {
    p.name = prefix + p.name;
    out.push_back(std::move(p));
  }
}

}  // namespace

Mlp Mlp::init(std::size_t in, std::size_t width, std::size_t layers, std::size_t classes,
              Rng& rng) {
  Mlp m;
  std::size_t fan_in = in;
  for (std::size_t l = 0; l < layers; ++l) {
    m.hidden.push_back(Linear::init(fan_in, width, rng));
    fan_in = width;
  }
  m.output = Linear::init(fan_in, classes, rng);
  return m;
}

Tensor Mlp::logits(const Tensor& x) const {
  Tensor h = x;
  for (const auto& layer : hidden) h = relu(layer(h));
  return output(h);
}

void Mlp::append(ParameterList& out, const std::string& prefix) const {
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    hidden[l].append(out, prefix + ".hidden" + std::to_string(l), ParamGroup::fusion);
  }
  output.append(out, prefix + ".output", ParamGroup::head);
}

Tensor mean_available_rows(const Tensor& tokens, std::span<const double> mask) {
  double count = 0.0;
  for (double m : mask) count += m != 0.0 ? 1.0 : 0.0;
  if (count == 0.0) throw PreconditionError("mean_available_rows: no available rows");
  std::vector<double> weights(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) weights[i] = mask[i] != 0.0 ? 1.0 / count : 0.0;
  return matmul(Tensor::row(std::move(weights)), tokens);
}

// ---- zeros --------------------------------------------------------------------

ZerosFusionModel ZerosFusionModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ZerosFusionModel m;
  m.cfg_ = cfg;
  m.vision_ = init_vision_encoder(cfg, seed);
  auto enc = init_tabular_encoder(cfg, seed);
  m.tables_ = std::move(enc.tables);
  m.tabular_stack_ = std::move(enc.stack);
  Rng rng(derive_seed(seed, "init.zeros_mlp"));
  m.mlp_ = Mlp::init(cfg.vision.latent_width() + cfg.token_width(), cfg.mlp_width, cfg.mlp_layers,
                     cfg.classes, rng);
  return m;
}

ZerosFusionModel ZerosFusionModel::from_unimodal(const ModelConfig& cfg,
                                                 const VisionPredictor& vision,
                                                 const TabularPredictor& tabular,
                                                 std::uint64_t seed) {
  ZerosFusionModel m = init(cfg, seed);
  m.vision_ = vision.encoder().clone();
  m.tables_ = tabular.tables().clone();
  m.tabular_stack_ = clone_stack(tabular.stack());
  return m;
}

Tensor ZerosFusionModel::compose_input(const Sample& sample, const SampleMasks& masks) const {
  if (!masks.admissible()) throw PreconditionError("zeros: sample has no modality available");
  Tensor image = masks.has_image() ? vision_.latent(vision_.image_tensor(sample.image))
                                   : Tensor::zeros({1, cfg_.vision.latent_width()});
  Tensor tab = Tensor::zeros({1, cfg_.token_width()});
  if (masks.has_tabular()) {
    Tensor tokens = embed_tabular(sample.tabular, masks.tabular, tables_);
    tab = mean_available_rows(masked_encoder_stack(tokens, tabular_stack_, masks.tabular),
                              masks.tabular);
  }
  const Tensor parts[] = {image, tab};
  return concat(parts, 1);
}

Tensor ZerosFusionModel::forward(const Sample& sample, const SampleMasks& masks,
                                 AttentionTrace*) const {
  Tensor logits = mlp_.logits(compose_input(sample, masks));
  return clamp(sigmoid(logits), kProbabilityClamp, 1.0 - kProbabilityClamp);
}

ParameterList ZerosFusionModel::parameters() const {
  ParameterList out;
  vision_.append(out, "vision");
  tables_.append(out, "tabular.embedding");
  append_stack(tabular_stack_, out, "tabular.encoder", ParamGroup::tabular);
  mlp_.append(out, "zeros_mlp");
  return out;
}

// ---- max pooling ----------------------------------------------------------------

Tensor maxpool_fuse(std::span<const Tensor> latents) {
  if (latents.empty()) throw PreconditionError("maxpool_fuse: no latents available");
  Tensor out = latents[0];
  for (std::size_t i = 1; i < latents.size(); ++i) out = maximum(out, latents[i]);
  return out;
}

MaxPoolFusionModel MaxPoolFusionModel::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  MaxPoolFusionModel m;
  m.cfg_ = cfg;
  m.vision_ = init_vision_encoder(cfg, seed);
  auto enc = init_tabular_encoder(cfg, seed);
  m.tables_ = std::move(enc.tables);
  m.tabular_stack_ = std::move(enc.stack);
  Rng rng(derive_seed(seed, "init.maxpool"));
  const std::size_t d = cfg.token_width();
  m.vision_projection_ = Linear::init(cfg.vision.latent_width(), d, rng);
  m.tabular_projection_ = Linear::init(d, d, rng);
  m.mlp_ = Mlp::init(d, cfg.mlp_width, cfg.mlp_layers, cfg.classes, rng);
  return m;
}

MaxPoolFusionModel MaxPoolFusionModel::from_unimodal(const ModelConfig& cfg,
                                                     const VisionPredictor& vision,
                                                     const TabularPredictor& tabular,
                                                     std::uint64_t seed) {
  MaxPoolFusionModel m = init(cfg, seed);
  m.vision_ = vision.encoder().clone();
  m.tables_ = tabular.tables().clone();
  m.tabular_stack_ = clone_stack(tabular.stack());
  return m;
}

Tensor MaxPoolFusionModel::forward(const Sample& sample, const SampleMasks& masks,
                                   AttentionTrace*) const {
  if (!masks.admissible()) throw PreconditionError("maxpool: sample has no modality available");
  std::vector<Tensor> latents;
  if (masks.has_image()) {
    latents.push_back(vision_projection_(vision_.latent(vision_.image_tensor(sample.image))));
  }
  if (masks.has_tabular()) {
    Tensor tokens = embed_tabular(sample.tabular, masks.tabular, tables_);
    latents.push_back(tabular_projection_(mean_available_rows(
        masked_encoder_stack(tokens, tabular_stack_, masks.tabular), masks.tabular)));
  }
  Tensor logits = mlp_.logits(maxpool_fuse(latents));
  return clamp(sigmoid(logits), kProbabilityClamp, 1.0 - kProbabilityClamp);
}

ParameterList MaxPoolFusionModel::parameters() const {
  ParameterList out;
  vision_.append(out, "vision");
  tables_.append(out, "tabular.embedding");
  append_stack(tabular_stack_, out, "tabular.encoder", ParamGroup::tabular);
  vision_projection_.append(out, "maxpool.vision_projection", ParamGroup::fusion);
  tabular_projection_.append(out, "maxpool.tabular_projection", ParamGroup::fusion);
  mlp_.append(out, "maxpool_mlp");
  return out;
}

// ---- model selection -----------------------------------------------------------

ModelSelectionBundle::ModelSelectionBundle(VisionPredictor vision, TabularPredictor tabular,
                                           MaskedFusionModel multimodal)
    : vision_(std::move(vision)), tabular_(std::move(tabular)), multimodal_(std::move(multimodal)) {}

ModelSelectionBundle::Member ModelSelectionBundle::select(const SampleMasks& masks) {
  if (!masks.admissible()) throw PreconditionError("model selection: no modality available");
  if (!masks.has_tabular()) return Member::vision;
  if (!masks.has_image()) return Member::tabular;
  return Member::multimodal;
}

Tensor ModelSelectionBundle::forward(const Sample& sample, const SampleMasks& masks,
                                     AttentionTrace* trace) const {
  switch (select(masks)) {
    case Member::vision: return vision_.forward(sample, masks, trace);
    case Member::tabular: return tabular_.forward(sample, masks, trace);
    case Member::multimodal: return multimodal_.forward(sample, masks, trace);
  }
  throw PreconditionError("model selection: unreachable");
}

ParameterList ModelSelectionBundle::parameters() const {
  ParameterList out;
  prefix_into(out, vision_.parameters(), "member.vision/");
  prefix_into(out, tabular_.parameters(), "member.tabular/");
  prefix_into(out, multimodal_.parameters(), "member.multimodal/");
  return out;
}

// ---- late fusion ------------------------------------------------------------------

Prediction late_fusion_predict(const std::optional<Prediction>& vision,
                               const std::optional<Prediction>& tabular) {
  if (!vision && !tabular) throw PreconditionError("late fusion: no prediction available");
  if (!vision) return *tabular;
  if (!tabular) return *vision;
  if (vision->probabilities.size() != tabular->probabilities.size()) {
    throw ShapeError("late fusion: prediction widths differ");
  }
  Prediction out;
  out.probabilities.resize(vision->probabilities.size());
  for (std::size_t c = 0; c < out.probabilities.size(); ++c) {
    out.probabilities[c] = (vision->probabilities[c] + tabular->probabilities[c]) / 2.0;
  }
  return out;
}

LateFusionModel::LateFusionModel(VisionPredictor vision, TabularPredictor tabular)
    : vision_(std::move(vision)), tabular_(std::move(tabular)) {}

Tensor LateFusionModel::forward(const Sample& sample, const SampleMasks& masks,
                                AttentionTrace*) const {
  if (!masks.admissible()) throw PreconditionError("late fusion: no modality available");
  if (!masks.has_tabular()) return vision_.forward(sample, masks);
  if (!masks.has_image()) return tabular_.forward(sample, masks);
  return scale(add(vision_.forward(sample, masks), tabular_.forward(sample, masks)), 0.5);
}

ParameterList LateFusionModel::parameters() const {
  ParameterList out;
  prefix_into(out, vision_.parameters(), "member.vision/");
  prefix_into(out, tabular_.parameters(), "member.tabular/");
  return out;
}

}  // namespace maskfuse
