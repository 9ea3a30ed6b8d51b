#include "maskfuse/model.hpp"

#include "maskfuse/errors.hpp"

namespace maskfuse {

void ModelConfig::validate() const {
  vision.validate();
  schema.validate();
  if (classes == 0) throw PreconditionError("model: at least one class required");
  const std::size_t d = token_width();
  if (tabular_heads == 0 || d % tabular_heads != 0) {
    throw PreconditionError("model: token width " + std::to_string(d) +
                            " not divisible by tabular heads " + std::to_string(tabular_heads));
  }
  if (fusion_heads == 0 || d % fusion_heads != 0) {
    throw PreconditionError("model: token width " + std::to_string(d) +
                            " not divisible by fusion heads " + std::to_string(fusion_heads));
  }
  if (ffn_mult == 0) throw PreconditionError("model: ffn multiplier must be >= 1");
  if (mlp_width == 0) throw PreconditionError("model: mlp width must be >= 1");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  nlohmann::json features = nlohmann::json::array();
  for (const auto& f : cfg.schema.features) {
    features.push_back({{"name", f.name},
                        {"kind", f.kind == FeatureKind::categorical ? "categorical" : "numerical"},
                        {"categories", f.categories}});
  }
  return {{"vision",
           {{"height", cfg.vision.height},
            {"width", cfg.vision.width},
            {"channels", cfg.vision.channels},
            {"stage_widths", cfg.vision.stage_widths},
            {"token_width", cfg.vision.token_width}}},
          {"features", features},
          {"classes", cfg.classes},
          {"tabular_layers", cfg.tabular_layers},
          {"tabular_heads", cfg.tabular_heads},
          {"fusion_layers", cfg.fusion_layers},
          {"fusion_heads", cfg.fusion_heads},
          {"ffn_mult", cfg.ffn_mult},
          {"mlp_layers", cfg.mlp_layers},
          {"mlp_width", cfg.mlp_width}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  const auto& v = j.at("vision");
  cfg.vision.height = v.at("height");
  cfg.vision.width = v.at("width");
  cfg.vision.channels = v.at("channels");
  cfg.vision.stage_widths = v.at("stage_widths").get<std::vector<std::size_t>>();
  cfg.vision.token_width = v.at("token_width");
  for (const auto& f : j.at("features")) {
    FeatureSpec spec;
    spec.name = f.at("name");
    spec.kind = f.at("kind") == "categorical" ? FeatureKind::categorical : FeatureKind::numerical;
    spec.categories = f.at("categories");
    cfg.schema.features.push_back(spec);
  }
  cfg.classes = j.at("classes");
  cfg.tabular_layers = j.at("tabular_layers");
  cfg.tabular_heads = j.at("tabular_heads");
  cfg.fusion_layers = j.at("fusion_layers");
  cfg.fusion_heads = j.at("fusion_heads");
  cfg.ffn_mult = j.at("ffn_mult");
  cfg.mlp_layers = j.at("mlp_layers");
  cfg.mlp_width = j.at("mlp_width");
  return cfg;
}

VisionEncoder init_vision_encoder(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init.vision"));
  return VisionEncoder::init(cfg.vision, rng);
}

TabularEncoderParams init_tabular_encoder(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init.tabular"));
  TabularEncoderParams p;
  p.tables = EmbeddingTables::init(cfg.schema, cfg.token_width(), rng);
  p.stack = init_stack(cfg.tabular_layers, cfg.token_width(), cfg.tabular_heads, cfg.ffn_mult, rng);
  return p;
}

Prediction Model::predict(const Sample& sample, const SampleMasks& masks) const {
  Tensor p = forward(sample, masks);
  return {p.data()};
}

Tensor classify(const Tensor& z, const Linear& head) {
  Tensor flat = reshape(z, {1, z.numel()});
  return clamp(sigmoid(head(flat)), kProbabilityClamp, 1.0 - kProbabilityClamp);
}

Tensor fuse_forward(const Tensor& image_tokens, const Tensor& tabular_tokens,
                    const CompositeMask& mask, const EncoderStack& stack, AttentionTrace* trace) {
  if (image_tokens.dim(0) != mask.vision_tokens ||
      tabular_tokens.dim(0) + mask.vision_tokens != mask.size()) {
    throw ShapeError("fuse_forward: tokens " + shape_str(image_tokens.shape()) + " + " +
                     shape_str(tabular_tokens.shape()) + " vs composite mask of length " +
                     std::to_string(mask.size()));
  }
  bool any = false;
  for (double m : mask.values) any = any || m != 0.0;
  if (!any) throw PreconditionError("fuse_forward: no modality available");
  const Tensor parts[] = {image_tokens, tabular_tokens};
  return masked_encoder_stack(concat(parts, 0), stack, mask.values, trace);
}

// ---- unimodal predictors ----------------------------------------------------------

VisionPredictor VisionPredictor::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  VisionPredictor p;
  p.encoder_ = init_vision_encoder(cfg, seed);
  Rng rng(derive_seed(seed, "init.vision_head"));
  p.head_ = Linear::init(cfg.vision.latent_width(), cfg.classes, rng);
  return p;
}

Tensor VisionPredictor::forward(const Sample& sample, const SampleMasks& masks,
                                AttentionTrace*) const {
  if (!masks.has_image()) throw PreconditionError("vision predictor: sample has no image");
  Tensor latent = encoder_.latent(encoder_.image_tensor(sample.image));
  return classify(latent, head_);
}

ParameterList VisionPredictor::parameters() const {
  ParameterList out;
  encoder_.append(out, "vision");
  head_.append(out, "vision_head", ParamGroup::head);
  return out;
}

TabularPredictor TabularPredictor::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  TabularPredictor p;
  auto enc = init_tabular_encoder(cfg, seed);
  p.tables_ = std::move(enc.tables);
  p.stack_ = std::move(enc.stack);
  Rng rng(derive_seed(seed, "init.tabular_head"));
  p.head_ = Linear::init(cfg.schema.size() * cfg.token_width(), cfg.classes, rng);
  return p;
}

Tensor TabularPredictor::forward(const Sample& sample, const SampleMasks& masks,
                                 AttentionTrace* trace) const {
  if (!masks.has_tabular()) throw PreconditionError("tabular predictor: sample has no features");
  Tensor tokens = embed_tabular(sample.tabular, masks.tabular, tables_);
  return classify(masked_encoder_stack(tokens, stack_, masks.tabular, trace), head_);
}

ParameterList TabularPredictor::parameters() const {
  ParameterList out;
  tables_.append(out, "tabular.embedding");
  append_stack(stack_, out, "tabular.encoder", ParamGroup::tabular);
  head_.append(out, "tabular_head", ParamGroup::head);
  return out;
}

// ---- fusion model -------------------------------------------------------------

MaskedFusionModel MaskedFusionModel::init(const ModelConfig& cfg, std::uint64_t seed,
                                          std::string strategy) {
  cfg.validate();
  MaskedFusionModel m;
  m.cfg_ = cfg;
  m.strategy_ = std::move(strategy);
  m.vision_ = init_vision_encoder(cfg, seed);
  auto enc = init_tabular_encoder(cfg, seed);
  m.tables_ = std::move(enc.tables);
  m.tabular_stack_ = std::move(enc.stack);
  const std::size_t d = cfg.token_width();
  m.image_token_ = Tensor::full({1, d}, 1.0, true);
  m.tabular_token_ = Tensor::full({1, d}, 1.0, true);
  Rng rng(derive_seed(seed, "init.fusion"));
  m.fusion_stack_ = init_stack(cfg.fusion_layers, d, cfg.fusion_heads, cfg.ffn_mult, rng);
  Rng head_rng(derive_seed(seed, "init.fusion_head"));
  m.head_ = Linear::init(cfg.fused_tokens() * d, cfg.classes, head_rng);
  return m;
}

MaskedFusionModel MaskedFusionModel::from_unimodal(const ModelConfig& cfg,
                                                   const VisionPredictor& vision,
                                                   const TabularPredictor& tabular,
                                                   std::uint64_t seed, std::string strategy) {
  MaskedFusionModel m = init(cfg, seed, std::move(strategy));
  m.vision_ = vision.encoder().clone();
  m.tables_ = tabular.tables().clone();
  m.tabular_stack_ = clone_stack(tabular.stack());
  return m;
}

Tensor MaskedFusionModel::encode(const Sample& sample, const SampleMasks& masks,
                                 AttentionTrace* trace) const {
  if (!masks.admissible()) {
    throw PreconditionError("model_forward: sample " + std::to_string(sample.id) +
                            " has no modality available");
  }
  Tensor image_tokens = vision_encoder_forward(sample.image, masks.image, vision_, image_token_);
  Tensor tokens = embed_tabular(sample.tabular, masks.tabular, tables_);
  Tensor tabular_tokens =
      tabular_encoder_forward(tokens, masks.tabular, tabular_stack_, tabular_token_);
  const CompositeMask mask =
      build_composite_mask(masks.image, masks.tabular, cfg_.vision.tokens());
  return fuse_forward(image_tokens, tabular_tokens, mask, fusion_stack_, trace);
}

Tensor MaskedFusionModel::forward(const Sample& sample, const SampleMasks& masks,
                                  AttentionTrace* trace) const {
  return classify(encode(sample, masks, trace), head_);
}

ParameterList MaskedFusionModel::parameters() const {
  ParameterList out;
  vision_.append(out, "vision");
  tables_.append(out, "tabular.embedding");
  append_stack(tabular_stack_, out, "tabular.encoder", ParamGroup::tabular);
  out.push_back({"fusion.image_token", ParamGroup::fusion, image_token_, {}});
  out.push_back({"fusion.tabular_token", ParamGroup::fusion, tabular_token_, {}});
  append_stack(fusion_stack_, out, "fusion.encoder", ParamGroup::fusion);
  head_.append(out, "fusion_head", ParamGroup::head);
  return out;
}

}  // namespace maskfuse
