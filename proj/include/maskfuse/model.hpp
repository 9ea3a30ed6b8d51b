#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "maskfuse/attention.hpp"
#include "maskfuse/encoders.hpp"
#include "maskfuse/masking.hpp"
#include "maskfuse/parameters.hpp"
#include "maskfuse/sample.hpp"

namespace maskfuse {

inline constexpr double kProbabilityClamp = 1e-7;

struct ModelConfig {
  VisionConfig vision;
  TabularSchema schema;
  std::size_t classes = 14;
  std::size_t tabular_layers = 2;
  std::size_t tabular_heads = 16;
  std::size_t fusion_layers = 2;
  std::size_t fusion_heads = 16;
  std::size_t ffn_mult = 4;
  // competitor fusion MLP
  std::size_t mlp_layers = 3;
  std::size_t mlp_width = 300;

  std::size_t token_width() const { return vision.token_width; }
  std::size_t fused_tokens() const { return vision.tokens() + schema.size(); }
  void validate() const;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct Prediction {
  std::vector<double> probabilities;
};

// Encoders drawn from the named streams "init.vision" and "init.tabular" of a
// seed are bit-identical across every model built from that seed.
VisionEncoder init_vision_encoder(const ModelConfig& cfg, std::uint64_t seed);
struct TabularEncoderParams {
  EmbeddingTables tables;
  EncoderStack stack;
};
TabularEncoderParams init_tabular_encoder(const ModelConfig& cfg, std::uint64_t seed);

// Common surface of every trainable predictor.
class Model {
 public:
  virtual ~Model() = default;

  // Checkpoint tag, e.g. "masked", "zeros", "vision".
  virtual std::string strategy() const = 0;
  // Class probabilities [1, C] for `sample` under `masks` (which may differ
  // from sample.masks when dropout or injected missingness is applied).
  virtual Tensor forward(const Sample& sample, const SampleMasks& masks,
                         AttentionTrace* trace = nullptr) const = 0;
  virtual ParameterList parameters() const = 0;
  // Whether the model can consume a sample with these masks.
  virtual bool accepts(const SampleMasks& masks) const { return masks.admissible(); }

  Prediction predict(const Sample& sample) const { return predict(sample, sample.masks); }
  Prediction predict(const Sample& sample, const SampleMasks& masks) const;
};

// Row-major flatten -> linear -> sigmoid clamped to [1e-7, 1 - 1e-7].
Tensor classify(const Tensor& z, const Linear& head);

// Concatenates the conditioned token sequences and runs the masked fusion
// stack with the composite mask.
Tensor fuse_forward(const Tensor& image_tokens, const Tensor& tabular_tokens,
                    const CompositeMask& mask, const EncoderStack& stack,
                    AttentionTrace* trace = nullptr);

// Image-only predictor: encoder latent -> linear head.
class VisionPredictor : public Model {
 public:
  static VisionPredictor init(const ModelConfig& cfg, std::uint64_t seed);

  std::string strategy() const override { return "vision"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;
  bool accepts(const SampleMasks& masks) const override { return masks.has_image(); }

  const VisionEncoder& encoder() const { return encoder_; }

 private:
  VisionEncoder encoder_;
  Linear head_;
};

// Features-only predictor: embeddings -> masked encoder stack -> flattened head.
class TabularPredictor : public Model {
 public:
  static TabularPredictor init(const ModelConfig& cfg, std::uint64_t seed);

  std::string strategy() const override { return "tabular"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;
  bool accepts(const SampleMasks& masks) const override { return masks.has_tabular(); }

  const EmbeddingTables& tables() const { return tables_; }
  const EncoderStack& stack() const { return stack_; }

 private:
  EmbeddingTables tables_;
  EncoderStack stack_;
  Linear head_;
};

// The proposed intermediate-fusion model.
class MaskedFusionModel : public Model {
 public:
  // Fresh encoders; used when no pre-trained checkpoints are supplied.
  static MaskedFusionModel init(const ModelConfig& cfg, std::uint64_t seed,
                                std::string strategy = "masked");
  // Encoders copied from pre-trained unimodal predictors; tokens start at ones.
  static MaskedFusionModel from_unimodal(const ModelConfig& cfg, const VisionPredictor& vision,
                                         const TabularPredictor& tabular, std::uint64_t seed,
                                         std::string strategy = "masked");

  std::string strategy() const override { return strategy_; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  // Fused representation z, (n_vis + F) x d, before the head.
  Tensor encode(const Sample& sample, const SampleMasks& masks,
                AttentionTrace* trace = nullptr) const;

  const ModelConfig& config() const { return cfg_; }
  const VisionEncoder& vision() const { return vision_; }
  const EmbeddingTables& tables() const { return tables_; }
  const EncoderStack& tabular_stack() const { return tabular_stack_; }
  const EncoderStack& fusion_stack() const { return fusion_stack_; }
  const Tensor& image_token() const { return image_token_; }
  const Tensor& tabular_token() const { return tabular_token_; }
  const Linear& head() const { return head_; }
  Linear& head() { return head_; }

 private:
  ModelConfig cfg_;
  std::string strategy_;
  VisionEncoder vision_;
  EmbeddingTables tables_;
  EncoderStack tabular_stack_;
  Tensor image_token_;
  Tensor tabular_token_;
  EncoderStack fusion_stack_;
  Linear head_;
};

}  // namespace maskfuse
