#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/model.hpp"

namespace maskfuse {

// Hidden dense layers with relu, then a linear map to the class logits.
struct Mlp {
  std::vector<Linear> hidden;
  Linear output;

  static Mlp init(std::size_t in, std::size_t width, std::size_t layers, std::size_t classes,
                  Rng& rng);
  Tensor logits(const Tensor& x) const;
  void append(ParameterList& out, const std::string& prefix) const;
};

// Mean of the available rows of a token matrix, [1, d]. Requires >= 1 available.
Tensor mean_available_rows(const Tensor& tokens, std::span<const double> mask);

// Missing unimodal latents replaced by zero vectors, concatenated, then an MLP.
class ZerosFusionModel : public Model {
 public:
  static ZerosFusionModel init(const ModelConfig& cfg, std::uint64_t seed);
  static ZerosFusionModel from_unimodal(const ModelConfig& cfg, const VisionPredictor& vision,
                                        const TabularPredictor& tabular, std::uint64_t seed);

  std::string strategy() const override { return "zeros"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  // [1, d_v + d] vector fed to the MLP.
  Tensor compose_input(const Sample& sample, const SampleMasks& masks) const;

 private:
  ModelConfig cfg_;
  VisionEncoder vision_;
  EmbeddingTables tables_;
  EncoderStack tabular_stack_;
  Mlp mlp_;
};

// Dimension-wise maximum over the available latents (all [1, d]).
Tensor maxpool_fuse(std::span<const Tensor> latents);

// Vision latent and mean-pooled tabular tokens each projected to width d,
// max-pooled over the available ones, then an MLP.
class MaxPoolFusionModel : public Model {
 public:
  static MaxPoolFusionModel init(const ModelConfig& cfg, std::uint64_t seed);
  static MaxPoolFusionModel from_unimodal(const ModelConfig& cfg, const VisionPredictor& vision,
                                          const TabularPredictor& tabular, std::uint64_t seed);

  std::string strategy() const override { return "maxpool"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

 private:
  ModelConfig cfg_;
  VisionEncoder vision_;
  EmbeddingTables tables_;
  EncoderStack tabular_stack_;
  Linear vision_projection_, tabular_projection_;
  Mlp mlp_;
};

// Dispatches on modality availability: image only -> vision member, no image
// -> tabular member, both -> multimodal member (trained on paired data only).
class ModelSelectionBundle : public Model {
 public:
  ModelSelectionBundle(VisionPredictor vision, TabularPredictor tabular,
                       MaskedFusionModel multimodal);

  enum class Member { vision, tabular, multimodal };
  static Member select(const SampleMasks& masks);

  std::string strategy() const override { return "model-selection"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

  const VisionPredictor& vision() const { return vision_; }
  const TabularPredictor& tabular() const { return tabular_; }
  const MaskedFusionModel& multimodal() const { return multimodal_; }

 private:
  VisionPredictor vision_;
  TabularPredictor tabular_;
  MaskedFusionModel multimodal_;
};

// Arithmetic mean of the available probability vectors.
Prediction late_fusion_predict(const std::optional<Prediction>& vision,
                               const std::optional<Prediction>& tabular);

// Averages the pre-trained unimodal predictors' outputs; no joint training.
class LateFusionModel : public Model {
 public:
  LateFusionModel(VisionPredictor vision, TabularPredictor tabular);

  std::string strategy() const override { return "late"; }
  Tensor forward(const Sample& sample, const SampleMasks& masks,
                 AttentionTrace* trace = nullptr) const override;
  ParameterList parameters() const override;

 private:
  VisionPredictor vision_;
  TabularPredictor tabular_;
};

}  // namespace maskfuse
