#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/attention.hpp"
#include "maskfuse/parameters.hpp"
#include "maskfuse/sample.hpp"
#include "maskfuse/tensor.hpp"

namespace maskfuse {

// Per-feature lookup tables. Categorical feature j owns a (count + 1) x d
// table whose last row is the padding row for a missing value; numerical
// feature j owns a 2 x d table of {absence, presence} rows. Padding and
// absence rows are zero and pinned.
class EmbeddingTables {
 public:
  EmbeddingTables() = default;
  static EmbeddingTables init(const TabularSchema& schema, std::size_t width, Rng& rng);

  const TabularSchema& schema() const { return schema_; }
  std::size_t width() const { return width_; }
  const std::vector<Tensor>& tables() const { return tables_; }
  std::size_t frozen_row(std::size_t feature) const;

  EmbeddingTables clone() const;
  void append(ParameterList& out, const std::string& prefix) const;

 private:
  TabularSchema schema_;
  std::size_t width_ = 0;
  std::vector<Tensor> tables_;
};

// F x d token matrix. Present categorical -> its table row; present numerical
// -> value * presence row; missing -> the pinned zero row.
Tensor embed_tabular(std::span<const double> values, std::span<const double> mask,
                     const EmbeddingTables& tables);

// Masked encoder stack over feature tokens, then elementwise product with the
// tabular modality token on every row.
Tensor tabular_encoder_forward(const Tensor& tokens, std::span<const double> mask,
                               const EncoderStack& stack, const Tensor& modality_token);

struct VisionConfig {
  std::size_t height = 224;
  std::size_t width = 224;
  std::size_t channels = 1;
  // Output channels of each residual stage; the last one is the latent width d_v.
  std::vector<std::size_t> stage_widths = {256, 512, 2048};
  std::size_t token_width = 1024;

  std::size_t latent_width() const { return stage_widths.back(); }
  std::size_t tokens() const { return latent_width() / token_width; }
  void validate() const;
};

struct ConvParams {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
};

struct ResidualStage {
  ConvParams conv1, conv2;
  bool has_projection = false;
  ConvParams projection;  // 1x1, when the channel count changes
};

// Small residual CNN: 3x3 stem, then per stage {2x2 max-pool, two 3x3 convs
// with a (projected) skip}, then global average pooling to d_v.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  static VisionEncoder init(const VisionConfig& cfg, Rng& rng);

  const VisionConfig& config() const { return cfg_; }
  // image: [channels, H, W] -> [1, d_v]
  Tensor latent(const Tensor& image) const;
  Tensor image_tensor(std::span<const double> pixels) const;

  VisionEncoder clone() const;
  void append(ParameterList& out, const std::string& prefix) const;

 private:
  VisionConfig cfg_;
  ConvParams stem_;
  std::vector<ResidualStage> stages_;
};

// (d_v / d) x d tokens: latent reshaped, times the image modality token on
// every row, times the image mask. A masked image yields exact zeros with no
// graph into the vision parameters.
Tensor vision_encoder_forward(std::span<const double> pixels, double image_mask,
                              const VisionEncoder& encoder, const Tensor& modality_token);

// Training-time augmentation applied with probability 1/2: horizontal flip
// (coin toss) followed by a rotation drawn uniformly from [-15, 15] degrees,
// bilinear with zero fill. Always consumes four draws.
std::vector<double> augment_image(std::span<const double> pixels, std::size_t height,
                                  std::size_t width, Rng& rng);

}  // namespace maskfuse
