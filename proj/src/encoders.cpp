#include "maskfuse/encoders.hpp"

#include <cmath>

#include "maskfuse/errors.hpp"

namespace maskfuse {

void TabularSchema::validate() const {
  if (features.empty()) throw PreconditionError("tabular schema: at least one feature required");
  for (const auto& f : features) {
    if (f.kind == FeatureKind::categorical && f.categories == 0) {
      throw PreconditionError("tabular schema: categorical feature '" + f.name +
                              "' has no categories");
    }
  }
}

// ---- embeddings ---------------------------------------------------------------

EmbeddingTables EmbeddingTables::init(const TabularSchema& schema, std::size_t width, Rng& rng) {
  schema.validate();
  EmbeddingTables t;
  t.schema_ = schema;
  t.width_ = width;
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& f = schema.features[j];
    const std::size_t rows = f.kind == FeatureKind::categorical ? f.categories + 1 : 2;
    Tensor table = normal_init({rows, width}, 1.0, rng);
    auto v = table.mutable_values();
    const std::size_t pinned = f.kind == FeatureKind::categorical ? f.categories : 0;
    std::fill(v.begin() + pinned * width, v.begin() + (pinned + 1) * width, 0.0);
    t.tables_.push_back(std::move(table));
  }
  return t;
}

std::size_t EmbeddingTables::frozen_row(std::size_t feature) const {
  const auto& f = schema_.features.at(feature);
  return f.kind == FeatureKind::categorical ? f.categories : 0;
}

EmbeddingTables EmbeddingTables::clone() const {
  EmbeddingTables t;
  t.schema_ = schema_;
  t.width_ = width_;
  for (const auto& table : tables_) t.tables_.push_back(table.clone(true));
  return t;
}

void EmbeddingTables::append(ParameterList& out, const std::string& prefix) const {
  for (std::size_t j = 0; j < tables_.size(); ++j) {
    out.push_back({prefix + "." + schema_.features[j].name, ParamGroup::tabular, tables_[j],
                   {frozen_row(j)}});
  }
}

Tensor embed_tabular(std::span<const double> values, std::span<const double> mask,
                     const EmbeddingTables& tables) {
  const auto& schema = tables.schema();
  if (values.size() != schema.size() || mask.size() != schema.size()) {
    throw ShapeError("embed_tabular: " + std::to_string(values.size()) + " values and " +
                     std::to_string(mask.size()) + " mask bits for " +
                     std::to_string(schema.size()) + " features");
  }
  std::vector<Tensor> rows;
  rows.reserve(schema.size());
  for (std::size_t j = 0; j < schema.size(); ++j) {
    const auto& f = schema.features[j];
    const Tensor& table = tables.tables()[j];
    const bool present = mask[j] != 0.0;
    if (f.kind == FeatureKind::categorical) {
      if (!present) {
        rows.push_back(embedding_row(table, f.categories));
        continue;
      }
      const double x = values[j];
      if (!(x >= 0.0) || x != std::floor(x) || x >= static_cast<double>(f.categories)) {
        throw PreconditionError("embed_tabular: feature '" + f.name + "' category " +
                                std::to_string(x) + " outside [0, " +
                                std::to_string(f.categories) + ")");
      }
      rows.push_back(embedding_row(table, static_cast<std::size_t>(x)));
    } else {
      rows.push_back(present ? scale(embedding_row(table, 1), values[j])
                             : embedding_row(table, 0));
    }
  }
  return concat(rows, 0);
}

Tensor tabular_encoder_forward(const Tensor& tokens, std::span<const double> mask,
                               const EncoderStack& stack, const Tensor& modality_token) {
  return mul_row_broadcast(masked_encoder_stack(tokens, stack, mask), modality_token);
}

// ---- vision ---------------------------------------------------------------------

void VisionConfig::validate() const {
  if (stage_widths.empty()) throw PreconditionError("vision: at least one stage required");
  if (token_width == 0 || latent_width() % token_width != 0) {
    throw PreconditionError("vision: token width " + std::to_string(token_width) +
                            " does not divide latent width " + std::to_string(latent_width()));
  }
  const std::size_t min_side = std::size_t{1} << stage_widths.size();
  if (height < min_side || width < min_side) {
    throw PreconditionError("vision: image " + std::to_string(height) + "x" +
                            std::to_string(width) + " too small for " +
                            std::to_string(stage_widths.size()) + " pooling stages");
  }
  if (channels == 0) throw PreconditionError("vision: channels must be >= 1");
}

namespace {

ConvParams conv_init(std::size_t out, std::size_t in, std::size_t k, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(in * k * k));
  return {normal_init({out, in, k, k}, stddev, rng), Tensor::zeros({out}, true)};
}

ConvParams conv_clone(const ConvParams& c) { return {c.weight.clone(true), c.bias.clone(true)}; }

void conv_append(const ConvParams& c, ParameterList& out, const std::string& prefix) {
  out.push_back({prefix + ".weight", ParamGroup::vision, c.weight, {}});
  out.push_back({prefix + ".bias", ParamGroup::vision, c.bias, {}});
}

Tensor apply(const ConvParams& c, const Tensor& x) { return conv2d(x, c.weight, c.bias); }

}  // namespace

VisionEncoder VisionEncoder::init(const VisionConfig& cfg, Rng& rng) {
  cfg.validate();
  VisionEncoder e;
  e.cfg_ = cfg;
  std::size_t in = cfg.stage_widths.front();
  e.stem_ = conv_init(in, cfg.channels, 3, rng);
  for (std::size_t w : cfg.stage_widths) {
    ResidualStage s;
    s.conv1 = conv_init(w, in, 3, rng);
    s.conv2 = conv_init(w, w, 3, rng);
    if (w != in) {
      s.has_projection = true;
      s.projection = conv_init(w, in, 1, rng);
    }
    e.stages_.push_back(std::move(s));
    in = w;
  }
  return e;
}

Tensor VisionEncoder::image_tensor(std::span<const double> pixels) const {
  const std::size_t n = cfg_.channels * cfg_.height * cfg_.width;
  if (pixels.size() != n) {
    throw ShapeError("vision: image has " + std::to_string(pixels.size()) +
                     " values, expected " + std::to_string(n));
  }
  return Tensor::from({cfg_.channels, cfg_.height, cfg_.width},
                      std::vector<double>(pixels.begin(), pixels.end()));
}

Tensor VisionEncoder::latent(const Tensor& image) const {
  Tensor x = relu(apply(stem_, image));
  for (const auto& s : stages_) {
    x = max_pool2d(x);
    Tensor y = apply(s.conv2, relu(apply(s.conv1, x)));
    Tensor skip = s.has_projection ? apply(s.projection, x) : x;
    x = relu(add(y, skip));
  }
  return global_avg_pool(x);
}

VisionEncoder VisionEncoder::clone() const {
  VisionEncoder e;
  e.cfg_ = cfg_;
  e.stem_ = conv_clone(stem_);
  for (const auto& s : stages_) {
    ResidualStage c;
    c.conv1 = conv_clone(s.conv1);
    c.conv2 = conv_clone(s.conv2);
    c.has_projection = s.has_projection;
    if (s.has_projection) c.projection = conv_clone(s.projection);
    e.stages_.push_back(std::move(c));
  }
  return e;
}

void VisionEncoder::append(ParameterList& out, const std::string& prefix) const {
  conv_append(stem_, out, prefix + ".stem");
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    const std::string sp = prefix + ".stage" + std::to_string(i);
    conv_append(stages_[i].conv1, out, sp + ".conv1");
    conv_append(stages_[i].conv2, out, sp + ".conv2");
    if (stages_[i].has_projection) conv_append(stages_[i].projection, out, sp + ".projection");
  }
}

Tensor vision_encoder_forward(std::span<const double> pixels, double image_mask,
                              const VisionEncoder& encoder, const Tensor& modality_token) {
  const auto& cfg = encoder.config();
  const std::size_t n_tokens = cfg.tokens();
  if (image_mask == 0.0) return Tensor::zeros({n_tokens, cfg.token_width});
  Tensor z = reshape(encoder.latent(encoder.image_tensor(pixels)), {n_tokens, cfg.token_width});
  return mul_row_broadcast(z, modality_token);
}

std::vector<double> augment_image(std::span<const double> pixels, std::size_t height,
                                  std::size_t width, Rng& rng) {
  const bool apply_aug = rng.uniform() < 0.5;
  const bool flip = rng.uniform() < 0.5;
  const double degrees = -15.0 + 30.0 * rng.uniform();
  rng.uniform();  // reserved draw keeps the per-sample stream length at four
  std::vector<double> out(pixels.begin(), pixels.end());
  if (!apply_aug) return out;
  if (flip) {
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out[y * width + x] = pixels[y * width + (width - 1 - x)];
  }
  const std::vector<double> src = out;
  const double theta = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  auto sample = [&](long yy, long xx) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(height) || xx >= static_cast<long>(width))
      return 0.0;
    return src[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)];
  };
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      // inverse rotation of the destination pixel into the source frame
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sy = c * dy - s * dx + cy;
      const double sx = s * dy + c * dx + cx;
      const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      out[y * width + x] = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                           fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
    }
  }
  return out;
}

}  // namespace maskfuse
