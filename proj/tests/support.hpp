#pragma once

// Shared fixtures and independent oracles for the unit and acceptance tests.
// The oracles work on plain std::vector data and never call into the library
// operations they are compared against.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "maskfuse/model.hpp"
#include "maskfuse/rng.hpp"
#include "maskfuse/tensor.hpp"

namespace testing_support {

using maskfuse::FeatureKind;
using maskfuse::ModelConfig;
using maskfuse::Rng;
using maskfuse::Sample;
using maskfuse::Tensor;

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Tensor& t) {
  const std::size_t r = t.dim(0), c = t.dim(1);
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.at(i, j);
  return m;
}

inline Tensor from_mat(const Mat& m, bool requires_grad = false) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return Tensor::from({m.size(), m.empty() ? 0 : m[0].size()}, v, requires_grad);
}

inline Mat mat_mul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) out[i][j] += a[i][k] * b[k][j];
  return out;
}

// Plain scaled dot-product softmax attention, no masking.
inline Mat plain_attention(const Mat& q, const Mat& k, const Mat& v) {
  const std::size_t L = q.size(), dh = q[0].size();
  Mat out(L, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < L; ++i) {
    std::vector<double> w(k.size());
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k.size(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dh; ++c) s += q[i][c] * k[j][c];
      w[j] = s / std::sqrt(static_cast<double>(dh));
      mx = std::max(mx, w[j]);
    }
    double z = 0.0;
    for (auto& x : w) z += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[i][c] += w[j] / z * v[j][c];
  }
  return out;
}

inline Mat rows_where(const Mat& m, const std::vector<double>& avail) {
  Mat out;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (avail[i] != 0.0) out.push_back(m[i]);
  return out;
}

inline Mat random_mat(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Mat m(r, std::vector<double>(c));
  for (auto& row : m)
    for (auto& x : row) x = scale * rng.normal();
  return m;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) d = std::max(d, std::abs(a[i][j] - b[i][j]));
  return d;
}

inline Mat affine(const Mat& x, const maskfuse::Linear& lin) {
  Mat out = mat_mul(x, to_mat(lin.weight));
  const auto b = lin.bias.values();
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
  return out;
}

inline Mat plain_layer_norm(const Mat& x, const Tensor& gain, const Tensor& offset, double eps = 1e-5) {
  Mat out = x;
  const auto g = gain.values(), o = offset.values();
  for (auto& row : out) {
    double mu = 0.0, var = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = (row[j] - mu) / std::sqrt(var + eps) * g[j] + o[j];
  }
  return out;
}

inline Mat plain_add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

// Unmasked multi-head attention with the same projection weights.
inline Mat plain_multi_head(const Mat& x, const maskfuse::AttentionParams& p) {
  Mat joined(x.size());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    Mat head = plain_attention(affine(x, p.query[h]), affine(x, p.key[h]), affine(x, p.value[h]));
    for (std::size_t i = 0; i < x.size(); ++i) joined[i].insert(joined[i].end(), head[i].begin(), head[i].end());
  }
  return affine(joined, p.output);
}

// Post-norm transformer layer on a fully available sequence.
inline Mat plain_encoder_layer(const Mat& x, const maskfuse::EncoderLayerParams& p) {
  Mat h = plain_layer_norm(plain_add(x, plain_multi_head(x, p.attention)), p.norm1_gain, p.norm1_offset);
  Mat ff = affine(h, p.ffn_in);
  for (auto& row : ff)
    for (auto& v : row) v = std::max(v, 0.0);
  ff = affine(ff, p.ffn_out);
  return plain_layer_norm(plain_add(h, ff), p.norm2_gain, p.norm2_offset);
}

inline Mat plain_encoder_stack(Mat x, const maskfuse::EncoderStack& stack) {
  for (const auto& layer : stack) x = plain_encoder_layer(x, layer);
  return x;
}

// All-pairs AUC: wins + ties/2 over n_pos * n_neg, accumulated as an integer
// count of half-credits.
inline double pairwise_auc(const std::vector<double>& s, const std::vector<double>& y) {
  std::uint64_t twice = 0, p = 0, n = 0;
  for (double v : y) (v != 0.0 ? p : n) += 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 0.0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0.0) continue;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(p) * static_cast<double>(n));
}

// Small model: 8x8 images, d_v = 16, d = 8 (two vision tokens), mixed schema.
inline ModelConfig tiny_config(std::size_t features = 4, std::size_t layers = 1, std::size_t heads = 2,
                               std::size_t classes = 3) {
  ModelConfig cfg;
  cfg.vision.height = 8;
  cfg.vision.width = 8;
  cfg.vision.stage_widths = {4, 16};
  cfg.vision.token_width = 8;
  for (std::size_t j = 0; j < features; ++j) {
    if (j % 3 == 1) cfg.schema.features.push_back({"cat" + std::to_string(j), FeatureKind::categorical, 3});
    else cfg.schema.features.push_back({"num" + std::to_string(j), FeatureKind::numerical, 0});
  }
  cfg.classes = classes;
  cfg.tabular_layers = layers;
  cfg.tabular_heads = heads;
  cfg.fusion_layers = layers;
  cfg.fusion_heads = heads;
  cfg.ffn_mult = 2;
  cfg.mlp_layers = 2;
  cfg.mlp_width = 8;
  return cfg;
}

inline Sample random_sample(const ModelConfig& cfg, Rng& rng, std::uint64_t id = 0) {
  Sample s;
  s.id = id;
  s.image.resize(cfg.vision.height * cfg.vision.width);
  for (auto& p : s.image) p = rng.uniform();
  for (const auto& f : cfg.schema.features) {
    s.tabular.push_back(f.kind == FeatureKind::categorical ? static_cast<double>(rng.index(f.categories))
                                                           : rng.uniform());
  }
  for (std::size_t c = 0; c < cfg.classes; ++c) s.labels.push_back(rng.bernoulli(0.5) ? 1.0 : 0.0);
  s.masks.image = 1.0;
  s.masks.tabular.assign(cfg.schema.size(), 1.0);
  s.masks.labels.assign(cfg.classes, 1.0);
  return s;
}

// Random admissible availability pattern for n_vis + F tokens: the image bit
// is shared by the vision tokens.
inline void randomize_masks(Sample& s, Rng& rng) {
  s.masks.image = rng.bernoulli(0.5) ? 1.0 : 0.0;
  for (auto& m : s.masks.tabular) m = rng.bernoulli(0.6) ? 1.0 : 0.0;
  if (!s.masks.admissible()) s.masks.tabular[rng.index(s.masks.tabular.size())] = 1.0;
}

}  // namespace testing_support
