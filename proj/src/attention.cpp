#include "maskfuse/attention.hpp"

#include <cmath>

#include "maskfuse/errors.hpp"
#include "maskfuse/masking.hpp"

namespace maskfuse {

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const double> avail, AttentionTrace* trace) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.dim(0) != k.dim(0) ||
      q.dim(0) != v.dim(0) || q.dim(1) != k.dim(1)) {
    throw ShapeError("masked_attention: q " + shape_str(q.shape()) + ", k " +
                     shape_str(k.shape()) + ", v " + shape_str(v.shape()));
  }
  const std::size_t L = q.dim(0);
  if (avail.size() != L) {
    throw ShapeError("masked_attention: mask of length " + std::to_string(avail.size()) +
                     " for " + std::to_string(L) + " tokens");
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  const std::vector<double> log_m = log_mask(avail);

  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt);
  scores = add_row_broadcast(scores, Tensor::row(log_m));
  Tensor weights = safe_softmax(scores, 1);

  std::vector<double> row_bias(L * L);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t j = 0; j < L; ++j) row_bias[i * L + j] = log_m[i];
  weights = relu(add(weights, Tensor::from({L, L}, std::move(row_bias))));

  if (trace) {
    if (trace->layers.empty()) trace->layers.emplace_back();
    trace->layers.back().push_back({L, weights.data()});
  }
  return matmul(weights, v);
}

EncoderLayerParams EncoderLayerParams::init(std::size_t width, std::size_t heads,
                                            std::size_t ffn_mult, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw PreconditionError("encoder layer: width " + std::to_string(width) +
                            " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t head_width = width / heads;
  EncoderLayerParams p;
  for (std::size_t h = 0; h < heads; ++h) {
    p.attention.query.push_back(Linear::init(width, head_width, rng));
    p.attention.key.push_back(Linear::init(width, head_width, rng));
    p.attention.value.push_back(Linear::init(width, head_width, rng));
  }
  p.attention.output = Linear::init(width, width, rng);
  p.ffn_in = Linear::init(width, ffn_mult * width, rng);
  p.ffn_out = Linear::init(ffn_mult * width, width, rng);
  p.norm1_gain = Tensor::full({1, width}, 1.0, true);
  p.norm1_offset = Tensor::zeros({1, width}, true);
  p.norm2_gain = Tensor::full({1, width}, 1.0, true);
  p.norm2_offset = Tensor::zeros({1, width}, true);
  return p;
}

EncoderLayerParams EncoderLayerParams::clone() const {
  EncoderLayerParams p;
  for (std::size_t h = 0; h < attention.heads(); ++h) {
    p.attention.query.push_back(attention.query[h].clone());
    p.attention.key.push_back(attention.key[h].clone());
    p.attention.value.push_back(attention.value[h].clone());
  }
  p.attention.output = attention.output.clone();
  p.ffn_in = ffn_in.clone();
  p.ffn_out = ffn_out.clone();
  p.norm1_gain = norm1_gain.clone(true);
  p.norm1_offset = norm1_offset.clone(true);
  p.norm2_gain = norm2_gain.clone(true);
  p.norm2_offset = norm2_offset.clone(true);
  return p;
}

void EncoderLayerParams::append(ParameterList& out, const std::string& prefix,
                                ParamGroup group) const {
  for (std::size_t h = 0; h < attention.heads(); ++h) {
    const std::string hp = prefix + ".head" + std::to_string(h);
    attention.query[h].append(out, hp + ".query", group);
    attention.key[h].append(out, hp + ".key", group);
    attention.value[h].append(out, hp + ".value", group);
  }
  attention.output.append(out, prefix + ".attn_out", group);
  ffn_in.append(out, prefix + ".ffn_in", group);
  ffn_out.append(out, prefix + ".ffn_out", group);
  out.push_back({prefix + ".norm1.gain", group, norm1_gain, {}});
  out.push_back({prefix + ".norm1.offset", group, norm1_offset, {}});
  out.push_back({prefix + ".norm2.gain", group, norm2_gain, {}});
  out.push_back({prefix + ".norm2.offset", group, norm2_offset, {}});
}

EncoderStack init_stack(std::size_t layers, std::size_t width, std::size_t heads,
                        std::size_t ffn_mult, Rng& rng) {
  EncoderStack stack;
  for (std::size_t l = 0; l < layers; ++l) {
    stack.push_back(EncoderLayerParams::init(width, heads, ffn_mult, rng));
  }
  return stack;
}

EncoderStack clone_stack(const EncoderStack& stack) {
  EncoderStack out;
  for (const auto& l : stack) out.push_back(l.clone());
  return out;
}

void append_stack(const EncoderStack& stack, ParameterList& out, const std::string& prefix,
                  ParamGroup group) {
  for (std::size_t l = 0; l < stack.size(); ++l) {
    stack[l].append(out, prefix + ".layer" + std::to_string(l), group);
  }
}

Tensor multi_head_masked_attention(const Tensor& x, const AttentionParams& params,
                                   std::span<const double> avail, AttentionTrace* trace) {
  const std::size_t heads = params.heads();
  if (heads == 0 || x.rank() != 2 || x.dim(1) % heads != 0) {
    throw ShapeError("multi_head_masked_attention: input " + shape_str(x.shape()) +
                     " with " + std::to_string(heads) + " heads");
  }
  std::vector<Tensor> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    outs.push_back(masked_attention(params.query[h](x), params.key[h](x), params.value[h](x),
                                    avail, trace));
  }
  Tensor joined = heads == 1 ? outs[0] : concat(outs, 1);
  return scale_rows(params.output(joined), avail);
}

Tensor masked_encoder_layer(const Tensor& x, const EncoderLayerParams& params,
                            std::span<const double> avail, AttentionTrace* trace) {
  if (trace) trace->layers.emplace_back();
  Tensor attended = multi_head_masked_attention(x, params.attention, avail, trace);
  Tensor h = scale_rows(layer_norm(add(x, attended), params.norm1_gain, params.norm1_offset),
                        avail);
  Tensor ff = params.ffn_out(relu(params.ffn_in(h)));
  return scale_rows(layer_norm(add(h, ff), params.norm2_gain, params.norm2_offset), avail);
}

Tensor masked_encoder_stack(const Tensor& x, const EncoderStack& stack,
                            std::span<const double> avail, AttentionTrace* trace) {
  Tensor out = x;
  for (const auto& layer : stack) out = masked_encoder_layer(out, layer, avail, trace);
  return out;
}

}  // namespace maskfuse
