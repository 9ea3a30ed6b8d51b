#pragma once

// Masked self-attention where unavailable tokens neither send nor receive
// information:
//
//   Attn(q, k, v, m) = ReLU(Softmax(q k^T / sqrt(d_h) + log(M)) + log(M)^T) v
//
// with M the availability vector replicated on every row. The first log term
// removes unavailable keys from every softmax; the transposed term sends the
// rows of unavailable queries to -inf so the ReLU zeroes them. Encoder layers
// re-apply the row mask after each residual/layer-norm block so masked rows
// stay exactly zero at every layer boundary.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "maskfuse/parameters.hpp"
#include "maskfuse/tensor.hpp"

namespace maskfuse {

// Attention weights of one head, row-major [queries, keys].
struct AttentionMap {
  std::size_t length = 0;
  std::vector<double> weights;
};

// Optional capture of attention weights, one entry per layer then per head.
struct AttentionTrace {
  std::vector<std::vector<AttentionMap>> layers;
};

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::span<const double> avail, AttentionTrace* trace = nullptr);

struct AttentionParams {
  std::vector<Linear> query, key, value;  // one [d, d/heads] projection per head
  Linear output;                          // [d, d]

  std::size_t heads() const { return query.size(); }
};

struct EncoderLayerParams {
  AttentionParams attention;
  Linear ffn_in, ffn_out;
  Tensor norm1_gain, norm1_offset, norm2_gain, norm2_offset;

  // Rejects widths not divisible by `heads`.
  static EncoderLayerParams init(std::size_t width, std::size_t heads, std::size_t ffn_mult,
                                 Rng& rng);
  std::size_t width() const { return norm1_gain.numel(); }
  EncoderLayerParams clone() const;
  void append(ParameterList& out, const std::string& prefix, ParamGroup group) const;
};

using EncoderStack = std::vector<EncoderLayerParams>;

EncoderStack init_stack(std::size_t layers, std::size_t width, std::size_t heads,
                        std::size_t ffn_mult, Rng& rng);
EncoderStack clone_stack(const EncoderStack& stack);
void append_stack(const EncoderStack& stack, ParameterList& out, const std::string& prefix,
                  ParamGroup group);

// Per-head masked attention, column concatenation, output projection, then
// the row mask.
Tensor multi_head_masked_attention(const Tensor& x, const AttentionParams& params,
                                   std::span<const double> avail,
                                   AttentionTrace* trace = nullptr);

// out = RowMask(LN2(h + FFN(h))), h = RowMask(LN1(x + MHA(x))).
Tensor masked_encoder_layer(const Tensor& x, const EncoderLayerParams& params,
                            std::span<const double> avail, AttentionTrace* trace = nullptr);

Tensor masked_encoder_stack(const Tensor& x, const EncoderStack& stack,
                            std::span<const double> avail, AttentionTrace* trace = nullptr);

}  // namespace maskfuse
