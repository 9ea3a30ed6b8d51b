#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "maskfuse/rng.hpp"
#include "maskfuse/tensor.hpp"

namespace maskfuse {

// Disjoint parameter groups; each receives its own learning rate.
enum class ParamGroup { vision, tabular, fusion, head };

std::string_view group_name(ParamGroup g);
ParamGroup parse_group(std::string_view name);

struct NamedParameter {
  std::string name;
  ParamGroup group;
  Tensor tensor;
  // Rows of a 2-D table that are pinned (embedding padding/absence rows).
  std::vector<std::size_t> frozen_rows;
};

using ParameterList = std::vector<NamedParameter>;

// Trainable leaf with entries drawn from N(0, stddev^2).
Tensor normal_init(Shape shape, double stddev, Rng& rng);
// Trainable leaf with Glorot-uniform entries for a [fan_in, fan_out] matrix.
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Dense y = x W + b with W: [in, out], b: [1, out].
struct Linear {
  Tensor weight;
  Tensor bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(std::size_t in, std::size_t out);
  Tensor operator()(const Tensor& x) const;
  Linear clone() const;
  void append(ParameterList& out, const std::string& prefix, ParamGroup group) const;
};

// Deep copies of every tensor, preserving names and groups.
ParameterList snapshot(const ParameterList& params);
// Copies values of `from` into the leaves of `to`, matched by name.
void restore(const ParameterList& to, const ParameterList& from);

}  // namespace maskfuse
