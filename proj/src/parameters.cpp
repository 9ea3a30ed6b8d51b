#include "maskfuse/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "maskfuse/errors.hpp"

namespace maskfuse {

std::string_view group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::vision: return "vision";
    case ParamGroup::tabular: return "tabular";
    case ParamGroup::fusion: return "fusion";
    case ParamGroup::head: return "head";
  }
  return "?";
}

ParamGroup parse_group(std::string_view name) {
  if (name == "vision") return ParamGroup::vision;
  if (name == "tabular") return ParamGroup::tabular;
  if (name == "fusion") return ParamGroup::fusion;
  if (name == "head") return ParamGroup::head;
  throw PreconditionError("unknown parameter group '" + std::string(name) + "'");
}

Tensor normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = limit * (2.0 * rng.uniform() - 1.0);
  return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Linear Linear::init(std::size_t in, std::size_t out, Rng& rng) {
  return {glorot_init(in, out, rng), Tensor::zeros({1, out}, true)};
}

Linear Linear::zeros(std::size_t in, std::size_t out) {
  return {Tensor::zeros({in, out}, true), Tensor::zeros({1, out}, true)};
}

Tensor Linear::operator()(const Tensor& x) const {
  return add_row_broadcast(matmul(x, weight), bias);
}

Linear Linear::clone() const { return {weight.clone(true), bias.clone(true)}; }

void Linear::append(ParameterList& out, const std::string& prefix, ParamGroup group) const {
  out.push_back({prefix + ".weight", group, weight, {}});
  out.push_back({prefix + ".bias", group, bias, {}});
}

ParameterList snapshot(const ParameterList& params) {
  ParameterList out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.group, p.tensor.clone(false), p.frozen_rows});
  return out;
}

void restore(const ParameterList& to, const ParameterList& from) {
  std::unordered_map<std::string, const NamedParameter*> index;
  for (const auto& p : from) index.emplace(p.name, &p);
  for (const auto& p : to) {
    auto it = index.find(p.name);
    if (it == index.end()) throw PreconditionError("restore: missing parameter '" + p.name + "'");
    const Tensor& src = it->second->tensor;
    if (src.shape() != p.tensor.shape()) {
      throw ShapeError("restore: parameter '" + p.name + "' has shape " +
                       shape_str(src.shape()) + ", expected " + shape_str(p.tensor.shape()));
    }
    Tensor dst = p.tensor;
    auto values = dst.mutable_values();
    std::copy(src.data().begin(), src.data().end(), values.begin());
  }
}

}  // namespace maskfuse
