#include "maskfuse/masking.hpp"

#include <algorithm>
#include <limits>

#include "maskfuse/errors.hpp"

namespace maskfuse {

bool SampleMasks::has_tabular() const {
  return std::any_of(tabular.begin(), tabular.end(), [](double m) { return m != 0.0; });
}

Tensor expand_mask_to_matrix(std::span<const double> avail) {
  if (avail.empty()) throw PreconditionError("expand_mask_to_matrix: empty availability vector");
  for (double a : avail)
    if (a != 0.0 && a != 1.0) throw PreconditionError("expand_mask_to_matrix: availability must be 0 or 1");
  const std::size_t n = avail.size();
  std::vector<double> out;
  out.reserve(n * n);
  for (std::size_t i = 0; i < n; ++i) out.insert(out.end(), avail.begin(), avail.end());
  return Tensor::from({n, n}, std::move(out));
}

std::vector<double> log_mask(std::span<const double> avail) {
  std::vector<double> out(avail.size());
  for (std::size_t i = 0; i < avail.size(); ++i) {
    out[i] = avail[i] != 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return out;
}

CompositeMask build_composite_mask(double image, std::span<const double> tabular,
                                   std::size_t vision_tokens) {
  if (vision_tokens == 0) throw PreconditionError("build_composite_mask: n_vis must be >= 1");
  if (tabular.empty()) throw PreconditionError("build_composite_mask: empty tabular mask");
  CompositeMask mask;
  mask.vision_tokens = vision_tokens;
  mask.values.assign(vision_tokens, image != 0.0 ? 1.0 : 0.0);
  for (double m : tabular) mask.values.push_back(m != 0.0 ? 1.0 : 0.0);
  if (std::none_of(mask.values.begin(), mask.values.end(), [](double m) { return m != 0.0; })) {
    throw PreconditionError("build_composite_mask: no modality available");
  }
  return mask;
}

void DropoutPolicy::validate() const {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw PreconditionError("modality dropout rate: probability out of range");
  }
  if (!(image_share >= 0.0 && image_share <= 1.0)) {
    throw PreconditionError("modality dropout image share: probability out of range");
  }
}

DropoutOutcome apply_modality_dropout(const SampleMasks& masks, const DropoutPolicy& policy,
                                      double event_draw, double choice_draw) {
  DropoutOutcome out{masks, DroppedModality::none};
  if (!masks.fully_paired()) return out;
  if (!(event_draw < policy.rate)) return out;
  if (choice_draw < policy.image_share) {
    out.masks.image = 0.0;
    out.dropped = DroppedModality::image;
  } else {
    std::fill(out.masks.tabular.begin(), out.masks.tabular.end(), 0.0);
    out.dropped = DroppedModality::tabular;
  }
  return out;
}

DropoutOutcome apply_modality_dropout(const SampleMasks& masks, const DropoutPolicy& policy,
                                      Rng& rng) {
  const double event_draw = rng.uniform();
  const double choice_draw = rng.uniform();
  return apply_modality_dropout(masks, policy, event_draw, choice_draw);
}

}  // namespace maskfuse
