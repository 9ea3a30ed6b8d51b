#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maskfuse/rng.hpp"
#include "maskfuse/tensor.hpp"

namespace maskfuse {

// Availability of one sample's image, tabular features and labels. Every
// entry is 0 or 1.
struct SampleMasks {
  double image = 1.0;
  std::vector<double> tabular;
  std::vector<double> labels;

  bool has_image() const { return image != 0.0; }
  bool has_tabular() const;
  // At least one modality present; required before a sample enters a model.
  bool admissible() const { return has_image() || has_tabular(); }
  bool fully_paired() const { return has_image() && has_tabular(); }
};

// Token availability for the fusion encoder: n_vis copies of the image bit
// followed by the per-feature tabular bits.
struct CompositeMask {
  std::vector<double> values;
  std::size_t vision_tokens = 0;

  std::size_t size() const { return values.size(); }
  std::span<const double> vision() const { return std::span(values).first(vision_tokens); }
  std::span<const double> tabular() const { return std::span(values).subspan(vision_tokens); }
};

// L x L matrix whose every row is `avail`.
Tensor expand_mask_to_matrix(std::span<const double> avail);

// Additive attention bias log(avail): 0 where available, -inf where not.
std::vector<double> log_mask(std::span<const double> avail);

CompositeMask build_composite_mask(double image, std::span<const double> tabular,
                                   std::size_t vision_tokens);

struct DropoutPolicy {
  double rate = 0.3;
  // Probability that the image (rather than the tabular block) is the
  // modality removed when a drop event fires.
  double image_share = 0.5;

  void validate() const;
};

enum class DroppedModality { none, image, tabular };

struct DropoutOutcome {
  SampleMasks masks;
  DroppedModality dropped = DroppedModality::none;
};

// Decision from two explicit uniforms on [0, 1): the event fires when
// event_draw < rate; the image is dropped when choice_draw < image_share.
DropoutOutcome apply_modality_dropout(const SampleMasks& masks, const DropoutPolicy& policy,
                                      double event_draw, double choice_draw);

// Draws both uniforms from `rng` on every call, eligible or not, so the
// stream position does not depend on the data.
DropoutOutcome apply_modality_dropout(const SampleMasks& masks, const DropoutPolicy& policy,
                                      Rng& rng);

}  // namespace maskfuse
