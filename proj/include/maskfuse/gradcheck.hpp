#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "maskfuse/tensor.hpp"

namespace maskfuse {

struct FiniteDiffReport {
  // max over coordinates of |analytic - central| / max(|analytic|, |central|, 1e-6)
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Coordinates whose +/-eps probes took a different piecewise branch than the
  // base point (relu, clamp, max-pool kinks); the central difference is not a
  // derivative estimate there, so they are excluded from max_rel_error.
  std::size_t kink_crossings = 0;
  std::string worst;  // "param[i]" of the worst coordinate
};

// Compares reverse-mode gradients of the scalar `f` against central
// differences over every coordinate of `params`. `f` must rebuild its graph
// from the current parameter values on each call. Throws NumericalError naming
// the coordinate if any evaluation is non-finite.
FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                   double eps);

}  // namespace maskfuse
