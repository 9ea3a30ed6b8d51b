#include "maskfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "maskfuse/errors.hpp"

namespace maskfuse {

namespace {

// Central differences at eps=1e-5 carry ~1e-11 absolute round-off on O(1) losses.
constexpr double kRelativeFloor = 1e-6;

struct Probe {
  double value;
  std::uint64_t branches;
};

Probe evaluate(const std::function<Tensor()>& f, std::size_t param, std::size_t coord) {
  BranchTrace trace;
  const double v = f().item();
  if (!std::isfinite(v)) {
    throw NumericalError("finite_diff_check: non-finite evaluation at param " +
                         std::to_string(param) + " coordinate " + std::to_string(coord));
  }
  return {v, trace.digest()};
}

}  // namespace

FiniteDiffReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                   double eps) {
  if (!(eps > 0.0)) throw PreconditionError("finite_diff_check: eps must be positive");
  FiniteDiffReport report;

  std::uint64_t base_branches = 0;
  Gradients grads;
  {
    BranchTrace trace;
    Tensor out = f();
    if (!std::isfinite(out.item())) {
      throw NumericalError("finite_diff_check: non-finite evaluation at the base point");
    }
    base_branches = trace.digest();
    grads = backward(out);
  }

  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor analytic = grads.of(params[p]);
    auto values = params[p].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const Probe plus = evaluate(f, p, i);
      values[i] = original - eps;
      const Probe minus = evaluate(f, p, i);
      values[i] = original;
      ++report.coordinates;
      if (plus.branches != base_branches || minus.branches != base_branches) {
        ++report.kink_crossings;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * eps);
      const double a = analytic.data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelativeFloor});
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst = "param" + std::to_string(p) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace maskfuse
