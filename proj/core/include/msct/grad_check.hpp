#pragma once

#include <functional>
#include <string>
#include <vector>

#include "msct/tensor.hpp"

namespace msct {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ParamCheck {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_err = 0.0;
  std::string worst_param;

  bool passes(double rtol) const { return max_rel_err < rtol; }
};

struct GradCheckOptions {
  double eps = 1e-5;
  /// Relative error denominator is max(|analytic|, |numeric|, floor);
  /// the floor turns the comparison into an absolute one for tiny
  /// gradients, where central differences are roundoff-dominated.
  double denom_floor = 1e-4;
  /// Test hook: added to the first analytic gradient component before
  /// comparison so the checker's failure path can be exercised.
  double inject_error = 0.0;
};

/// Central-difference check of reverse-mode gradients.
///
/// `f` evaluates the scalar objective from the current parameter values;
/// it is run once under a fresh tape for the analytic gradients and twice
/// per parameter component for (f(x+eps) - f(x-eps)) / (2 eps). `f` must
/// be deterministic; this is verified by a double evaluation.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                           const GradCheckOptions& opts = {});

}  // namespace msct
