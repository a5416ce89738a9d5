#pragma once

#include <cstdint>
#include <vector>

#include "msct/tensor.hpp"

namespace msct {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters are updated in place through
/// their shared storage; first/second moments live here, matched to the
/// parameter list given at construction.
class Adam {
 public:
  Adam(AdamConfig config, const std::vector<Tensor>& params);

  /// One update from the gradients currently held in each parameter's
  /// grad slot. Parameters without a gradient this step are skipped.
  void step(std::vector<Tensor>& params);

  std::int64_t step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::int64_t step_count_ = 0;
};

}  // namespace msct
