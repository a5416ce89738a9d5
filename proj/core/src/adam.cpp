#include "msct/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace msct {

Adam::Adam(AdamConfig config, const std::vector<Tensor>& params) : config_(config) {
  if (config_.lr <= 0.0) throw std::invalid_argument("Adam: lr must be positive");
  first_moment_.reserve(params.size());
  second_moment_.reserve(params.size());
  for (const Tensor& p : params) {
    first_moment_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    second_moment_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void Adam::step(std::vector<Tensor>& params) {
  if (params.size() != first_moment_.size()) {
    throw std::invalid_argument("Adam: parameter list changed size");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_count_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) continue;
    const auto& g = p.grad_slot()->value;
    auto& m = first_moment_[i];
    auto& v = second_moment_[i];
    auto& w = p.mutable_values();
    if (g.size() != w.size()) {
      throw std::invalid_argument("Adam: gradient shape does not match parameter " +
                                  shape_to_string(p.shape()));
    }
    for (size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

}  // namespace msct
