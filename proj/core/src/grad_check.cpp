#include "msct/grad_check.hpp"

#include <cmath>
#include <stdexcept>

#include "msct/autograd.hpp"

namespace msct {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<NamedParam> params,
                           const GradCheckOptions& opts) {
  if (opts.eps < 1e-7 || opts.eps > 1e-3) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
  }
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) {
      throw std::invalid_argument("grad_check: parameter '" + p.name + "' does not require grad");
    }
    p.tensor.zero_grad();
  }

  const double base = f().scalar_value();
  if (f().scalar_value() != base) {
    throw std::runtime_error("grad_check: f is not deterministic (double evaluation mismatch)");
  }

  // Analytic gradients from one taped pass.
  {
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.tensor.has_grad()) {
      analytic.push_back(p.tensor.grad_slot()->value);
    } else {
      analytic.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    }
  }
  if (opts.inject_error != 0.0 && !analytic.empty() && !analytic[0].empty()) {
    analytic[0][0] += opts.inject_error;
  }

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    ParamCheck pc;
    pc.name = params[pi].name;
    auto& values = params[pi].tensor.mutable_values();
    for (size_t j = 0; j < values.size(); ++j) {
      const double saved = values[j];
      values[j] = saved + opts.eps;
      const double f_plus = f().scalar_value();
      values[j] = saved - opts.eps;
      const double f_minus = f().scalar_value();
      values[j] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * opts.eps);
      const double a = analytic[pi][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > pc.max_rel_err) {
        pc.max_rel_err = rel;
        pc.worst_index = static_cast<std::int64_t>(j);
        pc.analytic = a;
        pc.numeric = numeric;
      }
    }
    if (pc.max_rel_err > report.max_rel_err) {
      report.max_rel_err = pc.max_rel_err;
      report.worst_param = pc.name;
    }
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace msct
