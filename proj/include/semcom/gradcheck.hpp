// Central finite-difference gradient checking (64-bit mode).
#pragma once

#include <functional>
#include <string>

#include "semcom/optimizer.hpp"

namespace semcom::nn {

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// loss_fn must rebuild the tape from the current parameter values each call.
// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
inline GradCheckResult check_gradients(ParameterMap<double>& params,
                                       const std::function<Tensor<double>()>& loss_fn,
                                       double h = 1e-5, double denom_floor = 1e-6) {
  GradCheckResult res;
  zero_all_grads(params);
  Tensor<double> loss = loss_fn();
  loss.backward();

  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    analytic[name] = p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0);
  }

  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto& v = p.raw_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      double orig = v[i];
      v[i] = orig + h;
      double up = loss_fn().item();
      v[i] = orig - h;
      double down = loss_fn().item();
      v[i] = orig;
      double numeric = (up - down) / (2.0 * h);
      double a = analytic[name][i];
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), denom_floor});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = name;
        res.worst_index = i;
      }
    }
  }
  zero_all_grads(params);
  return res;
}

}  // namespace semcom::nn
