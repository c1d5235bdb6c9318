// Adadelta: accumulate-squared-gradient / accumulate-squared-update rule.
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "semcom/layers.hpp"

namespace semcom::nn {

struct AdadeltaConfig {
  double rho = 0.95;
  double eps = 1e-6;
  double lr = 1.0;
};

template <typename Real>
struct AdadeltaState {
  std::map<std::string, std::vector<Real>> acc_grad2;
  std::map<std::string, std::vector<Real>> acc_update2;
};

// One update over every parameter that has an accumulated gradient. Zero
// gradients leave parameters untouched; params without grads are skipped
// (that is how freezing shows up here). Gradients are cleared afterwards.
template <typename Real>
void adadelta_step(ParameterMap<Real>& params, AdadeltaState<Real>& state,
                   const AdadeltaConfig& cfg) {
  const Real rho = static_cast<Real>(cfg.rho);
  const Real eps = static_cast<Real>(cfg.eps);
  const Real lr = static_cast<Real>(cfg.lr);
  for (auto& [name, p] : params) {
    if (!p.requires_grad() || !p.has_grad()) continue;
    const std::vector<Real>& g = p.grad();
    auto& eg2 = state.acc_grad2[name];
    auto& ed2 = state.acc_update2[name];
    if (eg2.size() != g.size()) eg2.assign(g.size(), Real(0));
    if (ed2.size() != g.size()) ed2.assign(g.size(), Real(0));
    auto& v = p.raw_values();
    for (std::size_t i = 0; i < g.size(); ++i) {
      Real gi = g[i];
      if (!std::isfinite(static_cast<double>(gi)))
        throw TrainingError("non-finite gradient in parameter " + name);
      eg2[i] = rho * eg2[i] + (Real(1) - rho) * gi * gi;
      Real delta = -std::sqrt(ed2[i] + eps) / std::sqrt(eg2[i] + eps) * gi;
      ed2[i] = rho * ed2[i] + (Real(1) - rho) * delta * delta;
      v[i] += lr * delta;
    }
    p.zero_grad();
  }
}

template <typename Real>
void zero_all_grads(ParameterMap<Real>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace semcom::nn
