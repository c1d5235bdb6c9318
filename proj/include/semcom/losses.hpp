// Training losses: CTC (sum over alignments, log-space forward/backward),
// cross-entropy over teacher-forced steps, their affine combination, and MSE.
#pragma once

#include <vector>

#include "semcom/tensor.hpp"

namespace semcom::train {

using nn::Tensor;

namespace detail {

inline double logadd(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::fabs(a - b)));
}

// Expanded CTC label sequence: blanks at even indices, labels at odd.
inline std::vector<std::size_t> ctc_expand(const std::vector<std::size_t>& targets,
                                           std::size_t blank) {
  std::vector<std::size_t> e(2 * targets.size() + 1, blank);
  for (std::size_t i = 0; i < targets.size(); ++i) e[2 * i + 1] = targets[i];
  return e;
}

}  // namespace detail

// Negative log of the total probability over all CTC alignments mapping to
// the target (forward algorithm). Gradient via the backward recursion:
// dL/dy_t(k) = -sum_{s: E_s = k} exp(alpha_t(s) + beta_t(s) - logP).
template <typename Real>
Tensor<Real> ctc_loss(const Tensor<Real>& log_posteriors, const std::vector<std::size_t>& targets,
                      std::size_t blank) {
  if (log_posteriors.rank() != 2) throw ContractError("ctc_loss: posteriors must be [T,K]");
  const std::size_t t_len = log_posteriors.dim(0), k_len = log_posteriors.dim(1);
  if (blank >= k_len) throw ContractError("ctc_loss: blank id out of range");
  for (auto t : targets) {
    if (t >= k_len) throw LossError("ctc_loss: target id out of range");
    if (t == blank) throw LossError("ctc_loss: target contains the blank id");
  }
  const auto e = detail::ctc_expand(targets, blank);
  const std::size_t s_len = e.size();
  const double ninf = -std::numeric_limits<double>::infinity();

  auto lp = log_posteriors.values();
  auto y = [&](std::size_t t, std::size_t k) { return static_cast<double>(lp[t * k_len + k]); };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && e[s] != blank && e[s] != e[s - 2]; };

  // forward
  std::vector<double> alpha(t_len * s_len, ninf);
  alpha[0] = y(0, e[0]);
  if (s_len > 1) alpha[1] = y(0, e[1]);
  for (std::size_t t = 1; t < t_len; ++t)
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = detail::logadd(a, alpha[(t - 1) * s_len + s - 1]);
      if (skip_ok(s)) a = detail::logadd(a, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = a == ninf ? ninf : a + y(t, e[s]);
    }

  double log_p = alpha[(t_len - 1) * s_len + s_len - 1];
  if (s_len > 1) log_p = detail::logadd(log_p, alpha[(t_len - 1) * s_len + s_len - 2]);
  if (log_p == ninf)
    throw LossError("ctc_loss: target of length " + std::to_string(targets.size()) +
                    " is infeasible for " + std::to_string(t_len) + " frames");

  // backward (exclusive suffix: beta_t(s) covers emissions after t)
  auto beta = std::make_shared<std::vector<double>>(t_len * s_len, ninf);
  (*beta)[(t_len - 1) * s_len + s_len - 1] = 0.0;
  if (s_len > 1) (*beta)[(t_len - 1) * s_len + s_len - 2] = 0.0;
  for (std::size_t t = t_len - 1; t > 0; --t)
    for (std::size_t s = 0; s < s_len; ++s) {
      double b = ninf;
      for (std::size_t s2 = s; s2 <= std::min(s + 2, s_len - 1); ++s2) {
        bool allowed = s2 == s || s2 == s + 1 || (s2 == s + 2 && skip_ok(s2));
        if (!allowed) continue;
        double bb = (*beta)[t * s_len + s2];
        if (bb == ninf) continue;
        b = detail::logadd(b, y(t, e[s2]) + bb);
      }
      (*beta)[(t - 1) * s_len + s] = b;
    }

  auto alpha_ptr = std::make_shared<std::vector<double>>(std::move(alpha));
  auto expanded = std::make_shared<std::vector<std::size_t>>(e);
  auto pn = log_posteriors.node();
  return Tensor<Real>(nn::detail::make_result<Real>(
      {1}, {static_cast<Real>(-log_p)}, {log_posteriors},
      [pn, alpha_ptr, beta, expanded, t_len, s_len, k_len, log_p](nn::detail::Node<Real>& nd) {
        pn->ensure_grad();
        const double g = static_cast<double>(nd.grad[0]);
        for (std::size_t t = 0; t < t_len; ++t)
          for (std::size_t s = 0; s < s_len; ++s) {
            double a = (*alpha_ptr)[t * s_len + s];
            double b = (*beta)[t * s_len + s];
            if (a == -std::numeric_limits<double>::infinity() ||
                b == -std::numeric_limits<double>::infinity())
              continue;
            double gamma = std::exp(a + b - log_p);
            pn->grad[t * k_len + (*expanded)[s]] -= static_cast<Real>(g * gamma);
          }
      }));
}

// Mean over steps of -log p(target token). Teacher-forced: lengths must match.
template <typename Real>
Tensor<Real> ce_loss(const Tensor<Real>& step_log_posteriors, const std::vector<std::size_t>& targets) {
  if (step_log_posteriors.rank() != 2 || step_log_posteriors.dim(0) != targets.size())
    throw ContractError("ce_loss: need one target per step (teacher forcing), got " +
                        std::to_string(targets.size()) + " targets for " +
                        nn::shape_str(step_log_posteriors.shape()));
  Tensor<Real> picked = nn::pick_rows(step_log_posteriors, targets);
  return nn::scale(nn::sum(picked), Real(-1) / static_cast<Real>(targets.size()));
}

// L_all = lambda * L_CTC + (1 - lambda) * L_ce
template <typename Real>
Tensor<Real> combined_loss(const Tensor<Real>& ctc, const Tensor<Real>& ce, double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("combined_loss: lambda must be in [0,1]");
  return nn::add(nn::scale(ctc, static_cast<Real>(lambda)),
                 nn::scale(ce, static_cast<Real>(1.0 - lambda)));
}

// Sum of squared element differences (Eq. form); mean available for logging.
template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& target, const Tensor<Real>& pred) {
  if (target.shape() != pred.shape())
    throw ContractError("mse_loss: shape mismatch " + nn::shape_str(target.shape()) + " vs " +
                        nn::shape_str(pred.shape()));
  Tensor<Real> d = nn::sub(pred, target);
  return nn::sum(nn::mul(d, d));
}

}  // namespace semcom::train
