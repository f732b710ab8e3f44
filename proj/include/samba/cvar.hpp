// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Empirical CVaR machinery and the min-norm weighting between the cost and
// exploration gradients. CVaR_a(Z) = min_nu [nu + E[(Z-nu)+]/(1-a)]; the
// empirical estimate plugs in the order-statistic alpha-quantile, which is
// an exact minimiser of the empirical variational form.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "samba/policy.hpp"

namespace samba {

struct CvarConfig {
  double alpha = 0.9;         // risk level in (0,1)
  double limit = 0.025;       // safety threshold xi
  double penalty_lr = 5e-2;   // lambda_cvar dual-ascent rate
  bool clip_surrogate = true; // clip the CVaR term like the main surrogate

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0) || !(limit > 0.0))
      throw std::invalid_argument("invalid CVaR config");
  }
};

struct SolverState {
  double lambda_cvar = 0.0;
  double nu_hat = 0.0;
  double lambda_pi = 1.0;
  long updates = 0;
  bool stationary = false;
  bool nan_flagged = false;
};

struct CvarEstimate {
  double cvar = 0.0;
  double nu_hat = 0.0;
};

// nu_hat is the order-statistic alpha-quantile L_(ceil(n*alpha)); with that
// choice the plug-in estimate equals the minimum of the empirical
// variational objective.
inline CvarEstimate cvar_empirical(const VectorXd& losses, double alpha) {
  const int n = static_cast<int>(losses.size());
  if (n < 1) throw std::invalid_argument("cvar_empirical: empty batch");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("cvar_empirical: alpha must be in (0,1)");
  std::vector<double> sorted(losses.data(), losses.data() + n);
  std::sort(sorted.begin(), sorted.end());
  int k = static_cast<int>(std::ceil(n * alpha - 1e-12));
  k = std::clamp(k, 1, n);
  CvarEstimate e;
  e.nu_hat = sorted[k - 1];
  double excess = 0.0;
  for (double l : sorted) excess += std::max(l - e.nu_hat, 0.0);
  e.cvar = e.nu_hat + excess / n / (1.0 - alpha);
  return e;
}

// Flattened per-step view of a batch of model trajectories, as consumed by
// the policy optimiser.
struct TrajectoryBatch {
  MatrixXd states;       // B x d_state
  MatrixXd actions_raw;  // B x d_act
  VectorXd logp_old;     // B
  VectorXd adv_cost;     // B, normalised
  VectorXd adv_zeta;     // B, normalised
  VectorXd ret_cost;     // B, Monte-Carlo cost returns (critic targets)
  VectorXd ret_zeta;     // B
  std::vector<int> traj_index;  // B, which trajectory each step belongs to
  VectorXd traj_loss;    // n_traj, discounted safety losses L(tau)
  int n_traj = 0;

  int steps() const { return static_cast<int>(logp_old.size()); }

  // Per-step CVaR tail weight 1[L >= nu] (L - nu) / (N (1 - alpha)).
  VectorXd cvar_step_weights(double nu_hat, double alpha) const {
    VectorXd w(steps());
    const double scale = 1.0 / (n_traj * (1.0 - alpha));
    for (int i = 0; i < steps(); ++i) {
      const double L = traj_loss[traj_index[i]];
      w[i] = (L >= nu_hat) ? scale * (L - nu_hat) : 0.0;
    }
    return w;
  }
};

// Likelihood-ratio CVaR gradient with nu_hat as baseline:
//   1/(N(1-a)) sum_tau 1[L >= nu] (L - nu) sum_t grad log pi(u_t | x_t).
inline VectorXd cvar_gradient(const GaussianPolicy& policy,
                              const TrajectoryBatch& batch, double nu_hat,
                              double alpha) {
  const VectorXd w = batch.cvar_step_weights(nu_hat, alpha);
  if (w.size() == 0) return VectorXd::Zero(policy.param_count());
  return policy.weighted_score_gradient(batch.states, batch.actions_raw, w);
}

struct MinNormResult {
  double lambda = 1.0;
  bool stationary = false;
};

// Minimum-norm point on the segment between the two descent directions:
//   lambda* = argmin_{l in [0,1]} || l g1 + (1-l) g2 ||^2
// with the closed form clamp(((g2-g1).g2) / ||g1-g2||^2, 0, 1).
inline MinNormResult min_norm_lambda(const VectorXd& g_cost,
                                     const VectorXd& g_zeta_descent) {
  if (g_cost.size() != g_zeta_descent.size())
    throw std::invalid_argument("min_norm_lambda: dimension mismatch");
  if (!g_cost.allFinite() || !g_zeta_descent.allFinite())
    throw std::invalid_argument("min_norm_lambda: non-finite gradients");
  MinNormResult r;
  const VectorXd diff = g_cost - g_zeta_descent;
  const double denom = diff.squaredNorm();
  if (g_cost.squaredNorm() == 0.0 && g_zeta_descent.squaredNorm() == 0.0) {
    r.lambda = 1.0;
    r.stationary = true;
    return r;
  }
  if (denom == 0.0) {
    r.lambda = 1.0;  // identical gradients, any weighting optimal
    return r;
  }
  r.lambda = std::clamp(-diff.dot(g_zeta_descent) / denom, 0.0, 1.0);
  return r;
}

// Projected dual ascent on the CVaR constraint.
inline void update_lambda_cvar(SolverState& state, double cvar_estimate,
                               double limit, double penalty_lr) {
  if (!std::isfinite(cvar_estimate))
    throw std::invalid_argument("update_lambda_cvar: non-finite estimate");
  state.lambda_cvar =
      std::max(0.0, state.lambda_cvar + penalty_lr * (cvar_estimate - limit));
}

}  // namespace samba
