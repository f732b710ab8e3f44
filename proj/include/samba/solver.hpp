// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The constrained bi-objective policy step: clipped-ratio surrogate on the
// min-norm combination of the cost and exploration advantages, plus the
// ratio-weighted CVaR tail term scaled by the Lagrange multiplier.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "samba/cvar.hpp"
#include "samba/policy.hpp"
#include "samba/rng.hpp"
#include "samba/trajectory.hpp"

namespace samba {

struct UpdateConfig {
  double clip_eps = 0.2;
  int epochs = 80;
  int minibatch = 0;  // 0 = full batch
  double lr = 3e-4;
  double max_grad_norm = 0.5;
  bool clip_cvar_term = true;
  bool use_adam = true;  // plain SGD when false (exact estimator algebra)
};

struct UpdateResult {
  int epochs_run = 0;
  double grad_norm = 0.0;      // last applied step, before clipping
  double surrogate = 0.0;      // last evaluated loss
  bool nan_aborted = false;
};

// Assembles the flattened batch the solver consumes: GAE advantages on both
// streams (normalised over the batch), Monte-Carlo critic targets, and the
// per-trajectory discounted safety losses.
inline TrajectoryBatch build_batch(const std::vector<Trajectory>& trajectories,
                                   const Critic& cost_critic,
                                   const Critic& zeta_critic, double gamma,
                                   double gae_lambda) {
  if (trajectories.empty())
    throw std::invalid_argument("build_batch: no trajectories");
  int total = 0;
  for (const auto& tr : trajectories) total += tr.length();
  const int ds = static_cast<int>(trajectories[0].states.cols());
  const int da = static_cast<int>(trajectories[0].actions.cols());

  TrajectoryBatch b;
  b.n_traj = static_cast<int>(trajectories.size());
  b.states.resize(total, ds);
  b.actions_raw.resize(total, da);
  b.logp_old.resize(total);
  b.adv_cost.resize(total);
  b.adv_zeta.resize(total);
  b.ret_cost.resize(total);
  b.ret_zeta.resize(total);
  b.traj_index.resize(total);
  b.traj_loss.resize(b.n_traj);

  int row = 0;
  for (int k = 0; k < b.n_traj; ++k) {
    const Trajectory& tr = trajectories[k];
    const int T = tr.length();
    b.traj_loss[k] = tr.safety_return(gamma);
    const VectorXd vc = cost_critic.values(tr.states);  // T+1 values
    const VectorXd vz = zeta_critic.values(tr.states);
    const VectorXd ac = gae(tr.costs, vc, gamma, gae_lambda);
    const VectorXd az = gae(tr.zetas, vz, gamma, gae_lambda);
    const VectorXd rc = mc_returns(tr.costs, gamma);
    const VectorXd rz = mc_returns(tr.zetas, gamma);
    for (int t = 0; t < T; ++t, ++row) {
      b.states.row(row) = tr.states.row(t);
      b.actions_raw.row(row) = tr.actions_raw.row(t);
      b.logp_old[row] = tr.log_probs[t];
      b.adv_cost[row] = ac[t];
      b.adv_zeta[row] = az[t];
      b.ret_cost[row] = rc[t];
      b.ret_zeta[row] = rz[t];
      b.traj_index[row] = k;
    }
  }
  normalize_advantages(b.adv_cost);
  normalize_advantages(b.adv_zeta);
  return b;
}

// Policy-gradient estimates of the two objectives, Eq.-style:
//   g = 1/N sum_tau sum_t grad log pi(u_t|x_t) * A(t).
struct ObjectiveGradients {
  VectorXd g_cost;
  VectorXd g_zeta;
};

inline ObjectiveGradients estimate_objective_gradients(
    const GaussianPolicy& policy, const TrajectoryBatch& batch) {
  ObjectiveGradients g;
  const double inv_n = 1.0 / batch.n_traj;
  g.g_cost = policy.weighted_score_gradient(batch.states, batch.actions_raw,
                                            batch.adv_cost * inv_n);
  g.g_zeta = policy.weighted_score_gradient(batch.states, batch.actions_raw,
                                            batch.adv_zeta * inv_n);
  return g;
}

// Proximal clipped update. Minimises, over `epochs` passes:
//   1/N [ sum_t max(r_t A_t, clip(r_t) A_t)
//         + lambda_cvar sum_t max(r_t w_t, clip(r_t) w_t) ]
// with A_t = lambda_pi adv_cost - (1 - lambda_pi) adv_zeta and w_t the CVaR
// tail weight. At the old parameters (all ratios 1) the gradient equals the
// likelihood-ratio estimator assembled from the same ingredients.
inline UpdateResult policy_update(GaussianPolicy& policy,
                                  std::optional<Adam>& adam,
                                  const TrajectoryBatch& batch,
                                  double lambda_pi, double lambda_cvar,
                                  double nu_hat, double alpha,
                                  const UpdateConfig& cfg, Rng& rng) {
  UpdateResult result;
  const int B = batch.steps();
  if (B == 0) throw std::invalid_argument("policy_update: empty batch");

  const VectorXd adv =
      lambda_pi * batch.adv_cost - (1.0 - lambda_pi) * batch.adv_zeta;
  // Trajectory-sum convention: per-step contribution is 1/N, not 1/B. The
  // global inv_n below already carries the 1/N of the CVaR estimator, so the
  // per-step tail weight here is (L - nu)+ / (1 - alpha) alone.
  VectorXd cvar_w =
      batch.cvar_step_weights(nu_hat, alpha) * double(batch.n_traj);
  const double inv_n = 1.0 / batch.n_traj;

  const VectorXd theta_backup = policy.flat_params();
  const std::optional<Adam> adam_backup = adam;

  std::vector<int> order(B);
  for (int i = 0; i < B; ++i) order[i] = i;
  const int mb = cfg.minibatch > 0 ? std::min(cfg.minibatch, B) : B;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (mb < B) rng.shuffle(order.begin(), order.end());
    for (int start = 0; start < B; start += mb) {
      const int count = std::min(mb, B - start);
      MatrixXd states(count, batch.states.cols());
      MatrixXd actions(count, batch.actions_raw.cols());
      VectorXd lp_old(count), a(count), cw(count);
      for (int i = 0; i < count; ++i) {
        const int src = order[start + i];
        states.row(i) = batch.states.row(src);
        actions.row(i) = batch.actions_raw.row(src);
        lp_old[i] = batch.logp_old[src];
        a[i] = adv[src];
        cw[i] = cvar_w[src];
      }
      const VectorXd lp_new = policy.log_probs(states, actions);
      double loss = 0.0;
      VectorXd dlp(count);
      for (int i = 0; i < count; ++i) {
        const double r = std::exp(lp_new[i] - lp_old[i]);
        const double rc = std::clamp(r, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
        // Main surrogate: pessimistic max of clipped and unclipped branches.
        double term, dterm_dr;
        if (r * a[i] >= rc * a[i]) {
          term = r * a[i];
          dterm_dr = a[i];
        } else {
          term = rc * a[i];
          dterm_dr = (r > 1.0 - cfg.clip_eps && r < 1.0 + cfg.clip_eps)
                         ? a[i]
                         : 0.0;
        }
        double cterm = 0.0, dcterm_dr = 0.0;
        if (lambda_cvar != 0.0 && cw[i] != 0.0) {
          if (!cfg.clip_cvar_term || r * cw[i] >= rc * cw[i]) {
            cterm = r * cw[i];
            dcterm_dr = cw[i];
          } else {
            cterm = rc * cw[i];
            dcterm_dr = (r > 1.0 - cfg.clip_eps && r < 1.0 + cfg.clip_eps)
                            ? cw[i]
                            : 0.0;
          }
        }
        loss += inv_n * (term + lambda_cvar * cterm);
        dlp[i] = inv_n * (dterm_dr + lambda_cvar * dcterm_dr) * r;
      }
      VectorXd grad =
          policy.weighted_score_gradient(states, actions, dlp);
      if (!grad.allFinite()) {
        policy.set_flat_params(theta_backup);
        adam = adam_backup;
        result.nan_aborted = true;
        return result;
      }
      result.grad_norm = grad.norm();
      result.surrogate = loss;
      clip_gradient_norm(grad, cfg.max_grad_norm);
      VectorXd params = policy.flat_params();
      if (cfg.use_adam) {
        if (!adam) adam.emplace(policy.param_count(), cfg.lr);
        adam->step(params, grad);
      } else {
        params -= cfg.lr * grad;
      }
      if (!params.allFinite()) {
        policy.set_flat_params(theta_backup);
        adam = adam_backup;
        result.nan_aborted = true;
        return result;
      }
      policy.set_flat_params(params);
    }
    ++result.epochs_run;
  }
  return result;
}

}  // namespace samba
