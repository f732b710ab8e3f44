// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace samba {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Time-indexed rollout record. `states` has one more row than the step
// streams (terminal state included); `actions_raw` keeps the pre-clip
// Gaussian draw whose density the stored log-probs refer to.
struct Trajectory {
  MatrixXd states;       // (T+1) x d_state
  MatrixXd actions;      // T x d_act, clipped, as executed
  MatrixXd actions_raw;  // T x d_act
  VectorXd costs;
  VectorXd safety_losses;
  VectorXd zetas;
  VectorXd log_probs;
  std::vector<std::uint8_t> violations;
  bool diverged = false;

  int length() const { return static_cast<int>(costs.size()); }

  static double discounted(const VectorXd& vals, double gamma) {
    double total = 0.0, disc = 1.0;
    for (int t = 0; t < vals.size(); ++t) {
      total += disc * vals[t];
      disc *= gamma;
    }
    return total;
  }

  double cost_return(double gamma) const { return discounted(costs, gamma); }
  // L(tau): the discounted safety loss entering the CVaR constraint.
  double safety_return(double gamma) const {
    return discounted(safety_losses, gamma);
  }
  double zeta_return(double gamma) const { return discounted(zetas, gamma); }

  // Undiscounted reporting aggregates.
  int tv() const {
    int n = 0;
    for (auto v : violations) n += v ? 1 : 0;
    return n;
  }
  double tc() const { return safety_losses.sum(); }
};

inline void check_consistent(const Trajectory& tr) {
  const int T = tr.length();
  if (tr.states.rows() != T + 1 || tr.actions.rows() != T ||
      tr.actions_raw.rows() != T || tr.safety_losses.size() != T ||
      tr.log_probs.size() != T ||
      static_cast<int>(tr.violations.size()) != T)
    throw std::logic_error("inconsistent trajectory record");
}

}  // namespace samba
