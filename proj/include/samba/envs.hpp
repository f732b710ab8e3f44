// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Safety-augmented classic-control environments. Both systems monitor the
// (first) pole angle against a closed unsafe interval [usr_min, usr_max];
// a wider hazard band around it carries a piecewise-linear safety loss that
// peaks at the hazard centre and vanishes at the edges.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "samba/gp.hpp"
#include "samba/rng.hpp"

namespace samba {

struct SafetySpec {
  double usr_min = 20.0 * M_PI / 180.0;
  double usr_max = 30.0 * M_PI / 180.0;
  double hazard_margin = M_PI / 4.0;
  double scale = 1.0;

  double hz_min() const { return usr_min - hazard_margin; }
  double hz_max() const { return usr_max + hazard_margin; }

  void validate() const {
    if (!(usr_min < usr_max) || !(hazard_margin > 0.0) || !(scale > 0.0))
      throw std::invalid_argument("invalid safety spec");
  }
};

// Hinge profile: scale at the hazard centre, zero at and beyond the edges.
inline double safety_loss(double theta, const SafetySpec& spec) {
  const double c = 0.5 * (spec.hz_min() + spec.hz_max());
  const double w = 0.5 * (spec.hz_max() - spec.hz_min());
  return spec.scale * std::max(0.0, 1.0 - std::abs(theta - c) / w);
}

// Closed interval: the boundary counts as a violation.
inline bool is_violation(double theta, const SafetySpec& spec) {
  return theta >= spec.usr_min && theta <= spec.usr_max;
}

// Default per-step scale: a trajectory pinned at the hazard centre for the
// full horizon accumulates a discounted loss of about 1.
inline double default_safety_scale(double gamma, int horizon) {
  if (gamma >= 1.0) return 1.0 / horizon;
  return (1.0 - gamma) / (1.0 - std::pow(gamma, horizon));
}

struct TerminationRule {
  int window = 5;
  double cost_threshold = 0.01;
};

// True once the last `window` costs are all at or below the threshold
// (the trajectory is considered adequately stabilised).
inline bool should_terminate(const std::deque<double>& recent_costs,
                             const TerminationRule& rule = {}) {
  if (static_cast<int>(recent_costs.size()) < rule.window) return false;
  for (auto it = recent_costs.end() - rule.window; it != recent_costs.end();
       ++it)
    if (*it > rule.cost_threshold) return false;
  return true;
}

struct PendulumParams {
  double gravity = 9.81;
  double mass = 1.0;
  double length = 1.0;
  double dt = 0.05;
  double max_torque = 2.0;
  double max_speed = 8.0;
  double theta_goal = 0.0;
  // Initial distribution: theta ~ U[lo, hi], thetadot ~ U[-b, b]. The default
  // band sits just outside the hazard region, so feasible policies exist for
  // tight CVaR limits while the cost term still pulls toward the hazard.
  double init_theta_lo = -0.75;
  double init_theta_hi = -0.45;
  double init_speed = 0.3;
};

struct CartDoublePoleParams {
  double cart_mass = 0.5;
  double pole1_mass = 0.5;
  double pole2_mass = 0.5;
  double pole1_length = 0.6;
  double pole2_length = 0.6;
  double gravity = 9.81;
  double dt = 0.05;
  int substeps = 4;  // RK4 sub-intervals per control step
  double max_force = 10.0;
  double init_range = 0.1;  // every component ~ U[-r, r]
};

// Frictionless pendulum, theta measured from upright, semi-implicit Euler.
//   thetadd = 3g/(2l) sin(theta) + 3u/(m l^2)
inline VectorXd pendulum_step(const VectorXd& state, double torque,
                              const PendulumParams& p) {
  const double u = std::clamp(torque, -p.max_torque, p.max_torque);
  const double theta = state[0];
  const double thdot = state[1];
  const double thdd = 3.0 * p.gravity / (2.0 * p.length) * std::sin(theta) +
                      3.0 * u / (p.mass * p.length * p.length);
  const double thdot_next =
      std::clamp(thdot + thdd * p.dt, -p.max_speed, p.max_speed);
  VectorXd next(2);
  next[1] = thdot_next;
  next[0] = wrap_angle(theta + thdot_next * p.dt);
  return next;
}

// Rod-pendulum energy about the pivot; conserved by the continuous system
// when unactuated.
inline double pendulum_energy(const VectorXd& state,
                              const PendulumParams& p) {
  const double inertia = p.mass * p.length * p.length / 3.0;
  return 0.5 * inertia * state[1] * state[1] +
         0.5 * p.mass * p.gravity * p.length * std::cos(state[0]);
}

namespace detail {

// Cart with two serially hinged uniform rods, angles from upright.
// Generalised coordinates (x, th1, th2); solves M(q) qdd = b(q, qd, F).
inline Eigen::Vector3d cdp_accel(const Eigen::Matrix<double, 6, 1>& s,
                                 double force,
                                 const CartDoublePoleParams& p) {
  const double th1 = s[2], w1 = s[3], th2 = s[4], w2 = s[5];
  const double c1 = std::cos(th1), s1 = std::sin(th1);
  const double c2 = std::cos(th2), s2 = std::sin(th2);
  const double c12 = std::cos(th1 - th2), s12 = std::sin(th1 - th2);
  const double m1 = p.pole1_mass, m2 = p.pole2_mass, mc = p.cart_mass;
  const double l1 = p.pole1_length, l2 = p.pole2_length, g = p.gravity;

  Eigen::Matrix3d A;
  A(0, 0) = mc + m1 + m2;
  A(0, 1) = (0.5 * m1 + m2) * l1 * c1;
  A(0, 2) = 0.5 * m2 * l2 * c2;
  A(1, 1) = (m1 / 3.0 + m2) * l1 * l1;
  A(1, 2) = 0.5 * m2 * l1 * l2 * c12;
  A(2, 2) = m2 * l2 * l2 / 3.0;
  A(1, 0) = A(0, 1);
  A(2, 0) = A(0, 2);
  A(2, 1) = A(1, 2);

  Eigen::Vector3d b;
  b[0] = force + (0.5 * m1 + m2) * l1 * s1 * w1 * w1 +
         0.5 * m2 * l2 * s2 * w2 * w2;
  b[1] = -0.5 * m2 * l1 * l2 * s12 * w2 * w2 +
         (0.5 * m1 + m2) * g * l1 * s1;
  b[2] = 0.5 * m2 * l1 * l2 * s12 * w1 * w1 + 0.5 * m2 * g * l2 * s2;

  return A.ldlt().solve(b);
}

}  // namespace detail

// RK4 step of the cart-double-pole; both angles wrapped afterwards.
inline VectorXd cartpole_double_step(const VectorXd& state, double force,
                                     const CartDoublePoleParams& p) {
  const double f = std::clamp(force, -p.max_force, p.max_force);
  using State = Eigen::Matrix<double, 6, 1>;
  auto deriv = [&](const State& s) {
    const Eigen::Vector3d acc = detail::cdp_accel(s, f, p);
    State d;
    d[0] = s[1];
    d[1] = acc[0];
    d[2] = s[3];
    d[3] = acc[1];
    d[4] = s[5];
    d[5] = acc[2];
    return d;
  };
  State s = state;
  const int sub = std::max(1, p.substeps);
  const double h = p.dt / sub;
  for (int step = 0; step < sub; ++step) {
    const State k1 = deriv(s);
    const State k2 = deriv(s + 0.5 * h * k1);
    const State k3 = deriv(s + 0.5 * h * k2);
    const State k4 = deriv(s + h * k3);
    s += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  s[2] = wrap_angle(s[2]);
  s[4] = wrap_angle(s[4]);
  VectorXd out(6);
  out = s;
  return out;
}

inline double cartpole_double_energy(const VectorXd& s,
                                     const CartDoublePoleParams& p) {
  const double xd = s[1], th1 = s[2], w1 = s[3], th2 = s[4], w2 = s[5];
  const double c1 = std::cos(th1), c2 = std::cos(th2);
  const double m1 = p.pole1_mass, m2 = p.pole2_mass, mc = p.cart_mass;
  const double l1 = p.pole1_length, l2 = p.pole2_length, g = p.gravity;
  const double ke = 0.5 * (mc + m1 + m2) * xd * xd +
                    0.5 * (m1 / 3.0 + m2) * l1 * l1 * w1 * w1 +
                    0.5 * (m2 * l2 * l2 / 3.0) * w2 * w2 +
                    (0.5 * m1 + m2) * l1 * c1 * xd * w1 +
                    0.5 * m2 * l2 * c2 * xd * w2 +
                    0.5 * m2 * l1 * l2 * std::cos(th1 - th2) * w1 * w2;
  const double pe = (0.5 * m1 + m2) * g * l1 * c1 + 0.5 * m2 * g * l2 * c2;
  return ke + pe;
}

class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::string name() const = 0;
  virtual int state_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual VectorXd action_low() const = 0;
  virtual VectorXd action_high() const = 0;
  virtual std::vector<int> angle_dims() const = 0;
  virtual int monitored_dim() const = 0;
  virtual VectorXd sample_initial(Rng& rng) const = 0;
  virtual VectorXd step(const VectorXd& state, const VectorXd& action) const = 0;
  virtual double cost(const VectorXd& state, const VectorXd& action) const = 0;

  const SafetySpec& safety_spec() const { return safety_; }
  void set_safety_spec(const SafetySpec& spec) {
    spec.validate();
    safety_ = spec;
  }

  double safety(const VectorXd& state) const {
    return safety_loss(state[monitored_dim()], safety_);
  }
  bool violation(const VectorXd& state) const {
    return is_violation(state[monitored_dim()], safety_);
  }

  VectorXd clip_action(const VectorXd& a) const {
    return a.cwiseMax(action_low()).cwiseMin(action_high());
  }

  FeatureMap feature_map() const {
    FeatureMap map;
    map.state_dim = state_dim();
    map.action_dim = action_dim();
    map.angle_dims = angle_dims();
    return map;
  }

 protected:
  SafetySpec safety_;
};

class SafePendulum final : public Environment {
 public:
  explicit SafePendulum(PendulumParams params = {}, SafetySpec spec = {})
      : params_(params) {
    set_safety_spec(spec);
  }

  std::string name() const override { return "safe_pendulum"; }
  int state_dim() const override { return 2; }
  int action_dim() const override { return 1; }
  VectorXd action_low() const override {
    return VectorXd::Constant(1, -params_.max_torque);
  }
  VectorXd action_high() const override {
    return VectorXd::Constant(1, params_.max_torque);
  }
  std::vector<int> angle_dims() const override { return {0}; }
  int monitored_dim() const override { return 0; }

  VectorXd sample_initial(Rng& rng) const override {
    VectorXd s(2);
    s[0] = rng.uniform(params_.init_theta_lo, params_.init_theta_hi);
    s[1] = rng.uniform(-params_.init_speed, params_.init_speed);
    return s;
  }

  VectorXd step(const VectorXd& state, const VectorXd& action) const override {
    return pendulum_step(state, action[0], params_);
  }

  double cost(const VectorXd& state, const VectorXd& action) const override {
    const double e = wrap_angle(state[0] - params_.theta_goal);
    return e * e + 0.1 * state[1] * state[1] + 0.001 * action[0] * action[0];
  }

  const PendulumParams& params() const { return params_; }

 private:
  PendulumParams params_;
};

class SafeCartDoublePole final : public Environment {
 public:
  explicit SafeCartDoublePole(CartDoublePoleParams params = {},
                              SafetySpec spec = {})
      : params_(params) {
    set_safety_spec(spec);
  }

  std::string name() const override { return "safe_cartpole_double"; }
  int state_dim() const override { return 6; }
  int action_dim() const override { return 1; }
  VectorXd action_low() const override {
    return VectorXd::Constant(1, -params_.max_force);
  }
  VectorXd action_high() const override {
    return VectorXd::Constant(1, params_.max_force);
  }
  std::vector<int> angle_dims() const override { return {2, 4}; }
  int monitored_dim() const override { return 2; }

  VectorXd sample_initial(Rng& rng) const override {
    VectorXd s(6);
    for (int i = 0; i < 6; ++i)
      s[i] = rng.uniform(-params_.init_range, params_.init_range);
    return s;
  }

  VectorXd step(const VectorXd& state, const VectorXd& action) const override {
    return cartpole_double_step(state, action[0], params_);
  }

  // Squared distance of the second pole tip from the upright target point,
  // plus a small action penalty.
  double cost(const VectorXd& state, const VectorXd& action) const override {
    const double l1 = params_.pole1_length, l2 = params_.pole2_length;
    const double tip_x =
        state[0] + l1 * std::sin(state[2]) + l2 * std::sin(state[4]);
    const double tip_y = l1 * std::cos(state[2]) + l2 * std::cos(state[4]);
    const double dx = tip_x - 0.0;
    const double dy = tip_y - (l1 + l2);
    return dx * dx + dy * dy + 0.001 * action[0] * action[0];
  }

  const CartDoublePoleParams& params() const { return params_; }

 private:
  CartDoublePoleParams params_;
};

}  // namespace samba
