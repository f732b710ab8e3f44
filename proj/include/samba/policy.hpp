// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Gaussian policy over embedded observations plus the two value critics
// (cost value and exploration value). All gradients are exact reverse-mode;
// the finite-difference checks in the tests are the module's master
// property.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "samba/gp.hpp"
#include "samba/mlp.hpp"
#include "samba/rng.hpp"

namespace samba {

constexpr double kLogStdFloor = -20.0;
constexpr double kLogStdCeil = 2.0;

struct PolicySample {
  VectorXd action_raw;   // pre-clip Gaussian draw; density point
  VectorXd action;       // clipped to env bounds; what gets executed
  double log_prob = 0.0; // exact pre-clip density at action_raw
};

class GaussianPolicy {
 public:
  GaussianPolicy() = default;
  GaussianPolicy(const FeatureMap& map, const VectorXd& action_low,
                 const VectorXd& action_high, int hidden = 32)
      : map_(map),
        action_low_(action_low),
        action_high_(action_high),
        net_(map.obs_dim(), hidden, map.action_dim),
        log_std_(VectorXd::Constant(map.action_dim, std::log(0.5))) {}

  void init(Rng& rng) {
    net_.init_orthogonal(rng, std::sqrt(2.0), 0.01);
    log_std_.setConstant(std::log(0.5));
  }

  int obs_dim() const { return net_.input_dim(); }
  int action_dim() const { return net_.output_dim(); }
  const FeatureMap& feature_map() const { return map_; }
  const VectorXd& action_low() const { return action_low_; }
  const VectorXd& action_high() const { return action_high_; }

  int param_count() const {
    return static_cast<int>(net_.params().size() + log_std_.size());
  }

  VectorXd flat_params() const {
    VectorXd p(param_count());
    p.head(net_.params().size()) = net_.params();
    p.tail(log_std_.size()) = log_std_;
    return p;
  }

  void set_flat_params(const VectorXd& p) {
    if (p.size() != param_count())
      throw std::invalid_argument("policy parameter size mismatch");
    net_.params() = p.head(net_.params().size());
    log_std_ = p.tail(log_std_.size())
                   .cwiseMax(kLogStdFloor)
                   .cwiseMin(kLogStdCeil);
  }

  MatrixXd observe(const MatrixXd& states) const {
    MatrixXd obs(states.rows(), map_.obs_dim());
    for (int i = 0; i < states.rows(); ++i)
      obs.row(i) = map_.embed_state(states.row(i).transpose()).transpose();
    return obs;
  }

  VectorXd mean_action(const VectorXd& state) const {
    return net_.forward(observe(state.transpose())).row(0).transpose();
  }

  PolicySample sample(const VectorXd& state, Rng& rng) const {
    PolicySample s;
    const VectorXd mean = mean_action(state);
    s.action_raw.resize(mean.size());
    for (int d = 0; d < mean.size(); ++d)
      s.action_raw[d] = mean[d] + std::exp(log_std_[d]) * rng.normal();
    s.action = s.action_raw.cwiseMax(action_low_).cwiseMin(action_high_);
    s.log_prob = log_prob_given_mean(mean, s.action_raw);
    return s;
  }

  double log_prob(const VectorXd& state, const VectorXd& action_raw) const {
    return log_prob_given_mean(mean_action(state), action_raw);
  }

  // Batch log densities: states B x d_state, actions B x d_act.
  VectorXd log_probs(const MatrixXd& states, const MatrixXd& actions_raw,
                     Mlp::Cache* cache = nullptr,
                     MatrixXd* means_out = nullptr) const {
    const MatrixXd means = net_.forward(observe(states), cache);
    if (means_out) *means_out = means;
    const int B = static_cast<int>(states.rows());
    VectorXd lp(B);
    for (int i = 0; i < B; ++i)
      lp[i] = log_prob_given_mean(means.row(i).transpose(),
                                  actions_raw.row(i).transpose());
    return lp;
  }

  // Exact gradient of sum_i w_i log pi(u_i | x_i) over all policy
  // parameters (mean path then log-std block).
  VectorXd weighted_score_gradient(const MatrixXd& states,
                                   const MatrixXd& actions_raw,
                                   const VectorXd& weights) const {
    Mlp::Cache cache;
    const MatrixXd means = net_.forward(observe(states), &cache);
    const int B = static_cast<int>(states.rows());
    const int da = action_dim();
    const VectorXd inv_var = (-2.0 * log_std_).array().exp();
    MatrixXd dMean(B, da);
    VectorXd g_logstd = VectorXd::Zero(da);
    for (int i = 0; i < B; ++i) {
      for (int d = 0; d < da; ++d) {
        const double diff = actions_raw(i, d) - means(i, d);
        dMean(i, d) = weights[i] * diff * inv_var[d];
        g_logstd[d] += weights[i] * (diff * diff * inv_var[d] - 1.0);
      }
    }
    VectorXd grad(param_count());
    grad.head(net_.params().size()) = net_.backward(cache, dMean);
    grad.tail(da) = g_logstd;
    return grad;
  }

  VectorXd log_prob_grad(const VectorXd& state,
                         const VectorXd& action_raw) const {
    return weighted_score_gradient(state.transpose(), action_raw.transpose(),
                                   VectorXd::Ones(1));
  }

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const VectorXd& log_std() const { return log_std_; }
  VectorXd& log_std() { return log_std_; }

 private:
  double log_prob_given_mean(const VectorXd& mean,
                             const VectorXd& action_raw) const {
    double lp = 0.0;
    for (int d = 0; d < mean.size(); ++d) {
      const double s = std::exp(log_std_[d]);
      const double z = (action_raw[d] - mean[d]) / s;
      lp += -0.5 * z * z - log_std_[d] - 0.5 * std::log(2.0 * M_PI);
    }
    return lp;
  }

  FeatureMap map_;
  VectorXd action_low_, action_high_;
  Mlp net_;
  VectorXd log_std_;
};

class Critic {
 public:
  Critic() = default;
  explicit Critic(const FeatureMap& map, int hidden = 32)
      : map_(map), net_(map.obs_dim(), hidden, 1) {}

  void init(Rng& rng) { net_.init_orthogonal(rng, std::sqrt(2.0), 1.0); }

  double eval(const VectorXd& state) const {
    return net_.forward(observe(state.transpose()))(0, 0);
  }

  VectorXd values(const MatrixXd& states) const {
    return net_.forward(observe(states)).col(0);
  }

  // Mean 1/2 squared error over the batch and its exact gradient.
  std::pair<double, VectorXd> loss_and_grad(const MatrixXd& states,
                                            const VectorXd& targets) const {
    if (states.rows() != targets.size() || targets.size() == 0)
      throw std::invalid_argument("critic batch mismatch or empty");
    Mlp::Cache cache;
    const VectorXd v = net_.forward(observe(states), &cache).col(0);
    const VectorXd err = v - targets;
    const double loss = 0.5 * err.squaredNorm() / err.size();
    const MatrixXd dY = err / err.size();
    return {loss, net_.backward(cache, dY)};
  }

  // One plain gradient step; callers wanting adaptive updates keep their own
  // Adam state over net().params().
  double update(const MatrixXd& states, const VectorXd& targets, double lr,
                double max_grad_norm = 0.0) {
    auto [loss, grad] = loss_and_grad(states, targets);
    if (max_grad_norm > 0.0) clip_gradient_norm(grad, max_grad_norm);
    net_.params() -= lr * grad;
    return loss;
  }

  MatrixXd observe(const MatrixXd& states) const {
    MatrixXd obs(states.rows(), map_.obs_dim());
    for (int i = 0; i < states.rows(); ++i)
      obs.row(i) = map_.embed_state(states.row(i).transpose()).transpose();
    return obs;
  }

  const Mlp& net() const { return net_; }
  Mlp& net() { return net_; }
  const FeatureMap& feature_map() const { return map_; }

 private:
  FeatureMap map_;
  Mlp net_;
};

// Discounted Monte-Carlo returns, backward recursion. `terminal_value`
// bootstraps a truncated horizon; zero reproduces the plain sum.
inline VectorXd mc_returns(const VectorXd& costs, double gamma,
                           double terminal_value = 0.0) {
  if (costs.size() == 0)
    throw std::invalid_argument("mc_returns: empty trajectory");
  const int T = static_cast<int>(costs.size());
  VectorXd R(T);
  double next = terminal_value;
  for (int t = T - 1; t >= 0; --t) {
    R[t] = costs[t] + gamma * next;
    next = R[t];
  }
  return R;
}

// GAE(gamma, lambda) on TD residuals. `values` has length T+1; the last
// entry is the terminal bootstrap (zero for absorbing ends).
inline VectorXd gae(const VectorXd& costs, const VectorXd& values,
                    double gamma, double lambda) {
  const int T = static_cast<int>(costs.size());
  if (T == 0) throw std::invalid_argument("gae: empty trajectory");
  if (values.size() != T + 1)
    throw std::invalid_argument("gae: values must have length T+1");
  VectorXd adv(T);
  double acc = 0.0;
  for (int t = T - 1; t >= 0; --t) {
    const double delta = costs[t] + gamma * values[t + 1] - values[t];
    acc = delta + gamma * lambda * acc;
    adv[t] = acc;
  }
  return adv;
}

// In-place batch normalisation to zero mean, unit std.
inline void normalize_advantages(VectorXd& adv) {
  if (adv.size() == 0) return;
  const double mean = adv.mean();
  const double var = (adv.array() - mean).square().sum() / adv.size();
  const double std = std::sqrt(var);
  adv.array() -= mean;
  if (std > 1e-8) adv /= std;
}

struct PolicyBundle {
  GaussianPolicy policy;
  Critic cost_critic;
  Critic zeta_critic;
  std::string env_name;

  static PolicyBundle make(const FeatureMap& map, const VectorXd& action_low,
                           const VectorXd& action_high, int hidden,
                           Rng& rng) {
    PolicyBundle b;
    b.policy = GaussianPolicy(map, action_low, action_high, hidden);
    b.cost_critic = Critic(map, hidden);
    b.zeta_critic = Critic(map, hidden);
    b.policy.init(rng);
    b.cost_critic.init(rng);
    b.zeta_critic.init(rng);
    return b;
  }

  nlohmann::json to_json() const {
    auto vec = [](const VectorXd& v) {
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    nlohmann::json j;
    j["format"] = "samba-policy-v1";
    j["env"] = env_name;
    const auto& map = policy.feature_map();
    j["feature_map"] = {{"state_dim", map.state_dim},
                        {"action_dim", map.action_dim},
                        {"angle_dims", map.angle_dims}};
    j["hidden"] = policy.net().hidden_dim();
    j["action_low"] = vec(policy.action_low());
    j["action_high"] = vec(policy.action_high());
    j["theta"] = vec(policy.flat_params());
    j["phi1"] = vec(cost_critic.net().params());
    j["phi2"] = vec(zeta_critic.net().params());
    return j;
  }

  static PolicyBundle from_json(const nlohmann::json& j) {
    if (j.at("format") != "samba-policy-v1")
      throw std::invalid_argument("unknown policy checkpoint format");
    auto vec = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<double>>();
      return Eigen::Map<const VectorXd>(v.data(), v.size()).eval();
    };
    FeatureMap map;
    const auto& fm = j.at("feature_map");
    map.state_dim = fm.at("state_dim").get<int>();
    map.action_dim = fm.at("action_dim").get<int>();
    map.angle_dims = fm.at("angle_dims").get<std::vector<int>>();
    PolicyBundle b;
    b.env_name = j.value("env", std::string());
    b.policy = GaussianPolicy(map, vec(j.at("action_low")),
                              vec(j.at("action_high")),
                              j.at("hidden").get<int>());
    b.cost_critic = Critic(map, j.at("hidden").get<int>());
    b.zeta_critic = Critic(map, j.at("hidden").get<int>());
    b.policy.set_flat_params(vec(j.at("theta")));
    b.cost_critic.net().params() = vec(j.at("phi1"));
    b.zeta_critic.net().params() = vec(j.at("phi2"));
    return b;
  }
};

}  // namespace samba
