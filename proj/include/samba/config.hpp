// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Hierarchical run configuration: environment / dynamics_model / agent /
// runner sections plus the seed. Files may be partial; the effective
// configuration (defaults applied, derived values resolved) is echoed to the
// output directory so no run depends on silent defaults.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "samba/cvar.hpp"
#include "samba/envs.hpp"
#include "samba/gp.hpp"
#include "samba/io.hpp"

namespace samba {

struct EnvSection {
  std::string name = "safe_pendulum";
  PendulumParams pendulum;
  CartDoublePoleParams cartpole_double;
  SafetySpec safety;  // safety.scale <= 0 means: derive from gamma/horizon
  TerminationRule termination;

  EnvSection() { safety.scale = 0.0; }
};

struct AgentSection {
  int n_update_epochs = 80;
  int minibatch_size = 0;  // 0 = full batch
  int n_neurons = 32;
  double policy_learning_rate = 3e-4;
  double value_function_learning_rate = 1e-3;
  double penalty_learning_rate = 5e-2;
  double clipping = 0.2;
  double max_gradient_norm = 0.5;
  double gamma = 0.99;
  double gae_lambda = 0.97;
  double cvar_cost_limit = 0.025;
  double cvar_risk_alpha = 0.9;
  double lambda_cvar_init = 1.0;  // dual variable start, any value >= 0
  int n_critic_epochs = 80;
  bool clip_cvar_surrogate = true;
  std::string exploration_metric = "loo";  // loo | bootstrap
  int bootstrap_partitions = 8;
  int loo_subsample = 0;  // 0 = exact expectation over all left-out indices
  bool exploration_enabled = true;  // ablation: false pins lambda_pi = 1
  bool cvar_enabled = true;         // ablation: false pins lambda_cvar = 0
};

struct RunnerSection {
  int env_iterations = 50;     // J
  int control_iterations = 4;  // K
  int real_traces = 1;         // B
  int model_traces = 30;       // N
  int max_trajectory_length = 30;
  bool deterministic = true;
  int checkpoint_every = 1;
  double divergence_bound = 1e3;
};

struct RunConfig {
  EnvSection environment;
  GpConfig dynamics_model;
  AgentSection agent;
  RunnerSection runner;
  std::uint64_t seed = 0;

  void validate() const {
    if (runner.env_iterations < 1 || runner.control_iterations < 0 ||
        runner.real_traces < 1 || runner.model_traces < 1 ||
        runner.max_trajectory_length < 1)
      throw std::invalid_argument("runner counts must be positive");
    if (!(agent.gamma >= 0.0 && agent.gamma < 1.0))
      throw std::invalid_argument("gamma must be in [0, 1)");
    if (!(agent.cvar_risk_alpha > 0.0 && agent.cvar_risk_alpha < 1.0) ||
        !(agent.cvar_cost_limit > 0.0))
      throw std::invalid_argument("invalid CVaR settings");
    if (agent.exploration_metric != "loo" &&
        agent.exploration_metric != "bootstrap")
      throw std::invalid_argument("exploration_metric must be loo or bootstrap");
  }

  // Resolves derived defaults (the per-step safety scale).
  RunConfig effective() const {
    RunConfig cfg = *this;
    if (cfg.environment.safety.scale <= 0.0)
      cfg.environment.safety.scale = default_safety_scale(
          cfg.agent.gamma, cfg.runner.max_trajectory_length);
    cfg.validate();
    cfg.environment.safety.validate();
    return cfg;
  }

  CvarConfig cvar() const {
    CvarConfig c;
    c.alpha = agent.cvar_risk_alpha;
    c.limit = agent.cvar_cost_limit;
    c.penalty_lr = agent.penalty_learning_rate;
    c.clip_surrogate = agent.clip_cvar_surrogate;
    return c;
  }
};

inline std::unique_ptr<Environment> make_environment(const EnvSection& env) {
  std::unique_ptr<Environment> out;
  if (env.name == "safe_pendulum")
    out = std::make_unique<SafePendulum>(env.pendulum, env.safety);
  else if (env.name == "safe_cartpole_double")
    out = std::make_unique<SafeCartDoublePole>(env.cartpole_double, env.safety);
  else
    throw std::invalid_argument("unknown environment: " + env.name);
  return out;
}

// --- JSON mapping -----------------------------------------------------------

inline void to_json(nlohmann::json& j, const PendulumParams& p) {
  j = {{"gravity", p.gravity},     {"mass", p.mass},
       {"length", p.length},       {"dt", p.dt},
       {"max_torque", p.max_torque}, {"max_speed", p.max_speed},
       {"theta_goal", p.theta_goal}, {"init_theta_lo", p.init_theta_lo},
       {"init_theta_hi", p.init_theta_hi}, {"init_speed", p.init_speed}};
}

inline void from_json(const nlohmann::json& j, PendulumParams& p) {
  p.gravity = j.value("gravity", p.gravity);
  p.mass = j.value("mass", p.mass);
  p.length = j.value("length", p.length);
  p.dt = j.value("dt", p.dt);
  p.max_torque = j.value("max_torque", p.max_torque);
  p.max_speed = j.value("max_speed", p.max_speed);
  p.theta_goal = j.value("theta_goal", p.theta_goal);
  p.init_theta_lo = j.value("init_theta_lo", p.init_theta_lo);
  p.init_theta_hi = j.value("init_theta_hi", p.init_theta_hi);
  p.init_speed = j.value("init_speed", p.init_speed);
}

inline void to_json(nlohmann::json& j, const CartDoublePoleParams& p) {
  j = {{"cart_mass", p.cart_mass},       {"pole1_mass", p.pole1_mass},
       {"pole2_mass", p.pole2_mass},     {"pole1_length", p.pole1_length},
       {"pole2_length", p.pole2_length}, {"gravity", p.gravity},
       {"dt", p.dt},                     {"substeps", p.substeps},
       {"max_force", p.max_force},       {"init_range", p.init_range}};
}

inline void from_json(const nlohmann::json& j, CartDoublePoleParams& p) {
  p.cart_mass = j.value("cart_mass", p.cart_mass);
  p.pole1_mass = j.value("pole1_mass", p.pole1_mass);
  p.pole2_mass = j.value("pole2_mass", p.pole2_mass);
  p.pole1_length = j.value("pole1_length", p.pole1_length);
  p.pole2_length = j.value("pole2_length", p.pole2_length);
  p.gravity = j.value("gravity", p.gravity);
  p.dt = j.value("dt", p.dt);
  p.substeps = j.value("substeps", p.substeps);
  p.max_force = j.value("max_force", p.max_force);
  p.init_range = j.value("init_range", p.init_range);
}

inline void to_json(nlohmann::json& j, const SafetySpec& s) {
  j = {{"usr_min", s.usr_min},
       {"usr_max", s.usr_max},
       {"hazard_margin", s.hazard_margin},
       {"scale", s.scale}};
}

inline void from_json(const nlohmann::json& j, SafetySpec& s) {
  s.usr_min = j.value("usr_min", s.usr_min);
  s.usr_max = j.value("usr_max", s.usr_max);
  s.hazard_margin = j.value("hazard_margin", s.hazard_margin);
  s.scale = j.value("scale", s.scale);
}

inline void to_json(nlohmann::json& j, const TerminationRule& t) {
  j = {{"window", t.window}, {"cost_threshold", t.cost_threshold}};
}

inline void from_json(const nlohmann::json& j, TerminationRule& t) {
  t.window = j.value("window", t.window);
  t.cost_threshold = j.value("cost_threshold", t.cost_threshold);
}

inline void to_json(nlohmann::json& j, const EnvSection& e) {
  j = {{"name", e.name},
       {"pendulum", e.pendulum},
       {"cartpole_double", e.cartpole_double},
       {"safety", e.safety},
       {"termination", e.termination}};
}

inline void from_json(const nlohmann::json& j, EnvSection& e) {
  e.name = j.value("name", e.name);
  if (j.contains("pendulum")) j.at("pendulum").get_to(e.pendulum);
  if (j.contains("cartpole_double"))
    j.at("cartpole_double").get_to(e.cartpole_double);
  if (j.contains("safety")) j.at("safety").get_to(e.safety);
  if (j.contains("termination")) j.at("termination").get_to(e.termination);
}

inline void to_json(nlohmann::json& j, const GpConfig& g) {
  j = {{"optimization_iterations", g.opt_iters},
       {"refit_optimization_iterations", g.refit_opt_iters},
       {"learning_rate", g.learning_rate},
       {"gradient_tolerance", g.grad_tol},
       {"noise_floor", g.noise_floor},
       {"jitter_base", g.jitter_base},
       {"jitter_max", g.jitter_max},
       {"normalize_states", g.normalize},
       {"warm_start", g.warm_start},
       {"hyper_subsample", g.hyper_subsample}};
}

inline void from_json(const nlohmann::json& j, GpConfig& g) {
  g.opt_iters = j.value("optimization_iterations", g.opt_iters);
  g.refit_opt_iters =
      j.value("refit_optimization_iterations", g.refit_opt_iters);
  g.learning_rate = j.value("learning_rate", g.learning_rate);
  g.grad_tol = j.value("gradient_tolerance", g.grad_tol);
  g.noise_floor = j.value("noise_floor", g.noise_floor);
  g.jitter_base = j.value("jitter_base", g.jitter_base);
  g.jitter_max = j.value("jitter_max", g.jitter_max);
  g.normalize = j.value("normalize_states", g.normalize);
  g.warm_start = j.value("warm_start", g.warm_start);
  g.hyper_subsample = j.value("hyper_subsample", g.hyper_subsample);
}

inline void to_json(nlohmann::json& j, const AgentSection& a) {
  j = {{"n_update_epochs", a.n_update_epochs},
       {"minibatch_size", a.minibatch_size},
       {"n_neurons", a.n_neurons},
       {"policy_learning_rate", a.policy_learning_rate},
       {"value_function_learning_rate", a.value_function_learning_rate},
       {"penalty_learning_rate", a.penalty_learning_rate},
       {"clipping", a.clipping},
       {"max_gradient_norm", a.max_gradient_norm},
       {"gamma", a.gamma},
       {"gae_lambda", a.gae_lambda},
       {"cvar_cost_limit", a.cvar_cost_limit},
       {"cvar_risk_alpha", a.cvar_risk_alpha},
       {"lambda_cvar_init", a.lambda_cvar_init},
       {"n_critic_epochs", a.n_critic_epochs},
       {"clip_cvar_surrogate", a.clip_cvar_surrogate},
       {"exploration_metric", a.exploration_metric},
       {"bootstrap_partitions", a.bootstrap_partitions},
       {"loo_subsample", a.loo_subsample},
       {"exploration_enabled", a.exploration_enabled},
       {"cvar_enabled", a.cvar_enabled}};
}

inline void from_json(const nlohmann::json& j, AgentSection& a) {
  a.n_update_epochs = j.value("n_update_epochs", a.n_update_epochs);
  a.minibatch_size = j.value("minibatch_size", a.minibatch_size);
  a.n_neurons = j.value("n_neurons", a.n_neurons);
  a.policy_learning_rate =
      j.value("policy_learning_rate", a.policy_learning_rate);
  a.value_function_learning_rate = j.value("value_function_learning_rate",
                                           a.value_function_learning_rate);
  a.penalty_learning_rate =
      j.value("penalty_learning_rate", a.penalty_learning_rate);
  a.clipping = j.value("clipping", a.clipping);
  a.max_gradient_norm = j.value("max_gradient_norm", a.max_gradient_norm);
  a.gamma = j.value("gamma", a.gamma);
  a.gae_lambda = j.value("gae_lambda", a.gae_lambda);
  a.cvar_cost_limit = j.value("cvar_cost_limit", a.cvar_cost_limit);
  a.cvar_risk_alpha = j.value("cvar_risk_alpha", a.cvar_risk_alpha);
  a.lambda_cvar_init = j.value("lambda_cvar_init", a.lambda_cvar_init);
  a.n_critic_epochs = j.value("n_critic_epochs", a.n_critic_epochs);
  a.clip_cvar_surrogate =
      j.value("clip_cvar_surrogate", a.clip_cvar_surrogate);
  a.exploration_metric = j.value("exploration_metric", a.exploration_metric);
  a.bootstrap_partitions =
      j.value("bootstrap_partitions", a.bootstrap_partitions);
  a.loo_subsample = j.value("loo_subsample", a.loo_subsample);
  a.exploration_enabled =
      j.value("exploration_enabled", a.exploration_enabled);
  a.cvar_enabled = j.value("cvar_enabled", a.cvar_enabled);
}

inline void to_json(nlohmann::json& j, const RunnerSection& r) {
  j = {{"env_iterations", r.env_iterations},
       {"control_iterations", r.control_iterations},
       {"real_traces", r.real_traces},
       {"model_traces", r.model_traces},
       {"max_trajectory_length", r.max_trajectory_length},
       {"deterministic", r.deterministic},
       {"checkpoint_every", r.checkpoint_every},
       {"divergence_bound", r.divergence_bound}};
}

inline void from_json(const nlohmann::json& j, RunnerSection& r) {
  r.env_iterations = j.value("env_iterations", r.env_iterations);
  r.control_iterations = j.value("control_iterations", r.control_iterations);
  r.real_traces = j.value("real_traces", r.real_traces);
  r.model_traces = j.value("model_traces", r.model_traces);
  r.max_trajectory_length =
      j.value("max_trajectory_length", r.max_trajectory_length);
  r.deterministic = j.value("deterministic", r.deterministic);
  r.checkpoint_every = j.value("checkpoint_every", r.checkpoint_every);
  r.divergence_bound = j.value("divergence_bound", r.divergence_bound);
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"environment", c.environment},
       {"dynamics_model", c.dynamics_model},
       {"agent", c.agent},
       {"runner", c.runner},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  if (j.contains("environment")) j.at("environment").get_to(c.environment);
  if (j.contains("dynamics_model"))
    j.at("dynamics_model").get_to(c.dynamics_model);
  if (j.contains("agent")) j.at("agent").get_to(c.agent);
  if (j.contains("runner")) j.at("runner").get_to(c.runner);
  c.seed = j.value("seed", c.seed);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  return j.get<RunConfig>();
}

inline void write_effective_config(const RunConfig& cfg,
                                   const std::filesystem::path& path) {
  const nlohmann::json j = cfg;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace samba
