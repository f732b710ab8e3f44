// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The outer training loop: sample real traces with the current policy,
// concatenate all transitions into the GP training set, refit the surrogate,
// then run control iterations against it (model rollouts with exploration
// values, min-norm weighting, critic updates, dual ascent on the CVaR
// multiplier, proximal policy update). Every random draw comes from a
// per-purpose derived stream, so scalar logs are reproducible bit for bit.

#pragma once

#include <Eigen/Dense>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "samba/config.hpp"
#include "samba/cvar.hpp"
#include "samba/envs.hpp"
#include "samba/gp.hpp"
#include "samba/io.hpp"
#include "samba/metrics.hpp"
#include "samba/policy.hpp"
#include "samba/solver.hpp"
#include "samba/trajectory.hpp"

namespace samba {

struct IterationLog {
  int env_iter = 0;
  int new_rows = 0;
  long cumulative_samples = 0;
  int real_tv = 0;
  double real_tc = 0.0;
  int dataset_size = 0;
  double mll = 0.0;
  std::string model_checkpoint;
  std::string policy_checkpoint;
};

struct ControlLog {
  int env_iter = 0;
  int control_iter = 0;
  double lambda_pi = 1.0;
  double lambda_cvar = 0.0;
  double nu_hat = 0.0;
  double cvar_estimate = 0.0;
  double mean_cost_return = 0.0;
  double mean_zeta_return = 0.0;
  double grad_norm_cost = 0.0;
  double grad_norm_zeta = 0.0;
  int nan_flag = 0;
};

struct RunLog {
  std::vector<IterationLog> iterations;
  std::vector<ControlLog> controls;
  bool aborted = false;
  std::string abort_reason;

  long total_real_samples() const {
    return iterations.empty() ? 0 : iterations.back().cumulative_samples;
  }

  void write_csv(const std::filesystem::path& dir) const {
    CsvWriter env_csv(dir / "env_log.csv",
                      {"env_iter", "new_rows", "cumulative_samples", "real_tv",
                       "real_tc", "dataset_size", "mll", "model_checkpoint",
                       "policy_checkpoint"});
    for (const auto& it : iterations)
      env_csv.row({std::to_string(it.env_iter), std::to_string(it.new_rows),
                   std::to_string(it.cumulative_samples),
                   std::to_string(it.real_tv), format_double(it.real_tc),
                   std::to_string(it.dataset_size), format_double(it.mll),
                   it.model_checkpoint, it.policy_checkpoint});
    CsvWriter sol_csv(
        dir / "solver_log.csv",
        {"env_iter", "control_iter", "lambda_pi", "lambda_cvar", "nu_hat",
         "cvar_estimate", "mean_cost_return", "mean_zeta_return",
         "grad_norm_cost", "grad_norm_zeta", "nan_flag"});
    for (const auto& c : controls)
      sol_csv.row({std::to_string(c.env_iter), std::to_string(c.control_iter),
                   format_double(c.lambda_pi), format_double(c.lambda_cvar),
                   format_double(c.nu_hat), format_double(c.cvar_estimate),
                   format_double(c.mean_cost_return),
                   format_double(c.mean_zeta_return),
                   format_double(c.grad_norm_cost),
                   format_double(c.grad_norm_zeta),
                   std::to_string(c.nan_flag)});
  }
};

struct TrainResult {
  PolicyBundle bundle;
  GpModel model;
  RunLog log;
  SolverState solver_state;
};

// Real-environment rollouts under the stochastic policy; transitions are
// appended to `dataset` (plain concatenation, no deduplication).
inline std::vector<Trajectory> collect_real(const Environment& env,
                                            const GaussianPolicy& policy,
                                            int n_traces, int max_len,
                                            const TerminationRule& rule,
                                            Rng& rng,
                                            TransitionDataset* dataset) {
  const FeatureMap map = env.feature_map();
  std::vector<Trajectory> out;
  for (int b = 0; b < n_traces; ++b) {
    Rng traj_rng = rng.child(b + 1);
    VectorXd x = env.sample_initial(traj_rng);
    Trajectory tr;
    std::vector<VectorXd> states{x};
    std::vector<VectorXd> actions, actions_raw;
    std::vector<double> costs, losses, logps;
    std::vector<std::uint8_t> violations;
    std::deque<double> window;
    for (int t = 0; t < max_len; ++t) {
      const PolicySample s = policy.sample(x, traj_rng);
      const double c = env.cost(x, s.action);
      const double l = env.safety(x);
      const bool v = env.violation(x);
      const VectorXd next = env.step(x, s.action);
      if (dataset) dataset->append_transition(map, x, s.action, next);
      actions.push_back(s.action);
      actions_raw.push_back(s.action_raw);
      costs.push_back(c);
      losses.push_back(l);
      logps.push_back(s.log_prob);
      violations.push_back(v ? 1 : 0);
      x = next;
      states.push_back(x);
      window.push_back(c);
      if (should_terminate(window, rule)) break;
    }
    const int T = static_cast<int>(costs.size());
    tr.states.resize(T + 1, env.state_dim());
    for (int t = 0; t <= T; ++t) tr.states.row(t) = states[t].transpose();
    tr.actions.resize(T, env.action_dim());
    tr.actions_raw.resize(T, env.action_dim());
    tr.costs.resize(T);
    tr.safety_losses.resize(T);
    tr.zetas = VectorXd::Zero(T);
    tr.log_probs.resize(T);
    tr.violations = violations;
    for (int t = 0; t < T; ++t) {
      tr.actions.row(t) = actions[t].transpose();
      tr.actions_raw.row(t) = actions_raw[t].transpose();
      tr.costs[t] = costs[t];
      tr.safety_losses[t] = losses[t];
      tr.log_probs[t] = logps[t];
    }
    out.push_back(std::move(tr));
  }
  return out;
}

// Exploration-metric evaluator bound to the current surrogate.
struct MetricContext {
  const LooWorkspace* loo = nullptr;
  const BootstrapWorkspace* bootstrap = nullptr;

  double eval_query(const VectorXd& q) const {
    if (loo) return loo->zeta(q);
    if (bootstrap) return bootstrap->zeta(q);
    return 0.0;
  }
};

// Model rollouts from the surrogate: initial states from the environment's
// initial distribution, successors sampled per-dim from the GP posterior,
// cost/safety evaluated by the environment's functions on the model states,
// exploration value per step. States beyond the divergence bound truncate
// the trace.
inline std::vector<Trajectory> collect_model(
    const GpModel& model, const MetricContext& metric,
    const Environment& env, const GaussianPolicy& policy, int n_traces,
    int max_len, double divergence_bound, Rng& rng) {
  const FeatureMap& map = model.feature_map();
  std::vector<Trajectory> out;
  for (int n = 0; n < n_traces; ++n) {
    Rng traj_rng = rng.child(n + 1);
    VectorXd x = env.sample_initial(traj_rng);
    std::vector<VectorXd> states{x};
    std::vector<VectorXd> actions, actions_raw;
    std::vector<double> costs, losses, zetas, logps;
    std::vector<std::uint8_t> violations;
    bool diverged = false;
    for (int t = 0; t < max_len; ++t) {
      const PolicySample s = policy.sample(x, traj_rng);
      const VectorXd q = map.features(x, s.action);
      double zeta = 0.0;
      VectorXd next;
      if (metric.loo) {
        // Shared sweep: the posterior used for sampling also feeds the
        // rank-one LOO downdates.
        const LooWorkspace::Sweep sweep = metric.loo->sweep(q);
        zeta = metric.loo->zeta_from_sweep(sweep);
        VectorXd delta(model.output_dim());
        for (int d = 0; d < model.output_dim(); ++d) {
          const double ys = model.stats().y_std[d];
          const double mean = sweep.mean_n[d] * ys + model.stats().y_mean[d];
          const double sd = std::sqrt(std::max(0.0, sweep.var_n[d])) * ys;
          delta[d] = mean + sd * traj_rng.normal();
        }
        next = map.apply_delta(x, delta);
      } else {
        if (metric.bootstrap) zeta = metric.bootstrap->zeta(q);
        next = model.step(x, s.action, traj_rng);
      }
      costs.push_back(env.cost(x, s.action));
      losses.push_back(env.safety(x));
      violations.push_back(env.violation(x) ? 1 : 0);
      zetas.push_back(zeta);
      actions.push_back(s.action);
      actions_raw.push_back(s.action_raw);
      logps.push_back(s.log_prob);
      x = next;
      states.push_back(x);
      if (x.cwiseAbs().maxCoeff() > divergence_bound) {
        diverged = true;
        break;
      }
    }
    Trajectory tr;
    const int T = static_cast<int>(costs.size());
    tr.states.resize(T + 1, env.state_dim());
    for (int t = 0; t <= T; ++t) tr.states.row(t) = states[t].transpose();
    tr.actions.resize(T, env.action_dim());
    tr.actions_raw.resize(T, env.action_dim());
    tr.costs.resize(T);
    tr.safety_losses.resize(T);
    tr.zetas.resize(T);
    tr.log_probs.resize(T);
    tr.violations = violations;
    tr.diverged = diverged;
    for (int t = 0; t < T; ++t) {
      tr.actions.row(t) = actions[t].transpose();
      tr.actions_raw.row(t) = actions_raw[t].transpose();
      tr.costs[t] = costs[t];
      tr.safety_losses[t] = losses[t];
      tr.zetas[t] = zetas[t];
      tr.log_probs[t] = logps[t];
    }
    out.push_back(std::move(tr));
  }
  return out;
}

class Orchestrator {
 public:
  explicit Orchestrator(const RunConfig& config,
                        std::unique_ptr<Environment> env = nullptr)
      : cfg_(config.effective()) {
    env_ = env ? std::move(env) : make_environment(cfg_.environment);
    env_->set_safety_spec(cfg_.environment.safety);
  }

  const RunConfig& config() const { return cfg_; }
  const Environment& env() const { return *env_; }

  TrainResult train(
      const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    namespace fs = std::filesystem;
    if (out_dir) {
      fs::create_directories(*out_dir / "checkpoints");
      write_effective_config(cfg_, *out_dir / "config_effective.json");
    }

    const FeatureMap map = env_->feature_map();
    Rng root(cfg_.seed);
    Rng init_rng = root.child(1);

    TrainResult result;
    result.bundle = PolicyBundle::make(map, env_->action_low(),
                                       env_->action_high(),
                                       cfg_.agent.n_neurons, init_rng);
    result.bundle.env_name = env_->name();

    TransitionDataset dataset(map.feature_dim(), map.state_dim);
    SolverState& solver = result.solver_state;
    solver.lambda_cvar =
        cfg_.agent.cvar_enabled ? cfg_.agent.lambda_cvar_init : 0.0;
    std::optional<Adam> adam_policy;
    Adam adam_c1, adam_c2;
    bool critics_ready = false;

    GpModel model;
    long cumulative = 0;

    UpdateConfig ucfg;
    ucfg.clip_eps = cfg_.agent.clipping;
    ucfg.epochs = cfg_.agent.n_update_epochs;
    ucfg.minibatch = cfg_.agent.minibatch_size;
    ucfg.lr = cfg_.agent.policy_learning_rate;
    ucfg.max_grad_norm = cfg_.agent.max_gradient_norm;
    ucfg.clip_cvar_term = cfg_.agent.clip_cvar_surrogate;

    for (int j = 0; j < cfg_.runner.env_iterations; ++j) {
      Rng iter_rng = root.child(100 + j);
      IterationLog it;
      it.env_iter = j;

      // Real interaction and dataset concatenation.
      Rng real_rng = iter_rng.child(1);
      const auto real = collect_real(
          *env_, result.bundle.policy, cfg_.runner.real_traces,
          cfg_.runner.max_trajectory_length, cfg_.environment.termination,
          real_rng, &dataset);
      for (const auto& tr : real) {
        it.new_rows += tr.length();
        it.real_tv += tr.tv();
        it.real_tc += tr.tc();
      }
      cumulative += it.new_rows;
      it.cumulative_samples = cumulative;
      it.dataset_size = dataset.size();

      // Surrogate refit on the concatenated data (warm started).
      Rng fit_rng = iter_rng.child(2);
      FitReport report;
      try {
        model = GpModel::fit(dataset, cfg_.dynamics_model, fit_rng,
                             j > 0 ? &model : nullptr, &report, map);
      } catch (const FitError&) {
        GpConfig retry = cfg_.dynamics_model;
        retry.jitter_base = std::min(retry.jitter_base * 10.0, retry.jitter_max);
        try {
          model = GpModel::fit(dataset, retry, fit_rng,
                               j > 0 ? &model : nullptr, &report, map);
        } catch (const FitError& e) {
          result.log.aborted = true;
          result.log.abort_reason = e.what();
          result.log.iterations.push_back(it);
          break;
        }
      }
      model.set_env_name(env_->name());
      it.mll = report.total_mll();

      const LooWorkspace loo(model, cfg_.agent.loo_subsample);
      std::optional<BootstrapWorkspace> bootstrap;
      MetricContext metric;
      if (cfg_.agent.exploration_enabled) {
        if (cfg_.agent.exploration_metric == "bootstrap") {
          Rng boot_rng = iter_rng.child(3);
          bootstrap.emplace(model, cfg_.agent.bootstrap_partitions, boot_rng);
          metric.bootstrap = &*bootstrap;
        } else {
          metric.loo = &loo;
        }
      } else {
        metric.loo = &loo;  // posterior sampling path; zeta stream unused
      }

      for (int k = 0; k < cfg_.runner.control_iterations; ++k) {
        Rng ctrl_rng = iter_rng.child(10 + k);
        ControlLog cl;
        cl.env_iter = j;
        cl.control_iter = k;

        Rng rollout_rng = ctrl_rng.child(1);
        auto traces = collect_model(model, metric, *env_,
                                    result.bundle.policy,
                                    cfg_.runner.model_traces,
                                    cfg_.runner.max_trajectory_length,
                                    cfg_.runner.divergence_bound, rollout_rng);
        if (!cfg_.agent.exploration_enabled)
          for (auto& tr : traces) tr.zetas.setZero();

        const TrajectoryBatch batch =
            build_batch(traces, result.bundle.cost_critic,
                        result.bundle.zeta_critic, cfg_.agent.gamma,
                        cfg_.agent.gae_lambda);

        double mean_cost = 0.0, mean_zeta = 0.0;
        for (const auto& tr : traces) {
          mean_cost += tr.cost_return(cfg_.agent.gamma);
          mean_zeta += tr.zeta_return(cfg_.agent.gamma);
        }
        cl.mean_cost_return = mean_cost / traces.size();
        cl.mean_zeta_return = mean_zeta / traces.size();

        // Min-norm weighting between the two descent directions.
        if (cfg_.agent.exploration_enabled) {
          const auto grads =
              estimate_objective_gradients(result.bundle.policy, batch);
          cl.grad_norm_cost = grads.g_cost.norm();
          cl.grad_norm_zeta = grads.g_zeta.norm();
          const auto mn = min_norm_lambda(grads.g_cost, -grads.g_zeta);
          solver.lambda_pi = mn.lambda;
          solver.stationary = mn.stationary;
        } else {
          solver.lambda_pi = 1.0;
        }
        cl.lambda_pi = solver.lambda_pi;

        // Critic updates on Monte-Carlo targets.
        if (!critics_ready) {
          adam_c1 = Adam(
              static_cast<int>(
                  result.bundle.cost_critic.net().params().size()),
              cfg_.agent.value_function_learning_rate);
          adam_c2 = Adam(
              static_cast<int>(
                  result.bundle.zeta_critic.net().params().size()),
              cfg_.agent.value_function_learning_rate);
          critics_ready = true;
        }
        for (int e = 0; e < cfg_.agent.n_critic_epochs; ++e) {
          auto [l1, g1] = result.bundle.cost_critic.loss_and_grad(
              batch.states, batch.ret_cost);
          clip_gradient_norm(g1, cfg_.agent.max_gradient_norm);
          adam_c1.step(result.bundle.cost_critic.net().params(), g1);
          if (cfg_.agent.exploration_enabled) {
            auto [l2, g2] = result.bundle.zeta_critic.loss_and_grad(
                batch.states, batch.ret_zeta);
            clip_gradient_norm(g2, cfg_.agent.max_gradient_norm);
            adam_c2.step(result.bundle.zeta_critic.net().params(), g2);
          }
        }

        // CVaR estimate and dual ascent on the multiplier.
        const auto est =
            cvar_empirical(batch.traj_loss, cfg_.agent.cvar_risk_alpha);
        solver.nu_hat = est.nu_hat;
        cl.nu_hat = est.nu_hat;
        cl.cvar_estimate = est.cvar;
        if (cfg_.agent.cvar_enabled)
          update_lambda_cvar(solver, est.cvar, cfg_.agent.cvar_cost_limit,
                             cfg_.agent.penalty_learning_rate);
        else
          solver.lambda_cvar = 0.0;
        cl.lambda_cvar = solver.lambda_cvar;

        // Proximal clipped policy step.
        Rng update_rng = ctrl_rng.child(2);
        const auto res = policy_update(
            result.bundle.policy, adam_policy, batch, solver.lambda_pi,
            cfg_.agent.cvar_enabled ? solver.lambda_cvar : 0.0, est.nu_hat,
            cfg_.agent.cvar_risk_alpha, ucfg, update_rng);
        if (res.nan_aborted) {
          solver.nan_flagged = true;
          cl.nan_flag = 1;
        }
        ++solver.updates;
        result.log.controls.push_back(cl);
        if (solver.nan_flagged) break;  // no update applied after a NaN flag
      }

      if (out_dir && (j % cfg_.runner.checkpoint_every == 0 ||
                      j + 1 == cfg_.runner.env_iterations)) {
        char name[64];
        std::snprintf(name, sizeof(name), "model_%04d.json", j);
        const auto model_path = *out_dir / "checkpoints" / name;
        write_file(model_path, model.to_json().dump());
        std::snprintf(name, sizeof(name), "policy_%04d.json", j);
        const auto policy_path = *out_dir / "checkpoints" / name;
        write_file(policy_path, result.bundle.to_json().dump());
        it.model_checkpoint = model_path.filename().string();
        it.policy_checkpoint = policy_path.filename().string();
      }
      result.log.iterations.push_back(it);
      if (solver.nan_flagged || result.log.aborted) break;
    }

    result.model = std::move(model);
    if (out_dir) {
      result.log.write_csv(*out_dir);
      write_file(*out_dir / "model.json", result.model.fitted() && result.model.n_points() > 0
                                              ? result.model.to_json().dump()
                                              : std::string("{}"));
      write_file(*out_dir / "policy.json", result.bundle.to_json().dump());
    }
    return result;
  }

 private:
  RunConfig cfg_;
  std::unique_ptr<Environment> env_;
};

}  // namespace samba
