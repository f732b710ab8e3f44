// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Evaluation and export tooling: policy evaluation reports (TV, TC,
// safety-loss quartiles, expectation/CVaR constraint flags), metric-landscape
// heatmaps with training-scatter overlays, open-loop model-trace exports,
// and run comparison tables. Every report number is recomputable from the
// trajectory logs written next to it.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "samba/config.hpp"
#include "samba/cvar.hpp"
#include "samba/envs.hpp"
#include "samba/gp.hpp"
#include "samba/io.hpp"
#include "samba/metrics.hpp"
#include "samba/orchestrator.hpp"
#include "samba/policy.hpp"

namespace samba {

// Linear-interpolation quantile of a sorted sample (reporting convention for
// the quartile columns; the CVaR flag uses cvar_empirical unchanged).
inline double quantile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * (values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - lo;
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

struct EvalRow {
  long seed = 0;
  long samples = 0;
  long tv = 0;
  double tc = 0.0;
  double q25 = 0.0, q50 = 0.0, q75 = 0.0;
  bool exp_ok = false;
  bool cvar_ok = false;
  double mean_cost_return = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> per_seed;
  EvalRow aggregate;  // aggregate.seed = -1

  static std::vector<std::string> field_names() {
    return {"samples", "tv",     "tc",      "q25",
            "q50",     "q75",    "exp_ok",  "cvar_ok",
            "mean_cost_return"};
  }

  nlohmann::json to_json() const {
    auto row = [](const EvalRow& r) {
      return nlohmann::json{{"seed", r.seed},
                            {"samples", r.samples},
                            {"tv", r.tv},
                            {"tc", r.tc},
                            {"q25", r.q25},
                            {"q50", r.q50},
                            {"q75", r.q75},
                            {"exp_ok", r.exp_ok},
                            {"cvar_ok", r.cvar_ok},
                            {"mean_cost_return", r.mean_cost_return}};
    };
    nlohmann::json j;
    j["format"] = "samba-eval-v1";
    j["aggregate"] = row(aggregate);
    for (const auto& r : per_seed) j["per_seed"].push_back(row(r));
    return j;
  }

  static EvalRow row_from_json(const nlohmann::json& j) {
    EvalRow r;
    r.seed = j.at("seed").get<long>();
    r.samples = j.at("samples").get<long>();
    r.tv = j.at("tv").get<long>();
    r.tc = j.at("tc").get<double>();
    r.q25 = j.at("q25").get<double>();
    r.q50 = j.at("q50").get<double>();
    r.q75 = j.at("q75").get<double>();
    r.exp_ok = j.at("exp_ok").get<bool>();
    r.cvar_ok = j.at("cvar_ok").get<bool>();
    r.mean_cost_return = j.at("mean_cost_return").get<double>();
    return r;
  }

  static EvalReport from_json(const nlohmann::json& j) {
    EvalReport rep;
    rep.aggregate = row_from_json(j.at("aggregate"));
    if (j.contains("per_seed"))
      for (const auto& r : j.at("per_seed"))
        rep.per_seed.push_back(row_from_json(r));
    return rep;
  }
};

struct EvalOptions {
  long n_samples = 10000;
  std::vector<long> seeds = {0, 1, 2};
  bool stochastic = false;  // default: deterministic mean action
  double gamma = 0.99;
  double cvar_alpha = 0.9;
  double cvar_limit = 0.025;
  int max_traj_len = 30;
  TerminationRule termination;
};

// Rolls the policy out on the real environment until at least n_samples
// steps per seed; flags use the trajectory-level discounted safety losses.
inline EvalReport evaluate(
    const PolicyBundle& bundle, const Environment& env,
    const EvalOptions& opt,
    const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  if (!bundle.env_name.empty() && bundle.env_name != env.name())
    throw std::invalid_argument("policy checkpoint was trained on " +
                                bundle.env_name + ", not " + env.name());
  EvalReport report;
  std::optional<CsvWriter> traj_csv, step_csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    traj_csv.emplace(*out_dir / "eval_trajectories.csv",
                     std::vector<std::string>{"seed", "trajectory", "steps",
                                              "loss", "tv", "tc",
                                              "cost_return"});
    std::vector<std::string> header{"seed", "trajectory", "t"};
    for (int d = 0; d < env.state_dim(); ++d)
      header.push_back("s" + std::to_string(d));
    for (int d = 0; d < env.action_dim(); ++d)
      header.push_back("u" + std::to_string(d));
    header.insert(header.end(), {"cost", "safety_loss", "violation"});
    step_csv.emplace(*out_dir / "eval_steps.csv", header);
  }

  std::vector<double> all_losses;
  EvalRow agg;
  agg.seed = -1;
  double agg_cost_weighted = 0.0;
  long agg_trajs = 0;

  for (long seed : opt.seeds) {
    Rng rng(0xe7a1ULL ^ static_cast<std::uint64_t>(seed));
    EvalRow row;
    row.seed = seed;
    std::vector<double> losses;
    double cost_return_sum = 0.0;
    long trajs = 0;
    while (row.samples < opt.n_samples) {
      Rng traj_rng = rng.child(trajs + 1);
      VectorXd x = env.sample_initial(traj_rng);
      double loss = 0.0, tc = 0.0, cost_return = 0.0;
      long tv = 0;
      double disc = 1.0, cdisc = 1.0;
      std::deque<double> window;
      int t = 0;
      for (; t < opt.max_traj_len; ++t) {
        VectorXd action;
        if (opt.stochastic) {
          action = bundle.policy.sample(x, traj_rng).action;
        } else {
          action = bundle.policy.mean_action(x)
                       .cwiseMax(env.action_low())
                       .cwiseMin(env.action_high());
        }
        const double c = env.cost(x, action);
        const double l = env.safety(x);
        const bool v = env.violation(x);
        if (step_csv) {
          std::vector<std::string> cells{std::to_string(seed),
                                         std::to_string(trajs),
                                         std::to_string(t)};
          for (int d = 0; d < env.state_dim(); ++d)
            cells.push_back(format_double(x[d]));
          for (int d = 0; d < env.action_dim(); ++d)
            cells.push_back(format_double(action[d]));
          cells.push_back(format_double(c));
          cells.push_back(format_double(l));
          cells.push_back(v ? "1" : "0");
          step_csv->row(cells);
        }
        loss += disc * l;
        cost_return += cdisc * c;
        tc += l;
        tv += v ? 1 : 0;
        disc *= opt.gamma;
        cdisc *= opt.gamma;
        x = env.step(x, action);
        window.push_back(c);
        ++row.samples;
        if (should_terminate(window, opt.termination)) {
          ++t;
          break;
        }
      }
      losses.push_back(loss);
      cost_return_sum += cost_return;
      row.tv += tv;
      row.tc += tc;
      ++trajs;
      if (traj_csv)
        traj_csv->row({std::to_string(seed), std::to_string(trajs - 1),
                       std::to_string(t), format_double(loss),
                       std::to_string(tv), format_double(tc),
                       format_double(cost_return)});
    }
    row.q25 = quantile_linear(losses, 0.25);
    row.q50 = quantile_linear(losses, 0.50);
    row.q75 = quantile_linear(losses, 0.75);
    const double mean_loss =
        std::accumulate(losses.begin(), losses.end(), 0.0) / losses.size();
    row.exp_ok = mean_loss <= opt.cvar_limit;
    const Eigen::Map<const VectorXd> lv(losses.data(), losses.size());
    row.cvar_ok = cvar_empirical(lv, opt.cvar_alpha).cvar <= opt.cvar_limit;
    row.mean_cost_return = cost_return_sum / trajs;

    report.per_seed.push_back(row);
    all_losses.insert(all_losses.end(), losses.begin(), losses.end());
    agg.samples += row.samples;
    agg.tv += row.tv;
    agg.tc += row.tc;
    agg_cost_weighted += cost_return_sum;
    agg_trajs += trajs;
  }

  agg.q25 = quantile_linear(all_losses, 0.25);
  agg.q50 = quantile_linear(all_losses, 0.50);
  agg.q75 = quantile_linear(all_losses, 0.75);
  const double agg_mean =
      std::accumulate(all_losses.begin(), all_losses.end(), 0.0) /
      all_losses.size();
  agg.exp_ok = agg_mean <= opt.cvar_limit;
  const Eigen::Map<const VectorXd> av(all_losses.data(), all_losses.size());
  agg.cvar_ok = cvar_empirical(av, opt.cvar_alpha).cvar <= opt.cvar_limit;
  agg.mean_cost_return = agg_cost_weighted / agg_trajs;
  report.aggregate = agg;

  if (out_dir)
    write_file(*out_dir / "eval_report.json", report.to_json().dump(2) + "\n");
  return report;
}

struct HeatmapOptions {
  std::string metric = "loo";  // loo | bootstrap | entropy
  GridSpec grid;
  int bootstrap_partitions = 8;
  std::uint64_t bootstrap_seed = 0;
  int loo_subsample = 0;
};

// Writes <stem>.csv (axis0,axis1,value), <stem>.meta.json, and
// <stem>.train_inputs.csv (raw training states/actions recovered from the
// feature rows, for scatter overlays).
inline MetricGrid heatmap(const GpModel& model, const HeatmapOptions& opt,
                          const std::filesystem::path& stem,
                          const std::string& checkpoint_hash = "") {
  const FeatureMap& map = model.feature_map();
  MetricGrid grid;
  if (opt.metric == "loo") {
    const LooWorkspace ws(model, opt.loo_subsample);
    grid = metric_grid(map, opt.grid,
                       [&](const VectorXd& q) { return ws.zeta(q); });
  } else if (opt.metric == "bootstrap") {
    Rng rng(opt.bootstrap_seed);
    const BootstrapWorkspace ws(model, opt.bootstrap_partitions, rng);
    grid = metric_grid(map, opt.grid,
                       [&](const VectorXd& q) { return ws.zeta(q); });
  } else if (opt.metric == "entropy") {
    grid = metric_grid(map, opt.grid, [&](const VectorXd& q) {
      return entropy_baseline(model, q);
    });
  } else {
    throw std::invalid_argument("unknown metric: " + opt.metric);
  }

  write_metric_grid_csv(grid, stem.string() + ".csv");

  // Training inputs recovered to raw state coordinates for overlay plots.
  {
    std::vector<std::string> header;
    for (int d = 0; d < map.state_dim; ++d)
      header.push_back("s" + std::to_string(d));
    for (int d = 0; d < map.action_dim; ++d)
      header.push_back("u" + std::to_string(d));
    CsvWriter scatter(stem.string() + ".train_inputs.csv", header);
    for (int i = 0; i < model.n_points(); ++i) {
      const VectorXd f = model.data().X.row(i).transpose();
      std::vector<std::string> cells;
      int col = 0;
      for (int d = 0; d < map.state_dim; ++d) {
        if (map.is_angle(d)) {
          cells.push_back(format_double(std::atan2(f[col + 1], f[col])));
          col += 2;
        } else {
          cells.push_back(format_double(f[col]));
          col += 1;
        }
      }
      for (int d = 0; d < map.action_dim; ++d)
        cells.push_back(format_double(f[map.obs_dim() + d]));
      scatter.row(cells);
    }
  }

  nlohmann::json meta;
  meta["metric"] = opt.metric;
  meta["checkpoint_hash"] = checkpoint_hash;
  meta["env"] = model.env_name();
  meta["grid"] = {
      {"axis0",
       {{"state_dim", opt.grid.axis0.state_dim}, {"lo", opt.grid.axis0.lo},
        {"hi", opt.grid.axis0.hi}, {"res", opt.grid.axis0.res}}},
      {"axis1",
       {{"state_dim", opt.grid.axis1.state_dim}, {"lo", opt.grid.axis1.lo},
        {"hi", opt.grid.axis1.hi}, {"res", opt.grid.axis1.res}}}};
  meta["fixed_state"] = std::vector<double>(
      opt.grid.fixed_state.data(),
      opt.grid.fixed_state.data() + opt.grid.fixed_state.size());
  meta["action"] = std::vector<double>(
      opt.grid.action.data(), opt.grid.action.data() + opt.grid.action.size());
  if (!model.env_name().empty()) {
    try {
      EnvSection section;
      section.name = model.env_name();
      section.safety.scale = 1.0;
      const auto env = make_environment(section);
      meta["safety_bounds"] = {{"usr_min", env->safety_spec().usr_min},
                               {"usr_max", env->safety_spec().usr_max},
                               {"hz_min", env->safety_spec().hz_min()},
                               {"hz_max", env->safety_spec().hz_max()}};
    } catch (const std::invalid_argument&) {
      // stub environments have no registered safety overlay
    }
  }
  write_file(stem.string() + ".meta.json", meta.dump(2) + "\n");
  return grid;
}

// One real rollout with uniformly random actions, then n_traces open-loop
// model rollouts replaying exactly those actions from the same start state.
inline void export_traces(const GpModel& model, const Environment& env,
                          int n_traces, int horizon, std::uint64_t seed,
                          const std::filesystem::path& csv_path) {
  Rng rng(seed);
  const VectorXd x0 = env.sample_initial(rng);
  MatrixXd actions(horizon, env.action_dim());
  for (int t = 0; t < horizon; ++t)
    for (int d = 0; d < env.action_dim(); ++d)
      actions(t, d) =
          rng.uniform(env.action_low()[d], env.action_high()[d]);

  std::vector<std::string> header{"trace", "t"};
  for (int d = 0; d < env.action_dim(); ++d)
    header.push_back("u" + std::to_string(d));
  for (int d = 0; d < env.state_dim(); ++d)
    header.push_back("s" + std::to_string(d));
  CsvWriter csv(csv_path, header);

  auto write_rollout = [&](int trace_id, auto&& stepper) {
    VectorXd x = x0;
    for (int t = 0; t <= horizon; ++t) {
      std::vector<std::string> cells{std::to_string(trace_id),
                                     std::to_string(t)};
      for (int d = 0; d < env.action_dim(); ++d)
        cells.push_back(t < horizon ? format_double(actions(t, d))
                                    : std::string());
      for (int d = 0; d < env.state_dim(); ++d)
        cells.push_back(format_double(x[d]));
      csv.row(cells);
      if (t < horizon) x = stepper(x, actions.row(t).transpose());
    }
  };

  write_rollout(0, [&](const VectorXd& x, const VectorXd& u) {
    return env.step(x, u);
  });
  for (int n = 1; n <= n_traces; ++n) {
    Rng model_rng = rng.child(n);
    write_rollout(n, [&](const VectorXd& x, const VectorXd& u) {
      return model.step(x, u, model_rng);
    });
  }
}

// Merges eval reports from run directories into one CSV keyed by run name.
// Missing reports are listed as absent rather than fabricated.
inline void compare_runs(const std::vector<std::filesystem::path>& run_dirs,
                         const std::filesystem::path& out_csv) {
  if (run_dirs.size() < 2)
    throw std::invalid_argument("compare needs at least two run directories");
  std::vector<std::string> header{"run", "status"};
  const auto fields = EvalReport::field_names();
  header.insert(header.end(), fields.begin(), fields.end());
  CsvWriter csv(out_csv, header);
  for (const auto& dir : run_dirs) {
    const auto path = dir / "eval_report.json";
    std::vector<std::string> cells{dir.filename().string()};
    if (!std::filesystem::exists(path)) {
      cells.push_back("absent");
      for (size_t i = 0; i < fields.size(); ++i) cells.emplace_back();
      csv.row(cells);
      continue;
    }
    const auto rep =
        EvalReport::from_json(nlohmann::json::parse(read_file(path)));
    const auto& a = rep.aggregate;
    cells.push_back("ok");
    cells.push_back(std::to_string(a.samples));
    cells.push_back(std::to_string(a.tv));
    cells.push_back(format_double(a.tc));
    cells.push_back(format_double(a.q25));
    cells.push_back(format_double(a.q50));
    cells.push_back(format_double(a.q75));
    cells.push_back(a.exp_ok ? "1" : "0");
    cells.push_back(a.cvar_ok ? "1" : "0");
    cells.push_back(format_double(a.mean_cost_return));
    csv.row(cells);
  }
}

}  // namespace samba
