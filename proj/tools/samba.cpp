// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: train, evaluate, heatmap, export-traces, compare.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "samba/analysis.hpp"
#include "samba/config.hpp"
#include "samba/orchestrator.hpp"

namespace fs = std::filesystem;
using namespace samba;

namespace {

RunConfig load_or_default(const std::string& config_path) {
  if (config_path.empty()) return RunConfig{};
  return load_config(config_path);
}

GridSpec default_grid(const GpModel& model) {
  GridSpec spec;
  const auto& map = model.feature_map();
  if (model.env_name() == "safe_pendulum") {
    spec.axis0 = {0, -M_PI, M_PI, 50};
    spec.axis1 = {1, -8.0, 8.0, 50};
  } else {
    spec.axis0 = {0, -1.0, 1.0, 50};
    spec.axis1 = {std::min(1, map.state_dim - 1), -1.0, 1.0, 50};
  }
  spec.fixed_state = VectorXd::Zero(map.state_dim);
  spec.action = VectorXd::Zero(map.action_dim);
  return spec;
}

GridAxis parse_axis(const std::string& text) {
  GridAxis axis;
  if (std::sscanf(text.c_str(), "%d,%lf,%lf,%d", &axis.state_dim, &axis.lo,
                  &axis.hi, &axis.res) != 4)
    throw CLI::ValidationError("axis must be dim,lo,hi,res");
  return axis;
}

VectorXd parse_vector(const std::string& text) {
  std::vector<double> vals;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  return Eigen::Map<const VectorXd>(vals.data(), vals.size());
}

int run_train(const std::string& config_path, std::optional<long> seed,
              const std::string& out) {
  RunConfig cfg = load_or_default(config_path);
  if (seed) cfg.seed = static_cast<std::uint64_t>(*seed);
  Orchestrator orch(cfg);
  const auto result = orch.train(fs::path(out));
  std::printf("trained %s: %zu env-iterations, %ld real samples%s\n",
              orch.env().name().c_str(), result.log.iterations.size(),
              result.log.total_real_samples(),
              result.log.aborted ? " (ABORTED)" : "");
  std::printf("outputs in %s (env_log.csv, solver_log.csv, policy.json, "
              "model.json, checkpoints/)\n",
              out.c_str());
  return result.log.aborted ? 1 : 0;
}

int run_evaluate(const std::string& policy_path,
                 const std::string& config_path, const std::string& env_name,
                 long samples, int n_seeds, bool stochastic,
                 const std::string& out) {
  RunConfig cfg = load_or_default(config_path);
  if (!env_name.empty()) cfg.environment.name = env_name;
  cfg = cfg.effective();
  const auto env = make_environment(cfg.environment);
  const auto bundle = PolicyBundle::from_json(
      nlohmann::json::parse(read_file(policy_path)));
  EvalOptions opt;
  opt.n_samples = samples;
  opt.seeds.clear();
  for (int s = 0; s < n_seeds; ++s) opt.seeds.push_back(s);
  opt.stochastic = stochastic;
  opt.gamma = cfg.agent.gamma;
  opt.cvar_alpha = cfg.agent.cvar_risk_alpha;
  opt.cvar_limit = cfg.agent.cvar_cost_limit;
  opt.max_traj_len = cfg.runner.max_trajectory_length;
  opt.termination = cfg.environment.termination;
  const auto report = evaluate(
      bundle, *env, opt,
      out.empty() ? std::nullopt : std::make_optional(fs::path(out)));
  const auto& a = report.aggregate;
  std::printf("samples=%ld tv=%ld tc=%s q25=%s q50=%s q75=%s exp=%s cvar=%s "
              "mean_cost_return=%s\n",
              a.samples, a.tv, format_double(a.tc).c_str(),
              format_double(a.q25).c_str(), format_double(a.q50).c_str(),
              format_double(a.q75).c_str(), a.exp_ok ? "ok" : "VIOLATED",
              a.cvar_ok ? "ok" : "VIOLATED",
              format_double(a.mean_cost_return).c_str());
  return 0;
}

int run_heatmap(const std::string& model_path, const std::string& metric,
                const std::string& out_stem, const std::string& axis0,
                const std::string& axis1, const std::string& fixed,
                const std::string& action, int partitions, long seed) {
  const std::string bytes = read_file(model_path);
  const auto model = GpModel::from_json(nlohmann::json::parse(bytes));
  HeatmapOptions opt;
  opt.metric = metric;
  opt.grid = default_grid(model);
  if (!axis0.empty()) opt.grid.axis0 = parse_axis(axis0);
  if (!axis1.empty()) opt.grid.axis1 = parse_axis(axis1);
  if (!fixed.empty()) opt.grid.fixed_state = parse_vector(fixed);
  if (!action.empty()) opt.grid.action = parse_vector(action);
  opt.bootstrap_partitions = partitions;
  opt.bootstrap_seed = static_cast<std::uint64_t>(seed);
  fs::create_directories(fs::path(out_stem).parent_path());
  heatmap(model, opt, out_stem, fnv1a_hex(bytes));
  std::printf("wrote %s.csv, %s.meta.json, %s.train_inputs.csv\n",
              out_stem.c_str(), out_stem.c_str(), out_stem.c_str());
  return 0;
}

int run_export_traces(const std::string& model_path,
                      const std::string& config_path,
                      const std::string& env_name, int traces, int horizon,
                      long seed, const std::string& out) {
  const auto model =
      GpModel::from_json(nlohmann::json::parse(read_file(model_path)));
  RunConfig cfg = load_or_default(config_path);
  if (!env_name.empty())
    cfg.environment.name = env_name;
  else if (!model.env_name().empty())
    cfg.environment.name = model.env_name();
  cfg = cfg.effective();
  const auto env = make_environment(cfg.environment);
  if (!model.env_name().empty() && model.env_name() != env->name())
    throw std::invalid_argument("model checkpoint was trained on " +
                                model.env_name());
  export_traces(model, *env, traces, horizon,
                static_cast<std::uint64_t>(seed), out);
  std::printf("wrote %s (1 real + %d model traces, horizon %d)\n",
              out.c_str(), traces, horizon);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safe active model-based reinforcement learning"};
  app.require_subcommand(1);

  // train
  std::string tr_config, tr_out = "run";
  std::optional<long> tr_seed;
  auto* train_cmd = app.add_subcommand("train", "train a policy");
  train_cmd->add_option("--config", tr_config, "config JSON file");
  train_cmd->add_option("--seed", tr_seed, "seed override");
  train_cmd->add_option("--out", tr_out, "output directory")->required();

  // evaluate
  std::string ev_policy, ev_config, ev_env, ev_out;
  long ev_samples = 10000;
  int ev_seeds = 3;
  bool ev_stochastic = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a policy checkpoint");
  eval_cmd->add_option("--policy", ev_policy, "policy checkpoint")->required();
  eval_cmd->add_option("--config", ev_config, "config JSON file");
  eval_cmd->add_option("--env", ev_env, "environment name override");
  eval_cmd->add_option("--samples", ev_samples, "evaluation samples per seed");
  eval_cmd->add_option("--seeds", ev_seeds, "number of evaluation seeds");
  eval_cmd->add_flag("--stochastic", ev_stochastic,
                     "sample actions instead of using the mean");
  eval_cmd->add_option("--out", ev_out, "report/log output directory");

  // heatmap
  std::string hm_model, hm_metric = "loo", hm_out, hm_axis0, hm_axis1,
              hm_fixed, hm_action;
  int hm_partitions = 8;
  long hm_seed = 0;
  auto* heat_cmd = app.add_subcommand("heatmap", "export a metric landscape");
  heat_cmd->add_option("--model", hm_model, "model checkpoint")->required();
  heat_cmd->add_option("--metric", hm_metric, "loo | bootstrap | entropy");
  heat_cmd->add_option("--out", hm_out, "output stem")->required();
  heat_cmd->add_option("--axis0", hm_axis0, "dim,lo,hi,res");
  heat_cmd->add_option("--axis1", hm_axis1, "dim,lo,hi,res");
  heat_cmd->add_option("--fixed", hm_fixed, "fixed state values v,v,...");
  heat_cmd->add_option("--action", hm_action, "grid action u,u,...");
  heat_cmd->add_option("--partitions", hm_partitions, "bootstrap partitions");
  heat_cmd->add_option("--seed", hm_seed, "bootstrap partition seed");

  // export-traces
  std::string ex_model, ex_config, ex_env, ex_out;
  int ex_traces = 3, ex_horizon = 30;
  long ex_seed = 0;
  auto* export_cmd =
      app.add_subcommand("export-traces", "open-loop model vs real traces");
  export_cmd->add_option("--model", ex_model, "model checkpoint")->required();
  export_cmd->add_option("--config", ex_config, "config JSON file");
  export_cmd->add_option("--env", ex_env, "environment name override");
  export_cmd->add_option("--traces", ex_traces, "number of model traces");
  export_cmd->add_option("--horizon", ex_horizon, "steps to replay");
  export_cmd->add_option("--seed", ex_seed, "rollout seed");
  export_cmd->add_option("--out", ex_out, "output CSV path")->required();

  // compare
  std::vector<std::string> cp_runs;
  std::string cp_out;
  auto* compare_cmd = app.add_subcommand("compare", "merge run eval reports");
  compare_cmd->add_option("--runs", cp_runs, "run directories")
      ->required()
      ->expected(-2);
  compare_cmd->add_option("--out", cp_out, "output CSV path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) return run_train(tr_config, tr_seed, tr_out);
    if (eval_cmd->parsed())
      return run_evaluate(ev_policy, ev_config, ev_env, ev_samples, ev_seeds,
                          ev_stochastic, ev_out);
    if (heat_cmd->parsed())
      return run_heatmap(hm_model, hm_metric, hm_out, hm_axis0, hm_axis1,
                         hm_fixed, hm_action, hm_partitions, hm_seed);
    if (export_cmd->parsed())
      return run_export_traces(ex_model, ex_config, ex_env, ex_traces,
                               ex_horizon, ex_seed, ex_out);
    if (compare_cmd->parsed()) {
      std::vector<fs::path> dirs(cp_runs.begin(), cp_runs.end());
      compare_runs(dirs, cp_out);
      std::printf("wrote %s\n", cp_out.c_str());
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
