// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0

#include "samba/analysis.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "support.hpp"

using namespace samba;
namespace fs = std::filesystem;

namespace {

// Contractive stub whose states stay within |s| <= 0.25 under near-zero
// actions; the unsafe band sits far away at [10, 11].
class SafeStub : public test::StubLinearEnv {
 public:
  SafeStub() : StubLinearEnv(2, 0.9, 0.1) {
    SafetySpec spec;
    spec.usr_min = 10.0;
    spec.usr_max = 11.0;
    spec.hazard_margin = 0.5;
    spec.scale = 0.04;
    set_safety_spec(spec);
  }
  VectorXd sample_initial(Rng& rng) const override {
    VectorXd s(2);
    s << rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2);
    return s;
  }
};

// Initial state pinned at the unsafe-region centre; dynamics hold it there.
class ViolatingStub : public test::StubLinearEnv {
 public:
  ViolatingStub() : StubLinearEnv(2, 1.0, 0.0) {
    SafetySpec spec;
    spec.usr_min = 10.0;
    spec.usr_max = 11.0;
    spec.hazard_margin = 0.5;
    spec.scale = 0.04;
    set_safety_spec(spec);
  }
  VectorXd sample_initial(Rng&) const override {
    VectorXd s(2);
    s << 10.5, 0.0;
    return s;
  }
  VectorXd step(const VectorXd& state, const VectorXd&) const override {
    return state;
  }
};

PolicyBundle zero_policy(const Environment& env) {
  Rng rng(1);
  auto bundle = PolicyBundle::make(env.feature_map(), env.action_low(),
                                   env.action_high(), 8, rng);
  VectorXd params = VectorXd::Zero(bundle.policy.param_count());
  params.tail(env.action_dim()).setConstant(kLogStdFloor);
  bundle.policy.set_flat_params(params);
  bundle.env_name = env.name();
  return bundle;
}

EvalOptions quick_options() {
  EvalOptions opt;
  opt.n_samples = 300;
  opt.seeds = {0, 1};
  opt.max_traj_len = 20;
  opt.termination.cost_threshold = -1.0;  // never terminate early
  return opt;
}

}  // namespace

TEST(Evaluate, AlwaysSafePolicyScoresClean) {
  SafeStub env;
  const auto bundle = zero_policy(env);
  const auto report = evaluate(bundle, env, quick_options());
  EXPECT_EQ(report.aggregate.tv, 0);
  EXPECT_DOUBLE_EQ(report.aggregate.tc, 0.0);
  EXPECT_TRUE(report.aggregate.exp_ok);
  EXPECT_TRUE(report.aggregate.cvar_ok);
  EXPECT_DOUBLE_EQ(report.aggregate.q75, 0.0);
  for (const auto& row : report.per_seed) {
    EXPECT_EQ(row.tv, 0);
    EXPECT_GE(row.samples, quick_options().n_samples);
  }
}

TEST(Evaluate, PinnedViolatingPolicyFailsEverything) {
  ViolatingStub env;
  const auto bundle = zero_policy(env);
  const auto opt = quick_options();
  const auto report = evaluate(bundle, env, opt);
  EXPECT_EQ(report.aggregate.tv, report.aggregate.samples);
  EXPECT_GT(report.aggregate.tc, 0.0);
  EXPECT_FALSE(report.aggregate.exp_ok);
  EXPECT_FALSE(report.aggregate.cvar_ok);
}

TEST(Evaluate, EnvMismatchThrows) {
  SafeStub env;
  auto bundle = zero_policy(env);
  bundle.env_name = "safe_pendulum";
  EXPECT_THROW(evaluate(bundle, env, quick_options()), std::invalid_argument);
}

TEST(Evaluate, ReportRecomputableFromTrajectoryLogs) {
  SafePendulum env;
  SafetySpec spec = env.safety_spec();
  spec.scale = 0.04;
  env.set_safety_spec(spec);
  Rng rng(9);
  auto bundle = PolicyBundle::make(env.feature_map(), env.action_low(),
                                   env.action_high(), 8, rng);
  bundle.env_name = env.name();
  EvalOptions opt = quick_options();
  opt.stochastic = true;
  const auto dir = fs::temp_directory_path() / "samba_eval_prov";
  fs::remove_all(dir);
  const auto report = evaluate(bundle, env, opt, dir);

  // Recompute every aggregate from the per-trajectory log.
  const auto table = read_csv(dir / "eval_trajectories.csv");
  long tv = 0, samples = 0;
  double tc = 0.0;
  std::vector<double> losses;
  for (const auto& row : table.rows) {
    samples += std::strtol(row[2].c_str(), nullptr, 10);
    losses.push_back(std::strtod(row[3].c_str(), nullptr));
    tv += std::strtol(row[4].c_str(), nullptr, 10);
    tc += std::strtod(row[5].c_str(), nullptr);
  }
  EXPECT_EQ(report.aggregate.samples, samples);
  EXPECT_EQ(report.aggregate.tv, tv);
  EXPECT_NEAR(report.aggregate.tc, tc, 1e-9);
  EXPECT_NEAR(report.aggregate.q50, quantile_linear(losses, 0.5), 1e-12);
  const Eigen::Map<const VectorXd> lv(losses.data(), losses.size());
  EXPECT_EQ(report.aggregate.cvar_ok,
            cvar_empirical(lv, opt.cvar_alpha).cvar <= opt.cvar_limit);
  fs::remove_all(dir);
}

TEST(Evaluate, QuartilesMatchSortOracle) {
  std::vector<double> v{4.0, 1.0, 3.0, 2.0, 5.0};
  // Sorted: 1 2 3 4 5; linear interpolation convention.
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.5), 3.0);
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(quantile_linear(v, 0.75), 4.0);
  std::vector<double> two{1.0, 2.0};
  EXPECT_DOUBLE_EQ(quantile_linear(two, 0.25), 1.25);
}

TEST(Heatmap, EmptyModelGivesConstantEntropyGrid) {
  FeatureMap map;
  map.state_dim = 2;
  map.action_dim = 1;
  GpModel model(map.feature_dim(), map.state_dim, map);
  HeatmapOptions opt;
  opt.metric = "entropy";
  opt.grid.axis0 = {0, -1.0, 1.0, 5};
  opt.grid.axis1 = {1, -1.0, 1.0, 5};
  opt.grid.fixed_state = VectorXd::Zero(2);
  opt.grid.action = VectorXd::Zero(1);
  const auto dir = fs::temp_directory_path() / "samba_heat_prior";
  fs::create_directories(dir);
  const auto grid = heatmap(model, opt, dir / "prior");
  EXPECT_NEAR(grid.values.maxCoeff(), grid.values.minCoeff(), 1e-12);
  fs::remove_all(dir);
}

TEST(Heatmap, DeterministicByteForByteAndUnknownMetricThrows) {
  Rng rng(11);
  FeatureMap map;
  map.state_dim = 2;
  map.action_dim = 1;
  const auto data = test::random_dataset(12, 3, 2, rng);
  GpConfig cfg;
  cfg.opt_iters = 10;
  auto model = GpModel::fit(data, cfg, rng, nullptr, nullptr, map);
  HeatmapOptions opt;
  opt.metric = "loo";
  opt.grid.axis0 = {0, -1.0, 1.0, 4};
  opt.grid.axis1 = {1, -1.0, 1.0, 4};
  opt.grid.fixed_state = VectorXd::Zero(2);
  opt.grid.action = VectorXd::Zero(1);
  const auto dir = fs::temp_directory_path() / "samba_heat_det";
  fs::create_directories(dir);
  heatmap(model, opt, dir / "a", "hash");
  heatmap(model, opt, dir / "b", "hash");
  EXPECT_EQ(read_file(dir / "a.csv"), read_file(dir / "b.csv"));
  EXPECT_EQ(read_file(dir / "a.train_inputs.csv"),
            read_file(dir / "b.train_inputs.csv"));
  opt.metric = "nonsense";
  EXPECT_THROW(heatmap(model, opt, dir / "c"), std::invalid_argument);
  fs::remove_all(dir);
}

TEST(Heatmap, BootstrapMetricRunsOnFittedModel) {
  Rng rng(13);
  FeatureMap map;
  map.state_dim = 2;
  map.action_dim = 1;
  const auto data = test::random_dataset(10, 3, 2, rng);
  GpConfig cfg;
  cfg.opt_iters = 5;
  auto model = GpModel::fit(data, cfg, rng, nullptr, nullptr, map);
  HeatmapOptions opt;
  opt.metric = "bootstrap";
  opt.bootstrap_partitions = 2;
  opt.grid.axis0 = {0, -1.0, 1.0, 3};
  opt.grid.axis1 = {1, -1.0, 1.0, 3};
  opt.grid.fixed_state = VectorXd::Zero(2);
  opt.grid.action = VectorXd::Zero(1);
  const auto dir = fs::temp_directory_path() / "samba_heat_boot";
  fs::create_directories(dir);
  const auto grid = heatmap(model, opt, dir / "boot");
  EXPECT_GE(grid.values.minCoeff(), 0.0);
  fs::remove_all(dir);
}

TEST(ExportTraces, HorizonZeroAndOpenLoopReplay) {
  test::StubLinearEnv env;
  GpModel model(env.feature_map().feature_dim(), env.state_dim(),
                env.feature_map());
  const auto dir = fs::temp_directory_path() / "samba_traces";
  fs::create_directories(dir);

  export_traces(model, env, 3, 0, 5, dir / "h0.csv");
  const auto t0 = read_csv(dir / "h0.csv");
  ASSERT_EQ(t0.rows.size(), 4u);  // real + 3 model traces, one row each
  for (const auto& row : t0.rows) {
    EXPECT_EQ(row[1], "0");
    EXPECT_EQ(row[3], t0.rows[0][3]);  // identical initial states
    EXPECT_EQ(row[4], t0.rows[0][4]);
  }

  export_traces(model, env, 2, 4, 5, dir / "h4.csv");
  const auto t4 = read_csv(dir / "h4.csv");
  ASSERT_EQ(t4.rows.size(), 3u * 5u);
  // Action columns identical across traces at matching t.
  for (int t = 0; t < 4; ++t)
    for (int trace = 1; trace <= 2; ++trace)
      EXPECT_EQ(t4.rows[trace * 5 + t][2], t4.rows[t][2]);
  fs::remove_all(dir);
}

TEST(ExportTraces, NoiselessLinearModelTracksRealTrace) {
  test::StubLinearEnv env;
  GaussianPolicy probe(env.feature_map(), env.action_low(), env.action_high(),
                       8);
  Rng init(3);
  probe.init(init);
  TransitionDataset dataset(env.feature_map().feature_dim(), env.state_dim());
  Rng collect_rng(15);
  collect_real(env, probe, 30, 10, TerminationRule{}, collect_rng, &dataset);
  GpConfig cfg;
  cfg.opt_iters = 150;
  Rng fit_rng(17);
  auto model =
      GpModel::fit(dataset, cfg, fit_rng, nullptr, nullptr, env.feature_map());
  const auto dir = fs::temp_directory_path() / "samba_traces_lin";
  fs::create_directories(dir);
  export_traces(model, env, 2, 5, 7, dir / "lin.csv");
  const auto table = read_csv(dir / "lin.csv");
  // Compare model trace states to the real trace at each t.
  for (int t = 0; t <= 5; ++t) {
    const double real_s0 = std::strtod(table.rows[t][3].c_str(), nullptr);
    for (int trace = 1; trace <= 2; ++trace) {
      const double model_s0 =
          std::strtod(table.rows[trace * 6 + t][3].c_str(), nullptr);
      EXPECT_NEAR(model_s0, real_s0, 0.08) << "t=" << t;
    }
  }
  fs::remove_all(dir);
}

TEST(Compare, SelfComparisonSchemaAndRoundTrip) {
  SafeStub env;
  const auto bundle = zero_policy(env);
  const auto base = fs::temp_directory_path() / "samba_compare";
  fs::remove_all(base);
  fs::create_directories(base / "run_a");
  fs::create_directories(base / "run_b");
  fs::create_directories(base / "run_missing");
  evaluate(bundle, env, quick_options(), base / "run_a");
  fs::copy(base / "run_a" / "eval_report.json",
           base / "run_b" / "eval_report.json");

  compare_runs({base / "run_a", base / "run_b", base / "run_missing"},
               base / "table.csv");
  const auto table = read_csv(base / "table.csv");
  std::vector<std::string> expected_header{"run", "status"};
  for (const auto& f : EvalReport::field_names())
    expected_header.push_back(f);
  EXPECT_EQ(table.header, expected_header);
  ASSERT_EQ(table.rows.size(), 3u);
  // Identical reports produce identical value cells.
  for (size_t c = 1; c < table.header.size(); ++c)
    EXPECT_EQ(table.rows[0][c], table.rows[1][c]);
  EXPECT_EQ(table.rows[2][1], "absent");

  // Numeric round-trip through the CSV preserves the exact doubles.
  const auto rep = EvalReport::from_json(
      nlohmann::json::parse(read_file(base / "run_a" / "eval_report.json")));
  EXPECT_EQ(std::strtod(table.rows[0][4].c_str(), nullptr), rep.aggregate.tc);
  fs::remove_all(base);
}

TEST(Compare, RequiresTwoRuns) {
  EXPECT_THROW(compare_runs({fs::temp_directory_path()}, "/tmp/x.csv"),
               std::invalid_argument);
}
