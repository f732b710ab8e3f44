// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Test-only oracles, kept independent of the implementation paths they
// check: dense-inverse GP prediction, direct MLL evaluation, central finite
// differences, and a linear stub environment.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "samba/envs.hpp"
#include "samba/gp.hpp"
#include "samba/rng.hpp"

namespace samba::test {

// Scalar ARD RBF written out long-hand.
inline double oracle_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                            const Eigen::VectorXd& lengthscales,
                            double signal_variance) {
  double q = 0.0;
  for (int d = 0; d < a.size(); ++d) {
    const double diff = (a[d] - b[d]) / lengthscales[d];
    q += diff * diff;
  }
  return signal_variance * std::exp(-0.5 * q);
}

struct OraclePosterior {
  Eigen::VectorXd mean;  // per output dim
  Eigen::VectorXd var;
};

// Textbook GP prediction with an explicit matrix inverse, mirroring the
// model's frozen normalisation.
inline OraclePosterior dense_predict(const samba::GpModel& model,
                                     const Eigen::VectorXd& query) {
  const auto& stats = model.stats();
  const Eigen::MatrixXd Xn = stats.normalize_x(model.data().X);
  const Eigen::MatrixXd Yn = stats.normalize_y(model.data().Y);
  const Eigen::VectorXd qn =
      stats.normalize_x(query.transpose()).row(0).transpose();
  const int n = static_cast<int>(Xn.rows());
  OraclePosterior out;
  out.mean.resize(model.output_dim());
  out.var.resize(model.output_dim());
  for (int d = 0; d < model.output_dim(); ++d) {
    const auto& hp = model.hyperparams(d);
    const Eigen::VectorXd ls = hp.lengthscales();
    const double sv = hp.signal_variance();
    if (n == 0) {
      out.mean[d] = stats.y_mean[d];
      out.var[d] = sv * stats.y_std[d] * stats.y_std[d];
      continue;
    }
    Eigen::MatrixXd C(n, n);
    Eigen::VectorXd k(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j)
        C(i, j) = oracle_kernel(Xn.row(i).transpose(), Xn.row(j).transpose(),
                                ls, sv);
      C(i, i) += hp.noise_variance();
      k[i] = oracle_kernel(Xn.row(i).transpose(), qn, ls, sv);
    }
    const Eigen::MatrixXd A = C.inverse();
    const double mean_n = k.dot(A * Yn.col(d));
    const double var_n = sv - k.dot(A * k);
    out.mean[d] = mean_n * stats.y_std[d] + stats.y_mean[d];
    out.var[d] = std::max(0.0, var_n) * stats.y_std[d] * stats.y_std[d];
  }
  return out;
}

// Direct marginal log likelihood via explicit determinant and inverse on the
// normalised data.
inline double dense_mll(const samba::GpModel& model) {
  const Eigen::MatrixXd Xn = model.normalized_inputs();
  const Eigen::MatrixXd Yn = model.normalized_targets();
  const int n = static_cast<int>(Xn.rows());
  double total = 0.0;
  for (int d = 0; d < model.output_dim(); ++d) {
    const auto& hp = model.hyperparams(d);
    const Eigen::VectorXd ls = hp.lengthscales();
    Eigen::MatrixXd C(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j)
        C(i, j) = oracle_kernel(Xn.row(i).transpose(), Xn.row(j).transpose(),
                                ls, hp.signal_variance());
      C(i, i) += hp.noise_variance();
    }
    const Eigen::VectorXd y = Yn.col(d);
    const Eigen::MatrixXd A = C.inverse();
    total += -0.5 * y.dot(A * y) - 0.5 * std::log(C.determinant()) -
             0.5 * n * std::log(2.0 * M_PI);
  }
  return total;
}

inline Eigen::VectorXd central_diff(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x, double eps = 1e-5) {
  Eigen::VectorXd g(x.size());
  for (int i = 0; i < x.size(); ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi[i] += eps;
    lo[i] -= eps;
    g[i] = (f(hi) - f(lo)) / (2.0 * eps);
  }
  return g;
}

inline samba::TransitionDataset random_dataset(int n, int d_in, int d_out,
                                               samba::Rng& rng,
                                               double x_range = 2.0,
                                               double noise = 0.05) {
  samba::TransitionDataset data(d_in, d_out);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(d_in), y(d_out);
    for (int d = 0; d < d_in; ++d) x[d] = rng.uniform(-x_range, x_range);
    for (int d = 0; d < d_out; ++d)
      y[d] = std::sin(1.3 * x[d % d_in] + 0.7 * d) +
             0.3 * x[(d + 1) % d_in] * x[(d + 1) % d_in] +
             noise * rng.normal();
    data.append(x, y);
  }
  return data;
}

// Deterministic linear system used for orchestrator smoke tests: next state
// is a stable linear map of (state, action), safety always zero until the
// state magnitude crosses the spec's monitored band.
class StubLinearEnv : public samba::Environment {
 public:
  explicit StubLinearEnv(int dim = 2, double a = 0.9, double b = 0.1)
      : dim_(dim), a_(a), b_(b) {
    SafetySpec spec;
    spec.usr_min = 20.0 * M_PI / 180.0;
    spec.usr_max = 30.0 * M_PI / 180.0;
    spec.scale = 0.05;
    set_safety_spec(spec);
  }

  std::string name() const override { return "stub_linear"; }
  int state_dim() const override { return dim_; }
  int action_dim() const override { return 1; }
  Eigen::VectorXd action_low() const override {
    return Eigen::VectorXd::Constant(1, -1.0);
  }
  Eigen::VectorXd action_high() const override {
    return Eigen::VectorXd::Constant(1, 1.0);
  }
  std::vector<int> angle_dims() const override { return {}; }
  int monitored_dim() const override { return 0; }

  Eigen::VectorXd sample_initial(samba::Rng& rng) const override {
    Eigen::VectorXd s(dim_);
    for (int i = 0; i < dim_; ++i) s[i] = rng.uniform(-0.5, 0.5);
    return s;
  }

  Eigen::VectorXd step(const Eigen::VectorXd& state,
                       const Eigen::VectorXd& action) const override {
    Eigen::VectorXd next = a_ * state;
    next[0] += b_ * action[0];
    for (int i = 1; i < dim_; ++i) next[i] += 0.05 * state[i - 1];
    return next;
  }

  double cost(const Eigen::VectorXd& state,
              const Eigen::VectorXd& action) const override {
    return state.squaredNorm() + 0.01 * action.squaredNorm();
  }

 private:
  int dim_;
  double a_, b_;
};

}  // namespace samba::test
