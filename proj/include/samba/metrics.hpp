// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Out-of-sample exploration (semi-)metrics on a fitted GP: the leave-one-out
// KL semi-metric via rank-one downdates of the cached inverse, the
// bootstrapped symmetric-KL metric over data bi-partitions, and the
// differential-entropy baseline. Values grow near training data (LOO,
// bootstrap) or far from it (entropy).

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "samba/gp.hpp"
#include "samba/io.hpp"
#include "samba/rng.hpp"

namespace samba {

inline double kl_gaussian(double p_mean, double p_var, double q_mean,
                          double q_var) {
  if (!(p_var > 0.0) || !(q_var > 0.0))
    throw std::invalid_argument("kl_gaussian requires positive variances");
  const double dm = p_mean - q_mean;
  return 0.5 * (dm * dm / q_var + p_var / q_var - std::log(p_var / q_var) -
                1.0);
}

// Variance floor applied before KL/entropy evaluation; keeps metrics finite
// when a posterior interpolates a training point almost exactly.
constexpr double kMetricVarFloor = 1e-12;

struct LooPosterior {
  VectorXd mean;  // per output dim, raw target space
  VectorXd var;
};

// Borrowing view over a fitted model's cached factors. Invalidated when the
// model refits (checked through the revision stamp).
class LooWorkspace {
 public:
  explicit LooWorkspace(const GpModel& model, int subsample = 0)
      : model_(&model), revision_(model.revision()), subsample_(subsample) {
    if (!model.fitted()) throw std::logic_error("LooWorkspace: unfitted model");
    const int n = model.n_points();
    a_diag_.resize(model.output_dim());
    for (int d = 0; d < model.output_dim(); ++d) {
      if (n > 0) {
        a_diag_[d] = model.factors(d).A.diagonal();
        if ((a_diag_[d].array() <= 0.0).any())
          throw std::logic_error("LooWorkspace: non-positive diagonal in A");
      }
    }
  }

  const GpModel& model() const {
    if (model_->revision() != revision_)
      throw std::logic_error("LooWorkspace invalidated by model refit");
    return *model_;
  }

  int n_points() const { return model().n_points(); }

  // Per-dim posterior at `query` (normalised space) plus the downdate
  // ingredients shared by every left-out index.
  struct Sweep {
    VectorXd mean_n, var_n;          // full posterior, normalised space
    std::vector<VectorXd> w;         // A k_* per dim
    VectorXd kss;                    // prior variance per dim
  };

  Sweep sweep(const VectorXd& query_features) const {
    const GpModel& m = model();
    if (query_features.size() != m.input_dim())
      throw std::invalid_argument("query dimension mismatch");
    const int n = m.n_points();
    const int dout = m.output_dim();
    const MatrixXd qn =
        m.stats().normalize_x(query_features.transpose());
    Sweep s;
    s.mean_n.resize(dout);
    s.var_n.resize(dout);
    s.kss.resize(dout);
    s.w.resize(dout);
    for (int d = 0; d < dout; ++d) {
      const auto& f = m.factors(d);
      s.kss[d] = f.hp.signal_variance();
      if (n == 0) {
        s.mean_n[d] = 0.0;
        s.var_n[d] = s.kss[d];
        s.w[d].resize(0);
        continue;
      }
      const MatrixXd kq =
          detail::rbf_matrix(m.normalized_inputs(), qn, f.hp);  // n x 1
      s.mean_n[d] = kq.col(0).dot(f.alpha);
      s.w[d] = f.A.selfadjointView<Eigen::Lower>() * kq.col(0);
      s.var_n[d] = std::max(0.0, s.kss[d] - kq.col(0).dot(s.w[d]));
    }
    return s;
  }

  // Posterior with training row i removed, identical to a refit on the
  // remaining rows at the same hyperparameters:
  //   mu_i  = mu  - w_i * alpha_i / a_ii
  //   var_i = var + w_i^2 / a_ii
  LooPosterior loo_posterior(const VectorXd& query_features, int i) const {
    const GpModel& m = model();
    if (i < 0 || i >= m.n_points())
      throw std::invalid_argument("loo_posterior: index out of range");
    const Sweep s = sweep(query_features);
    LooPosterior p;
    const int dout = m.output_dim();
    p.mean.resize(dout);
    p.var.resize(dout);
    for (int d = 0; d < dout; ++d) {
      const double ys = m.stats().y_std[d];
      const double wi = s.w[d][i];
      const double aii = a_diag_[d][i];
      const double mu_i = s.mean_n[d] - wi * m.factors(d).alpha[i] / aii;
      const double var_i = s.var_n[d] + wi * wi / aii;
      p.mean[d] = mu_i * ys + m.stats().y_mean[d];
      p.var[d] = var_i * ys * ys;
    }
    return p;
  }

  double zeta_from_sweep(const Sweep& s, Rng* rng = nullptr) const {
    const GpModel& m = model();
    const int n = m.n_points();
    if (n < 2)
      throw std::logic_error("zeta_loo requires at least two data points");
    std::vector<int> idx;
    if (subsample_ > 0 && subsample_ < n) {
      if (!rng)
        throw std::invalid_argument("LOO subsampling requires an rng");
      idx.resize(n);
      for (int i = 0; i < n; ++i) idx[i] = i;
      rng->shuffle(idx.begin(), idx.end());
      idx.resize(subsample_);
    }
    const int m_count = idx.empty() ? n : static_cast<int>(idx.size());
    double total = 0.0;
    for (int d = 0; d < m.output_dim(); ++d) {
      const double q_var = std::max(s.var_n[d], kMetricVarFloor);
      const VectorXd& w = s.w[d];
      const VectorXd& alpha = m.factors(d).alpha;
      const VectorXd& ad = a_diag_[d];
      double acc = 0.0;
      auto term = [&](int i) {
        const double wi = w[i];
        const double mu_shift = wi * alpha[i] / ad[i];
        const double p_var = std::max(q_var + wi * wi / ad[i],
                                      kMetricVarFloor);
        acc += kl_gaussian(s.mean_n[d] - mu_shift, p_var, s.mean_n[d], q_var);
      };
      if (idx.empty())
        for (int i = 0; i < n; ++i) term(i);
      else
        for (int i : idx) term(i);
      total += acc / m_count;
    }
    return total;
  }

  double zeta(const VectorXd& query_features, Rng* rng = nullptr) const {
    return zeta_from_sweep(sweep(query_features), rng);
  }

 private:
  const GpModel* model_;
  std::uint64_t revision_;
  int subsample_;
  std::vector<VectorXd> a_diag_;
};

inline double zeta_loo(const GpModel& model, const LooWorkspace& ws,
                       const VectorXd& query_features) {
  if (&ws.model() != &model)
    throw std::invalid_argument("workspace does not match model");
  return ws.zeta(query_features);
}

inline LooPosterior loo_posterior(const GpModel& model, const LooWorkspace& ws,
                                  const VectorXd& query_features, int i) {
  if (&ws.model() != &model)
    throw std::invalid_argument("workspace does not match model");
  return ws.loo_posterior(query_features, i);
}

// K random bi-partitions into halves of size floor(n/2) / ceil(n/2); each
// half conditions the full model's hyperparameters on its own rows.
class BootstrapWorkspace {
 public:
  BootstrapWorkspace(const GpModel& model, int partitions, Rng& rng) {
    if (!model.fitted() || model.n_points() < 2)
      throw std::logic_error("zeta_bootstrap requires a model with n >= 2");
    if (partitions < 1)
      throw std::invalid_argument("partition count must be >= 1");
    const int n = model.n_points();
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int k = 0; k < partitions; ++k) {
      rng.shuffle(idx.begin(), idx.end());
      std::vector<int> first(idx.begin(), idx.begin() + n / 2);
      std::vector<int> second(idx.begin() + n / 2, idx.end());
      halves_.emplace_back(model.conditioned_on(first),
                           model.conditioned_on(second));
    }
  }

  // Fixed partition, used by tests that compare against a hand-assembled
  // two-posterior computation.
  BootstrapWorkspace(const GpModel& model, const std::vector<int>& first,
                     const std::vector<int>& second) {
    halves_.emplace_back(model.conditioned_on(first),
                         model.conditioned_on(second));
  }

  double zeta(const VectorXd& query_features) const {
    double total = 0.0;
    for (const auto& [m1, m2] : halves_) {
      const GpPosterior p1 = m1.predict(query_features.transpose());
      const GpPosterior p2 = m2.predict(query_features.transpose());
      for (int d = 0; d < p1.mean.cols(); ++d) {
        const double v1 = std::max(p1.var(0, d), kMetricVarFloor);
        const double v2 = std::max(p2.var(0, d), kMetricVarFloor);
        total += 0.5 * (kl_gaussian(p1.mean(0, d), v1, p2.mean(0, d), v2) +
                        kl_gaussian(p2.mean(0, d), v2, p1.mean(0, d), v1));
      }
    }
    return total / halves_.size();
  }

  int partitions() const { return static_cast<int>(halves_.size()); }

 private:
  std::vector<std::pair<GpModel, GpModel>> halves_;
};

inline double zeta_bootstrap(const GpModel& model, int partitions,
                             const VectorXd& query_features, Rng& rng) {
  return BootstrapWorkspace(model, partitions, rng).zeta(query_features);
}

// Differential entropy of the predictive Gaussian, summed over output dims.
inline double entropy_baseline(const GpModel& model,
                               const VectorXd& query_features) {
  const GpPosterior post = model.predict(query_features.transpose());
  double h = 0.0;
  for (int d = 0; d < post.var.cols(); ++d) {
    const double v = std::max(post.var(0, d), kMetricVarFloor);
    h += 0.5 * std::log(2.0 * M_PI * M_E * v);
  }
  return h;
}

// Discounted trajectory aggregate: sum_t gamma^t zeta(q_t).
template <typename Evaluator>
double zeta_trajectory(Evaluator&& metric,
                       const std::vector<VectorXd>& step_queries,
                       double gamma) {
  if (step_queries.empty())
    throw std::invalid_argument("zeta_trajectory: empty trajectory");
  double total = 0.0;
  double disc = 1.0;
  for (const auto& q : step_queries) {
    total += disc * metric(q);
    disc *= gamma;
  }
  return total;
}

struct GridAxis {
  int state_dim = 0;
  double lo = 0.0;
  double hi = 1.0;
  int res = 1;

  double value(int i) const {
    if (res <= 1) return lo;
    return lo + (hi - lo) * static_cast<double>(i) / (res - 1);
  }
};

struct GridSpec {
  GridAxis axis0, axis1;
  VectorXd fixed_state;  // remaining dims taken from here
  VectorXd action;
};

struct MetricGrid {
  GridSpec spec;
  MatrixXd values;  // res0 x res1
};

// Evaluates `metric` on every grid node; the query is the feature vector of
// (state-with-axes-substituted, action).
template <typename Evaluator>
MetricGrid metric_grid(const FeatureMap& map, const GridSpec& spec,
                       Evaluator&& metric) {
  if (spec.axis0.res < 1 || spec.axis1.res < 1)
    throw std::invalid_argument("grid resolution must be >= 1");
  MetricGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.axis0.res, spec.axis1.res);
  VectorXd state = spec.fixed_state;
  for (int i = 0; i < spec.axis0.res; ++i) {
    state[spec.axis0.state_dim] = spec.axis0.value(i);
    for (int j = 0; j < spec.axis1.res; ++j) {
      state[spec.axis1.state_dim] = spec.axis1.value(j);
      grid.values(i, j) = metric(map.features(state, spec.action));
    }
  }
  if (!grid.values.allFinite())
    throw std::runtime_error("metric grid produced non-finite values");
  return grid;
}

// Row-major CSV (axis0 outer, axis1 inner) with header axis0,axis1,value.
inline void write_metric_grid_csv(const MetricGrid& grid,
                                  const std::filesystem::path& path) {
  CsvWriter csv(path, {"axis0", "axis1", "value"});
  for (int i = 0; i < grid.spec.axis0.res; ++i)
    for (int j = 0; j < grid.spec.axis1.res; ++j)
      csv.row({format_double(grid.spec.axis0.value(i)),
               format_double(grid.spec.axis1.value(j)),
               format_double(grid.values(i, j))});
}

inline MetricGrid read_metric_grid_csv(const std::filesystem::path& path,
                                       const GridSpec& spec) {
  const CsvTable t = read_csv(path);
  MetricGrid grid;
  grid.spec = spec;
  grid.values.resize(spec.axis0.res, spec.axis1.res);
  size_t r = 0;
  for (int i = 0; i < spec.axis0.res; ++i)
    for (int j = 0; j < spec.axis1.res; ++j)
      grid.values(i, j) = std::strtod(t.rows.at(r++).at(2).c_str(), nullptr);
  return grid;
}

// ARD-scaled distance from a raw query to the nearest training input,
// measured in lengthscale units of output dim `out_dim`.
inline double min_scaled_distance(const GpModel& model, int out_dim,
                                  const VectorXd& query_features) {
  if (model.n_points() == 0) return std::numeric_limits<double>::infinity();
  const MatrixXd qn = model.stats().normalize_x(query_features.transpose());
  const VectorXd inv_ls =
      (-model.hyperparams(out_dim).log_lengthscales).array().exp();
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < model.n_points(); ++i) {
    const VectorXd diff =
        (model.normalized_inputs().row(i) - qn.row(0)).transpose();
    best = std::min(best, diff.cwiseProduct(inv_ls).norm());
  }
  return best;
}

}  // namespace samba
