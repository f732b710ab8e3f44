// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Exact Gaussian-process regression for the surrogate transition model:
// one independent GP per output dimension, ARD RBF kernel, hyperparameters
// fitted by maximising the exact marginal log likelihood on log-parameters,
// dense Cholesky factors cached for prediction and leave-one-out downdates.

#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "samba/rng.hpp"

namespace samba {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline double wrap_angle(double theta) {
  return std::remainder(theta, 2.0 * M_PI);
}

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Maps raw environment states to GP input features. Angle dimensions are
// embedded as (cos, sin) so the RBF kernel sees no wrap discontinuity;
// targets stay in raw state space as wrapped successor deltas.
struct FeatureMap {
  int state_dim = 0;
  int action_dim = 0;
  std::vector<int> angle_dims;

  int obs_dim() const {
    return state_dim + static_cast<int>(angle_dims.size());
  }
  int feature_dim() const { return obs_dim() + action_dim; }

  bool is_angle(int d) const {
    for (int a : angle_dims)
      if (a == d) return true;
    return false;
  }

  VectorXd embed_state(const VectorXd& x) const {
    VectorXd f(obs_dim());
    int j = 0;
    for (int d = 0; d < state_dim; ++d) {
      if (is_angle(d)) {
        f[j++] = std::cos(x[d]);
        f[j++] = std::sin(x[d]);
      } else {
        f[j++] = x[d];
      }
    }
    return f;
  }

  VectorXd features(const VectorXd& state, const VectorXd& action) const {
    VectorXd f(feature_dim());
    f.head(obs_dim()) = embed_state(state);
    f.tail(action_dim) = action;
    return f;
  }

  // Successor delta with angle components wrapped to the short way round.
  VectorXd delta(const VectorXd& state, const VectorXd& next) const {
    VectorXd d = next - state;
    for (int a : angle_dims) d[a] = wrap_angle(next[a] - state[a]);
    return d;
  }

  VectorXd apply_delta(const VectorXd& state, const VectorXd& d) const {
    VectorXd next = state + d;
    for (int a : angle_dims) next[a] = wrap_angle(next[a]);
    return next;
  }
};

struct KernelHyperparams {
  VectorXd log_lengthscales;
  double log_signal_variance = 0.0;
  double log_noise_variance = std::log(1e-2);

  static KernelHyperparams defaults(int input_dim) {
    KernelHyperparams hp;
    hp.log_lengthscales = VectorXd::Zero(input_dim);
    return hp;
  }

  static KernelHyperparams from_values(const VectorXd& lengthscales,
                                       double signal_variance,
                                       double noise_variance) {
    if ((lengthscales.array() <= 0).any() || signal_variance <= 0 ||
        noise_variance <= 0)
      throw std::invalid_argument("kernel hyperparameters must be positive");
    KernelHyperparams hp;
    hp.log_lengthscales = lengthscales.array().log();
    hp.log_signal_variance = std::log(signal_variance);
    hp.log_noise_variance = std::log(noise_variance);
    return hp;
  }

  VectorXd lengthscales() const { return log_lengthscales.array().exp(); }
  double signal_variance() const { return std::exp(log_signal_variance); }
  double noise_variance() const { return std::exp(log_noise_variance); }
  int input_dim() const { return static_cast<int>(log_lengthscales.size()); }
};

inline double rbf_kernel(const VectorXd& x, const VectorXd& y,
                         const KernelHyperparams& hp) {
  if (x.size() != y.size() || x.size() != hp.log_lengthscales.size())
    throw std::invalid_argument("rbf_kernel: dimension mismatch");
  const VectorXd inv_ls = (-hp.log_lengthscales).array().exp();
  const double q = ((x - y).cwiseProduct(inv_ls)).squaredNorm();
  return hp.signal_variance() * std::exp(-0.5 * q);
}

// Per-column affine normalisation, frozen when a model is fitted.
struct NormStats {
  VectorXd x_mean, x_std, y_mean, y_std;

  static NormStats identity(int d_in, int d_out) {
    NormStats s;
    s.x_mean = VectorXd::Zero(d_in);
    s.x_std = VectorXd::Ones(d_in);
    s.y_mean = VectorXd::Zero(d_out);
    s.y_std = VectorXd::Ones(d_out);
    return s;
  }

  static NormStats from_data(const MatrixXd& X, const MatrixXd& Y) {
    NormStats s;
    auto col_stats = [](const MatrixXd& M, VectorXd& mean, VectorXd& std) {
      mean = M.colwise().mean();
      std = VectorXd(M.cols());
      for (int c = 0; c < M.cols(); ++c) {
        const double var =
            (M.col(c).array() - mean[c]).square().sum() / M.rows();
        std[c] = std::sqrt(var);
        if (!(std[c] > 1e-12)) std[c] = 1.0;  // constant column guard
      }
    };
    col_stats(X, s.x_mean, s.x_std);
    col_stats(Y, s.y_mean, s.y_std);
    return s;
  }

  MatrixXd normalize_x(const MatrixXd& X) const {
    return (X.rowwise() - x_mean.transpose()).array().rowwise() /
           x_std.transpose().array();
  }
  MatrixXd normalize_y(const MatrixXd& Y) const {
    return (Y.rowwise() - y_mean.transpose()).array().rowwise() /
           y_std.transpose().array();
  }
  MatrixXd denormalize_x(const MatrixXd& Xn) const {
    return (Xn.array().rowwise() * x_std.transpose().array()).matrix()
               .rowwise() +
           x_mean.transpose();
  }
  MatrixXd denormalize_y(const MatrixXd& Yn) const {
    return (Yn.array().rowwise() * y_std.transpose().array()).matrix()
               .rowwise() +
           y_mean.transpose();
  }
};

// The GP training set: feature rows paired with successor-delta targets.
struct TransitionDataset {
  MatrixXd X;  // n x (obs_dim + action_dim)
  MatrixXd Y;  // n x state_dim

  TransitionDataset() = default;
  TransitionDataset(int d_in, int d_out) : X(0, d_in), Y(0, d_out) {}

  int size() const { return static_cast<int>(X.rows()); }
  int input_dim() const { return static_cast<int>(X.cols()); }
  int output_dim() const { return static_cast<int>(Y.cols()); }

  void append(const VectorXd& x, const VectorXd& y) {
    if (X.rows() == 0 && X.cols() == 0) {
      X.resize(0, x.size());
      Y.resize(0, y.size());
    }
    if (x.size() != X.cols() || y.size() != Y.cols())
      throw std::invalid_argument("dataset row dimension mismatch");
    X.conservativeResize(X.rows() + 1, Eigen::NoChange);
    Y.conservativeResize(Y.rows() + 1, Eigen::NoChange);
    X.row(X.rows() - 1) = x.transpose();
    Y.row(Y.rows() - 1) = y.transpose();
  }

  void append_transition(const FeatureMap& map, const VectorXd& state,
                         const VectorXd& action, const VectorXd& next) {
    append(map.features(state, action), map.delta(state, next));
  }
};

struct GpConfig {
  int opt_iters = 300;       // initial hyperparameter fit
  int refit_opt_iters = 50;  // warm-started refits
  double learning_rate = 0.1;
  double grad_tol = 1e-5;
  double noise_floor = 1e-6;
  double jitter_base = 1e-8;
  double jitter_max = 1e-4;
  bool normalize = true;
  bool warm_start = true;
  int hyper_subsample = 0;  // 0 = fit hyperparameters on all rows
  int n_restarts = 3;       // cold-fit initialisations (best MLL wins)
};

struct GpPosterior {
  MatrixXd mean;                // n2 x d_out
  MatrixXd var;                 // n2 x d_out (diagonal)
  std::vector<MatrixXd> cov;    // per output dim, only when full_cov requested
};

struct FitReport {
  std::vector<int> iters;
  std::vector<double> grad_norm;
  std::vector<double> mll;
  std::vector<double> jitter;
  double total_mll() const {
    double s = 0;
    for (double v : mll) s += v;
    return s;
  }
};

namespace detail {

// Pairwise kernel matrix between rows of A and rows of B (already normalised).
inline MatrixXd rbf_matrix(const MatrixXd& A, const MatrixXd& B,
                           const KernelHyperparams& hp) {
  const VectorXd inv_ls = (-hp.log_lengthscales).array().exp();
  const MatrixXd As = A.array().rowwise() * inv_ls.transpose().array();
  const MatrixXd Bs = B.array().rowwise() * inv_ls.transpose().array();
  const VectorXd a2 = As.rowwise().squaredNorm();
  const VectorXd b2 = Bs.rowwise().squaredNorm();
  MatrixXd Q = (-2.0 * As * Bs.transpose());
  Q.colwise() += a2;
  Q.rowwise() += b2.transpose();
  return hp.signal_variance() *
         (-0.5 * Q.array().max(0.0)).exp().matrix();
}

struct CholResult {
  Eigen::LLT<MatrixXd> llt;
  double jitter = 0.0;
};

// Direct Cholesky with jitter escalation: try exact first, then the
// configured decade ladder.
inline CholResult robust_cholesky(const MatrixXd& C, double jitter_base,
                                  double jitter_max) {
  CholResult r;
  r.llt.compute(C);
  if (r.llt.info() == Eigen::Success) return r;
  for (double j = jitter_base; j <= jitter_max * (1 + 1e-12); j *= 10.0) {
    MatrixXd Cj = C;
    Cj.diagonal().array() += j;
    r.llt.compute(Cj);
    if (r.llt.info() == Eigen::Success) {
      r.jitter = j;
      return r;
    }
  }
  throw FitError("Cholesky factorisation failed after jitter escalation");
}

}  // namespace detail

class GpModel {
 public:
  struct DimFactors {
    KernelHyperparams hp;
    MatrixXd L;       // lower Cholesky of K + sigma^2 I (+ jitter)
    MatrixXd A;       // (K + sigma^2 I)^-1
    VectorXd alpha;   // A * y
    double log_det_half = 0.0;  // sum log L_ii
    double jitter = 0.0;
  };

  GpModel() = default;

  // Prior-only model (no data); predictions revert to the prior.
  GpModel(int input_dim, int output_dim,
          std::optional<FeatureMap> map = std::nullopt)
      : d_in_(input_dim), d_out_(output_dim) {
    if (map) map_ = *map;
    stats_ = NormStats::identity(d_in_, d_out_);
    dims_.resize(d_out_);
    for (auto& f : dims_) f.hp = KernelHyperparams::defaults(d_in_);
    data_ = TransitionDataset(d_in_, d_out_);
    Xn_.resize(0, d_in_);
    Yn_.resize(0, d_out_);
    fitted_ = true;
  }

  static GpModel fit(const TransitionDataset& data, const GpConfig& cfg,
                     Rng& rng, const GpModel* warm_from = nullptr,
                     FitReport* report = nullptr,
                     std::optional<FeatureMap> map = std::nullopt) {
    if (data.size() < 2)
      throw std::invalid_argument("fit requires at least two data points");
    if (!data.X.allFinite() || !data.Y.allFinite())
      throw std::invalid_argument("fit requires finite data");

    GpModel m;
    m.d_in_ = data.input_dim();
    m.d_out_ = data.output_dim();
    if (map)
      m.map_ = *map;
    else if (warm_from)
      m.map_ = warm_from->map_;
    m.cfg_ = cfg;
    m.data_ = data;
    m.stats_ = cfg.normalize ? NormStats::from_data(data.X, data.Y)
                             : NormStats::identity(m.d_in_, m.d_out_);
    m.Xn_ = m.stats_.normalize_x(data.X);
    m.Yn_ = m.stats_.normalize_y(data.Y);

    // Hyperparameters may be optimised on a row subset at large n; the
    // cached factors below always condition on the full data set.
    std::vector<int> sub(data.size());
    for (int i = 0; i < data.size(); ++i) sub[i] = i;
    if (cfg.hyper_subsample > 0 && cfg.hyper_subsample < data.size()) {
      rng.shuffle(sub.begin(), sub.end());
      sub.resize(cfg.hyper_subsample);
      std::sort(sub.begin(), sub.end());
    }
    MatrixXd Xs(sub.size(), m.d_in_);
    MatrixXd Ys(sub.size(), m.d_out_);
    for (size_t i = 0; i < sub.size(); ++i) {
      Xs.row(i) = m.Xn_.row(sub[i]);
      Ys.row(i) = m.Yn_.row(sub[i]);
    }

    const bool warm = warm_from && cfg.warm_start &&
                      warm_from->output_dim() == m.d_out_ &&
                      warm_from->input_dim() == m.d_in_;
    const int iters = warm ? cfg.refit_opt_iters : cfg.opt_iters;

    m.dims_.resize(m.d_out_);
    if (report) {
      report->iters.assign(m.d_out_, 0);
      report->grad_norm.assign(m.d_out_, 0.0);
      report->mll.assign(m.d_out_, 0.0);
      report->jitter.assign(m.d_out_, 0.0);
    }
    for (int d = 0; d < m.d_out_; ++d) {
      // Warm refits continue from the previous optimum; cold fits try a few
      // initialisations and keep the best MLL (the likelihood is multimodal,
      // with a white-noise mode competing against the structured one).
      std::vector<KernelHyperparams> inits;
      if (warm) {
        inits.push_back(warm_from->dims_[d].hp);
      } else {
        inits.push_back(KernelHyperparams::defaults(m.d_in_));
        for (int r = 1; r < std::max(1, cfg.n_restarts); ++r) {
          KernelHyperparams hp = KernelHyperparams::defaults(m.d_in_);
          for (int i = 0; i < m.d_in_; ++i)
            hp.log_lengthscales[i] = rng.uniform(std::log(0.3), std::log(3.0));
          hp.log_signal_variance = rng.uniform(std::log(0.3), std::log(3.0));
          hp.log_noise_variance = std::log(0.05);
          inits.push_back(hp);
        }
      }
      KernelHyperparams best;
      double best_mll = -std::numeric_limits<double>::infinity();
      int best_iters = 0;
      double best_gnorm = 0.0;
      for (auto hp : inits) {
        hp.log_noise_variance =
            std::max(hp.log_noise_variance, std::log(cfg.noise_floor));
        int used = 0;
        double gnorm = 0.0;
        optimize_dim(Xs, Ys.col(d), hp, cfg, iters, &used, &gnorm);
        const double mll = mll_value(Xs, Ys.col(d), hp, cfg);
        if (mll > best_mll) {
          best_mll = mll;
          best = hp;
          best_iters = used;
          best_gnorm = gnorm;
        }
      }
      if (report) {
        report->iters[d] = best_iters;
        report->grad_norm[d] = best_gnorm;
      }
      m.dims_[d].hp = best;
      m.build_factors(d);
      if (report) {
        report->mll[d] = m.mll_dim(d);
        report->jitter[d] = m.dims_[d].jitter;
      }
    }
    m.fitted_ = true;
    m.revision_ = next_revision();
    return m;
  }

  // Conditions on the data at fixed, caller-chosen hyperparameters; no
  // optimisation. Accepts any data size including empty (prior).
  static GpModel from_hyperparams(const TransitionDataset& data,
                                  const std::vector<KernelHyperparams>& hps,
                                  const GpConfig& cfg,
                                  std::optional<FeatureMap> map = std::nullopt) {
    GpModel m;
    m.d_in_ = data.input_dim();
    m.d_out_ = data.output_dim();
    if (static_cast<int>(hps.size()) != m.d_out_)
      throw std::invalid_argument("one hyperparameter set per output dim");
    if (map) m.map_ = *map;
    m.cfg_ = cfg;
    m.data_ = data;
    m.stats_ = (cfg.normalize && data.size() > 0)
                   ? NormStats::from_data(data.X, data.Y)
                   : NormStats::identity(m.d_in_, m.d_out_);
    m.Xn_ = m.stats_.normalize_x(data.X);
    m.Yn_ = m.stats_.normalize_y(data.Y);
    m.dims_.resize(m.d_out_);
    for (int d = 0; d < m.d_out_; ++d) {
      m.dims_[d].hp = hps[d];
      if (data.size() > 0) m.build_factors(d);
    }
    m.fitted_ = true;
    m.revision_ = next_revision();
    return m;
  }

  // Same hyperparameters and normalisation, factors conditioned on a row
  // subset. Empty subset reverts to the prior. Used by the LOO refit oracle
  // and the bootstrap halves.
  GpModel conditioned_on(const std::vector<int>& rows) const {
    GpModel m;
    m.d_in_ = d_in_;
    m.d_out_ = d_out_;
    m.map_ = map_;
    m.cfg_ = cfg_;
    m.stats_ = stats_;
    m.data_ = TransitionDataset(d_in_, d_out_);
    m.data_.X.resize(rows.size(), d_in_);
    m.data_.Y.resize(rows.size(), d_out_);
    for (size_t i = 0; i < rows.size(); ++i) {
      m.data_.X.row(i) = data_.X.row(rows[i]);
      m.data_.Y.row(i) = data_.Y.row(rows[i]);
    }
    m.Xn_ = stats_.normalize_x(m.data_.X);
    m.Yn_ = stats_.normalize_y(m.data_.Y);
    m.dims_.resize(d_out_);
    for (int d = 0; d < d_out_; ++d) {
      m.dims_[d].hp = dims_[d].hp;
      if (!rows.empty()) m.build_factors(d);
    }
    m.fitted_ = true;
    m.revision_ = next_revision();
    return m;
  }

  int n_points() const { return static_cast<int>(Xn_.rows()); }
  int input_dim() const { return d_in_; }
  int output_dim() const { return d_out_; }
  bool fitted() const { return fitted_; }
  std::uint64_t revision() const { return revision_; }
  const FeatureMap& feature_map() const { return map_; }
  void set_feature_map(const FeatureMap& map) { map_ = map; }
  const NormStats& stats() const { return stats_; }
  const TransitionDataset& data() const { return data_; }
  const MatrixXd& normalized_inputs() const { return Xn_; }
  const MatrixXd& normalized_targets() const { return Yn_; }
  const DimFactors& factors(int d) const { return dims_.at(d); }
  const KernelHyperparams& hyperparams(int d) const { return dims_.at(d).hp; }
  const GpConfig& config() const { return cfg_; }

  // Marginal log likelihood of the cached model (sum over output dims).
  double marginal_log_likelihood() const {
    ensure_fitted();
    double s = 0;
    for (int d = 0; d < d_out_; ++d) s += mll_dim(d);
    return s;
  }

  // MLL and gradient w.r.t. (log lengthscales..., log sv, log noise) for one
  // output dim, evaluated at the cached hyperparameters on the full data.
  std::pair<double, VectorXd> mll_with_grad(int d) const {
    ensure_fitted();
    return mll_and_grad(Xn_, Yn_.col(d), dims_[d].hp, cfg_);
  }

  GpPosterior predict(const MatrixXd& queries, bool full_cov = false) const {
    ensure_fitted();
    if (queries.cols() != d_in_)
      throw std::invalid_argument("predict: query dimension mismatch");
    const int n2 = static_cast<int>(queries.rows());
    const MatrixXd Qn = stats_.normalize_x(queries);
    GpPosterior post;
    post.mean.resize(n2, d_out_);
    post.var.resize(n2, d_out_);
    if (full_cov) post.cov.resize(d_out_);
    for (int d = 0; d < d_out_; ++d) {
      const auto& f = dims_[d];
      const double sv = f.hp.signal_variance();
      const double ys = stats_.y_std[d];
      const double ym = stats_.y_mean[d];
      if (n_points() == 0) {
        post.mean.col(d).setConstant(ym);
        post.var.col(d).setConstant(sv * ys * ys);
        if (full_cov) {
          post.cov[d] = detail::rbf_matrix(Qn, Qn, f.hp) * (ys * ys);
        }
        continue;
      }
      const MatrixXd Kq = detail::rbf_matrix(Xn_, Qn, f.hp);  // n x n2
      const VectorXd mean_n = Kq.transpose() * f.alpha;
      const MatrixXd W = f.A.selfadjointView<Eigen::Lower>() * Kq;
      VectorXd var_n(n2);
      for (int j = 0; j < n2; ++j)
        var_n[j] = std::max(0.0, sv - Kq.col(j).dot(W.col(j)));
      post.mean.col(d) = (mean_n.array() * ys + ym).matrix();
      post.var.col(d) = (var_n.array() * ys * ys).matrix();
      if (full_cov) {
        MatrixXd S = detail::rbf_matrix(Qn, Qn, f.hp) - Kq.transpose() * W;
        S = 0.5 * (S + S.transpose());  // enforce symmetry
        for (int j = 0; j < n2; ++j) S(j, j) = std::max(0.0, S(j, j));
        post.cov[d] = S * (ys * ys);
      }
    }
    return post;
  }

  // One stochastic transition through the surrogate: per-dim Gaussian delta
  // sample (diagonal), composed back onto the raw state.
  VectorXd step(const VectorXd& state, const VectorXd& action,
                Rng& rng) const {
    ensure_fitted();
    const VectorXd q = map_.features(state, action);
    const GpPosterior post = predict(q.transpose());
    VectorXd delta(d_out_);
    for (int d = 0; d < d_out_; ++d)
      delta[d] = post.mean(0, d) + std::sqrt(post.var(0, d)) * rng.normal();
    return map_.apply_delta(state, delta);
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "samba-gp-v1";
    j["input_dim"] = d_in_;
    j["output_dim"] = d_out_;
    j["env"] = env_name_;
    j["feature_map"] = {{"state_dim", map_.state_dim},
                        {"action_dim", map_.action_dim},
                        {"angle_dims", map_.angle_dims}};
    j["normalize"] = cfg_.normalize;
    auto vec = [](const VectorXd& v) {
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    j["stats"] = {{"x_mean", vec(stats_.x_mean)},
                  {"x_std", vec(stats_.x_std)},
                  {"y_mean", vec(stats_.y_mean)},
                  {"y_std", vec(stats_.y_std)}};
    for (const auto& f : dims_) {
      j["hyperparams"].push_back(
          {{"log_lengthscales", vec(f.hp.log_lengthscales)},
           {"log_signal_variance", f.hp.log_signal_variance},
           {"log_noise_variance", f.hp.log_noise_variance}});
    }
    j["X"] = nlohmann::json::array();
    j["Y"] = nlohmann::json::array();
    for (int i = 0; i < data_.size(); ++i) {
      const VectorXd xr = data_.X.row(i).transpose();
      const VectorXd yr = data_.Y.row(i).transpose();
      j["X"].push_back(vec(xr));
      j["Y"].push_back(vec(yr));
    }
    return j;
  }

  static GpModel from_json(const nlohmann::json& j) {
    if (j.at("format") != "samba-gp-v1")
      throw std::invalid_argument("unknown model checkpoint format");
    GpModel m;
    m.d_in_ = j.at("input_dim").get<int>();
    m.d_out_ = j.at("output_dim").get<int>();
    m.env_name_ = j.value("env", std::string());
    const auto& fm = j.at("feature_map");
    m.map_.state_dim = fm.at("state_dim").get<int>();
    m.map_.action_dim = fm.at("action_dim").get<int>();
    m.map_.angle_dims = fm.at("angle_dims").get<std::vector<int>>();
    m.cfg_.normalize = j.at("normalize").get<bool>();
    auto vec = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<double>>();
      return Eigen::Map<const VectorXd>(v.data(), v.size()).eval();
    };
    m.stats_.x_mean = vec(j.at("stats").at("x_mean"));
    m.stats_.x_std = vec(j.at("stats").at("x_std"));
    m.stats_.y_mean = vec(j.at("stats").at("y_mean"));
    m.stats_.y_std = vec(j.at("stats").at("y_std"));
    const auto& rows_x = j.at("X");
    const auto& rows_y = j.at("Y");
    m.data_ = TransitionDataset(m.d_in_, m.d_out_);
    m.data_.X.resize(rows_x.size(), m.d_in_);
    m.data_.Y.resize(rows_y.size(), m.d_out_);
    for (size_t i = 0; i < rows_x.size(); ++i) {
      m.data_.X.row(i) = vec(rows_x[i]).transpose();
      m.data_.Y.row(i) = vec(rows_y[i]).transpose();
    }
    m.Xn_ = m.stats_.normalize_x(m.data_.X);
    m.Yn_ = m.stats_.normalize_y(m.data_.Y);
    m.dims_.resize(m.d_out_);
    for (int d = 0; d < m.d_out_; ++d) {
      auto& hp = m.dims_[d].hp;
      const auto& hj = j.at("hyperparams").at(d);
      hp.log_lengthscales = vec(hj.at("log_lengthscales"));
      hp.log_signal_variance = hj.at("log_signal_variance").get<double>();
      hp.log_noise_variance = hj.at("log_noise_variance").get<double>();
      if (m.data_.size() > 0) m.build_factors(d);
    }
    m.fitted_ = true;
    m.revision_ = next_revision();
    return m;
  }

  const std::string& env_name() const { return env_name_; }
  void set_env_name(const std::string& name) { env_name_ = name; }

 private:
  void ensure_fitted() const {
    if (!fitted_) throw std::logic_error("GpModel used before fit");
  }

  static std::uint64_t next_revision() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  void build_factors(int d) {
    auto& f = dims_[d];
    const int n = n_points();
    MatrixXd C = detail::rbf_matrix(Xn_, Xn_, f.hp);
    C.diagonal().array() += f.hp.noise_variance();
    auto chol = detail::robust_cholesky(C, cfg_.jitter_base, cfg_.jitter_max);
    f.jitter = chol.jitter;
    f.L = chol.llt.matrixL();
    f.A = chol.llt.solve(MatrixXd::Identity(n, n));
    f.A = 0.5 * (f.A + f.A.transpose()).eval();
    f.alpha = f.A.selfadjointView<Eigen::Lower>() * Yn_.col(d);
    f.log_det_half = f.L.diagonal().array().log().sum();
  }

  double mll_dim(int d) const {
    const auto& f = dims_[d];
    const int n = n_points();
    return -0.5 * Yn_.col(d).dot(f.alpha) - f.log_det_half -
           0.5 * n * std::log(2.0 * M_PI);
  }

  // MLL value only (Cholesky, no inverse); used inside the line search.
  static double mll_value(const MatrixXd& X, const VectorXd& y,
                          const KernelHyperparams& hp, const GpConfig& cfg) {
    const int n = static_cast<int>(X.rows());
    MatrixXd C = detail::rbf_matrix(X, X, hp);
    C.diagonal().array() += hp.noise_variance();
    auto chol = detail::robust_cholesky(C, cfg.jitter_base, cfg.jitter_max);
    const MatrixXd L = chol.llt.matrixL();
    const VectorXd alpha = chol.llt.solve(y);
    return -0.5 * y.dot(alpha) - L.diagonal().array().log().sum() -
           0.5 * n * std::log(2.0 * M_PI);
  }

  // MLL and gradient via the trace identity d/dt MLL = 1/2 tr((aa' - A) dK/dt).
  static std::pair<double, VectorXd> mll_and_grad(const MatrixXd& X,
                                                  const VectorXd& y,
                                                  const KernelHyperparams& hp,
                                                  const GpConfig& cfg) {
    const int n = static_cast<int>(X.rows());
    const int d_in = static_cast<int>(X.cols());
    const MatrixXd Kf = detail::rbf_matrix(X, X, hp);
    MatrixXd C = Kf;
    C.diagonal().array() += hp.noise_variance();
    auto chol = detail::robust_cholesky(C, cfg.jitter_base, cfg.jitter_max);
    const MatrixXd L = chol.llt.matrixL();
    const MatrixXd A = chol.llt.solve(MatrixXd::Identity(n, n));
    const VectorXd alpha = A.selfadjointView<Eigen::Lower>() * y;
    const double mll = -0.5 * y.dot(alpha) -
                       L.diagonal().array().log().sum() -
                       0.5 * n * std::log(2.0 * M_PI);
    const MatrixXd G = alpha * alpha.transpose() - A;

    VectorXd grad(d_in + 2);
    const VectorXd ls = hp.lengthscales();
    for (int d = 0; d < d_in; ++d) {
      // dK/d(log l_d) = Kf .* (dx_d^2 / l_d^2)
      const VectorXd xc = X.col(d) / ls[d];
      double acc = 0;
      for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
          const double dd = xc[i] - xc[j];
          acc += G(i, j) * Kf(i, j) * dd * dd;
        }
      }
      grad[d] = 0.5 * acc;
    }
    grad[d_in] = 0.5 * G.cwiseProduct(Kf).sum();            // log sv
    grad[d_in + 1] = 0.5 * hp.noise_variance() * G.trace();  // log noise
    return {mll, grad};
  }

  // Box on normalised data: inputs are z-scored, so lengthscales beyond ~30
  // and signal variances beyond ~100 only buy ill-conditioning.
  static void clamp_logs(KernelHyperparams& hp, const GpConfig& cfg) {
    const double lo_ls = std::log(1e-3), hi_ls = std::log(30.0);
    for (int i = 0; i < hp.log_lengthscales.size(); ++i)
      hp.log_lengthscales[i] =
          std::clamp(hp.log_lengthscales[i], lo_ls, hi_ls);
    hp.log_signal_variance =
        std::clamp(hp.log_signal_variance, std::log(1e-8), std::log(1e2));
    hp.log_noise_variance = std::clamp(
        hp.log_noise_variance, std::log(cfg.noise_floor), std::log(1e2));
  }

  // Gradient ascent on log-hyperparameters with a backtracking line search;
  // every accepted step improves the MLL.
  static void optimize_dim(const MatrixXd& X, const VectorXd& y,
                           KernelHyperparams& hp, const GpConfig& cfg,
                           int max_iters, int* iters_out,
                           double* grad_norm_out) {
    clamp_logs(hp, cfg);
    auto pack = [&](const KernelHyperparams& h) {
      VectorXd v(h.input_dim() + 2);
      v.head(h.input_dim()) = h.log_lengthscales;
      v[h.input_dim()] = h.log_signal_variance;
      v[h.input_dim() + 1] = h.log_noise_variance;
      return v;
    };
    auto unpack = [&](const VectorXd& v) {
      KernelHyperparams h;
      h.log_lengthscales = v.head(v.size() - 2);
      h.log_signal_variance = v[v.size() - 2];
      h.log_noise_variance = v[v.size() - 1];
      clamp_logs(h, cfg);
      return h;
    };

    auto [f0, g] = mll_and_grad(X, y, hp, cfg);
    int iter = 0;
    for (; iter < max_iters; ++iter) {
      if (g.norm() < cfg.grad_tol) break;
      VectorXd theta = pack(hp);
      // Normalised ascent direction: no coordinate moves more than the
      // learning rate (in log units) before backtracking.
      VectorXd dir = g;
      const double gmax = dir.cwiseAbs().maxCoeff();
      if (gmax > 1.0) dir /= gmax;
      double step = cfg.learning_rate;
      bool accepted = false;
      for (int bt = 0; bt < 14; ++bt) {
        KernelHyperparams trial = unpack(theta + step * dir);
        double f_trial;
        try {
          f_trial = mll_value(X, y, trial, cfg);
        } catch (const FitError&) {
          step *= 0.5;
          continue;
        }
        if (f_trial > f0) {
          hp = trial;
          f0 = f_trial;
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) break;
      std::tie(f0, g) = mll_and_grad(X, y, hp, cfg);
    }
    if (iters_out) *iters_out = iter;
    if (grad_norm_out) *grad_norm_out = g.norm();
  }

  int d_in_ = 0;
  int d_out_ = 0;
  bool fitted_ = false;
  std::uint64_t revision_ = 0;
  FeatureMap map_;
  GpConfig cfg_;
  NormStats stats_;
  TransitionDataset data_;
  MatrixXd Xn_, Yn_;
  std::vector<DimFactors> dims_;
  std::string env_name_;
};

}  // namespace samba
