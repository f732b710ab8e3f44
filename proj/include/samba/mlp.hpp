// Copyright 2026 The Samba Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Small fixed-architecture MLP (two tanh hidden layers) with exact batch
// reverse-mode gradients over a flat parameter vector, plus the first-order
// optimizers used on it. No autodiff framework; the architectures here are
// small enough that hand-derived backprop is simpler and exactly testable.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "samba/rng.hpp"

namespace samba {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline void clip_gradient_norm(VectorXd& grad, double max_norm) {
  const double n = grad.norm();
  if (n > max_norm && n > 0.0) grad *= max_norm / n;
}

class Adam {
 public:
  Adam() = default;
  explicit Adam(int dim, double lr = 1e-3, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(VectorXd::Zero(dim)), v_(VectorXd::Zero(dim)) {}

  void step(VectorXd& params, const VectorXd& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params -= (lr_ / bc1) * m_.cwiseQuotient(
                  ((v_ / bc2).cwiseSqrt().array() + eps_).matrix());
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  VectorXd m_, v_;
  long t_ = 0;
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(int in, int hidden, int out) : in_(in), hidden_(hidden), out_(out) {
    params_ = VectorXd::Zero(param_count(in, hidden, out));
  }

  static int param_count(int in, int hidden, int out) {
    return in * hidden + hidden + hidden * hidden + hidden + hidden * out +
           out;
  }

  int input_dim() const { return in_; }
  int output_dim() const { return out_; }
  int hidden_dim() const { return hidden_; }
  VectorXd& params() { return params_; }
  const VectorXd& params() const { return params_; }

  void init_orthogonal(Rng& rng, double hidden_gain, double out_gain) {
    auto w1 = W1();
    auto w2 = W2();
    auto w3 = W3();
    fill_orthogonal(w1, rng, hidden_gain);
    fill_orthogonal(w2, rng, hidden_gain);
    fill_orthogonal(w3, rng, out_gain);
    b1().setZero();
    b2().setZero();
    b3().setZero();
  }

  struct Cache {
    MatrixXd X, A1, A2;  // batch inputs and post-tanh activations
  };

  // X is batch-major: B x in. Returns B x out.
  MatrixXd forward(const MatrixXd& X, Cache* cache = nullptr) const {
    if (X.cols() != in_) throw std::invalid_argument("mlp input dim mismatch");
    MatrixXd A1 =
        ((X * W1c().transpose()).rowwise() + b1c().transpose()).array().tanh();
    MatrixXd A2 =
        ((A1 * W2c().transpose()).rowwise() + b2c().transpose()).array().tanh();
    MatrixXd Y = (A2 * W3c().transpose()).rowwise() + b3c().transpose();
    if (cache) {
      cache->X = X;
      cache->A1 = std::move(A1);
      cache->A2 = std::move(A2);
      return Y;
    }
    return Y;
  }

  // dY: B x out upstream gradient. Returns flat parameter gradient laid out
  // exactly like params().
  VectorXd backward(const Cache& c, const MatrixXd& dY) const {
    VectorXd grad(params_.size());
    auto gW1 = map(grad, 0, hidden_, in_);
    auto gb1 = vec(grad, hidden_ * in_, hidden_);
    auto gW2 = map(grad, off_w2(), hidden_, hidden_);
    auto gb2 = vec(grad, off_b2(), hidden_);
    auto gW3 = map(grad, off_w3(), out_, hidden_);
    auto gb3 = vec(grad, off_b3(), out_);

    gW3 = dY.transpose() * c.A2;
    gb3 = dY.colwise().sum().transpose();
    MatrixXd dZ2 = (dY * W3c()).cwiseProduct(
        (1.0 - c.A2.array().square()).matrix());
    gW2 = dZ2.transpose() * c.A1;
    gb2 = dZ2.colwise().sum().transpose();
    MatrixXd dZ1 = (dZ2 * W2c()).cwiseProduct(
        (1.0 - c.A1.array().square()).matrix());
    gW1 = dZ1.transpose() * c.X;
    gb1 = dZ1.colwise().sum().transpose();
    return grad;
  }

 private:
  using Map = Eigen::Map<MatrixXd>;
  using CMap = Eigen::Map<const MatrixXd>;
  using VMap = Eigen::Map<VectorXd>;
  using CVMap = Eigen::Map<const VectorXd>;

  int off_w2() const { return hidden_ * in_ + hidden_; }
  int off_b2() const { return off_w2() + hidden_ * hidden_; }
  int off_w3() const { return off_b2() + hidden_; }
  int off_b3() const { return off_w3() + out_ * hidden_; }

  static Map map(VectorXd& v, int off, int r, int c) {
    return Map(v.data() + off, r, c);
  }
  static VMap vec(VectorXd& v, int off, int n) {
    return VMap(v.data() + off, n);
  }

  Map W1() { return map(params_, 0, hidden_, in_); }
  VMap b1() { return vec(params_, hidden_ * in_, hidden_); }
  Map W2() { return map(params_, off_w2(), hidden_, hidden_); }
  VMap b2() { return vec(params_, off_b2(), hidden_); }
  Map W3() { return map(params_, off_w3(), out_, hidden_); }
  VMap b3() { return vec(params_, off_b3(), out_); }

  CMap W1c() const { return CMap(params_.data(), hidden_, in_); }
  CVMap b1c() const { return CVMap(params_.data() + hidden_ * in_, hidden_); }
  CMap W2c() const { return CMap(params_.data() + off_w2(), hidden_, hidden_); }
  CVMap b2c() const { return CVMap(params_.data() + off_b2(), hidden_); }
  CMap W3c() const { return CMap(params_.data() + off_w3(), out_, hidden_); }
  CVMap b3c() const { return CVMap(params_.data() + off_b3(), out_); }

  template <typename M>
  static void fill_orthogonal(M&& W, Rng& rng, double gain) {
    const int r = static_cast<int>(W.rows());
    const int c = static_cast<int>(W.cols());
    const int big = std::max(r, c), small = std::min(r, c);
    MatrixXd G(big, small);
    for (int i = 0; i < G.size(); ++i) G.data()[i] = rng.normal();
    Eigen::HouseholderQR<MatrixXd> qr(G);
    MatrixXd Q = qr.householderQ() * MatrixXd::Identity(big, small);
    const MatrixXd R = qr.matrixQR().topRows(small).triangularView<Eigen::Upper>();
    for (int j = 0; j < small; ++j)
      if (R(j, j) < 0) Q.col(j) *= -1.0;
    if (r >= c)
      W = gain * Q;
    else
      W = gain * Q.transpose();
  }

  int in_ = 0, hidden_ = 0, out_ = 0;
  VectorXd params_;
};

}  // namespace samba
