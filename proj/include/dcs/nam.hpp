#pragma once

#include <cmath>
#include <string>

#include "dcs/error.hpp"
#include "dcs/normal.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/schedule.hpp"

namespace dcs {

enum class Optimizer { AdamW, SgdMomentum, Sgd, Analytic };

inline std::string to_string(Optimizer o) {
  switch (o) {
    case Optimizer::AdamW: return "AdamW";
    case Optimizer::SgdMomentum: return "SgdMomentum";
    case Optimizer::Sgd: return "Sgd";
    case Optimizer::Analytic: return "Analytic";
  }
  return "unknown";
}

struct NamConfig {
  Optimizer optimizer = Optimizer::AdamW;
  double lr = 1.0;
  int max_iters = 50;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double momentum = 0.9;
  bool stopping_enabled = true;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("nam.lr: must be > 0");
    if (max_iters < 1) throw ConfigError("nam.max_iters: must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("nam.adam_beta1: must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("nam.adam_beta2: must lie in [0,1)");
    if (!(adam_eps > 0.0)) throw ConfigError("nam.adam_eps: must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("nam.weight_decay: must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("nam.momentum: must lie in [0,1)");
  }
};

// Mask operators project exactly with A+ = A^T, so they default to the closed form.
inline Optimizer default_optimizer(const LinearOperator& A) {
  return A.kind() == OperatorKind::Mask ? Optimizer::Analytic : Optimizer::AdamW;
}

struct NamResult {
  Vector eps_y;
  int iters_used = 0;
  bool stopped_early = false;
  double final_pvalue = 0.0;
  double final_mean_abs_res = 0.0;
};

struct StopDecision {
  double pvalue;
  bool stop;
};

// res = y - A tweedie(x_t, eps_theta + eps_y, t).
inline Vector likelihood_residual(const Vector& x_t, const Vector& eps_theta, const Vector& eps_y, int t,
                                  const Schedule& s, const Measurement& meas) {
  detail::require_dim(eps_theta.size(), x_t.size(), "likelihood_residual (eps_theta)");
  detail::require_dim(eps_y.size(), x_t.size(), "likelihood_residual (eps_y)");
  return meas.y - meas.A().apply(tweedie(x_t, eps_theta + eps_y, t, s));
}

// Gradient of ||res||^2 / (2 sigma_y^2) with respect to eps_y.
inline Vector loss_gradient_from_residual(const Vector& res, int t, const Schedule& s, const Measurement& meas) {
  if (!(meas.sigma_y > 0.0)) {
    throw ArgumentError("loss_gradient: sigma_y = 0 makes the likelihood singular; use the Analytic optimizer");
  }
  s.check_reverse(t);
  const double scale = s.sigma(t) / (std::sqrt(s.alpha_bar(t)) * meas.sigma_y * meas.sigma_y);
  return scale * meas.A().adjoint(res);
}

inline Vector loss_gradient(const Vector& x_t, const Vector& eps_theta, const Vector& eps_y, int t,
                            const Schedule& s, const Measurement& meas) {
  return loss_gradient_from_residual(likelihood_residual(x_t, eps_theta, eps_y, t, s, meas), t, s, meas);
}

inline double mean_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().sum() / static_cast<double>(v.size()); }

// Residual z-test: p = 2 Phi(-m / sigma_y) with m the mean absolute residual;
// optimization stops once p >= sigma_t.
inline StopDecision stop_test(const Vector& res, double sigma_y, double sigma_t) {
  if (!(sigma_y > 0.0)) throw ArgumentError("stop_test: sigma_y must be > 0");
  if (res.size() < 1) throw ArgumentError("stop_test: empty residual");
  const double p = two_sided_tail(mean_abs(res) / sigma_y);
  return {p, p >= sigma_t};
}

namespace detail {

class StepRule {
 public:
  StepRule(const NamConfig& cfg, Eigen::Index n) : cfg_(cfg), m_(Vector::Zero(n)), v_(Vector::Zero(n)) {}

  void step(Vector& param, const Vector& grad) {
    ++k_;
    switch (cfg_.optimizer) {
      case Optimizer::AdamW: {
        if (cfg_.weight_decay > 0.0) param *= 1.0 - cfg_.lr * cfg_.weight_decay;
        m_ = cfg_.adam_beta1 * m_ + (1.0 - cfg_.adam_beta1) * grad;
        v_ = cfg_.adam_beta2 * v_ + (1.0 - cfg_.adam_beta2) * grad.cwiseAbs2();
        const double c1 = 1.0 - std::pow(cfg_.adam_beta1, k_);
        const double c2 = 1.0 - std::pow(cfg_.adam_beta2, k_);
        param.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.adam_eps);
        break;
      }
      case Optimizer::SgdMomentum:
        m_ = cfg_.momentum * m_ + grad;
        param -= cfg_.lr * m_;
        break;
      case Optimizer::Sgd:
        param -= cfg_.lr * grad;
        break;
      case Optimizer::Analytic:
        break;
    }
  }

 private:
  const NamConfig& cfg_;
  Vector m_;
  Vector v_;
  int k_ = 0;
};

inline void finish(NamResult& out, const Vector& res, const Measurement& meas, double sigma_t) {
  out.final_mean_abs_res = mean_abs(res);
  out.final_pvalue = meas.sigma_y > 0.0 ? stop_test(res, meas.sigma_y, sigma_t).pvalue : 1.0;
}

}  // namespace detail

// Noise-aware maximization of the measurement likelihood over the single
// correction eps_y, starting from zero. The stopping test runs before every
// step, so at most max_iters steps are taken.
inline NamResult run_nam(const Vector& x_t, const Vector& eps_theta, int t, const Schedule& s,
                         const Measurement& meas, const NamConfig& cfg) {
  cfg.validate();
  s.check_reverse(t);
  detail::require_dim(meas.A().in_dim(), x_t.size(), "run_nam");
  const double sigma_t = s.sigma(t);
  const bool noiseless = !(meas.sigma_y > 0.0);
  if (noiseless && cfg.optimizer != Optimizer::Analytic) {
    throw ArgumentError("run_nam: sigma_y = 0 requires the Analytic optimizer");
  }

  NamResult out;
  out.eps_y = Vector::Zero(x_t.size());
  Vector res = likelihood_residual(x_t, eps_theta, out.eps_y, t, s, meas);

  if (cfg.optimizer == Optimizer::Analytic) {
    // Least-squares fit: A tweedie(...) becomes the projection of y onto range(A).
    // The stopping test is only reported here, it does not gate the solve.
    out.eps_y = -(std::sqrt(s.alpha_bar(t)) / sigma_t) * meas.A().pinv_apply(res);
    out.iters_used = 1;
    res = likelihood_residual(x_t, eps_theta, out.eps_y, t, s, meas);
    detail::finish(out, res, meas, sigma_t);
    out.stopped_early = !noiseless && cfg.stopping_enabled && out.final_pvalue >= sigma_t;
    return out;
  }

  detail::StepRule rule(cfg, x_t.size());
  while (true) {
    if (cfg.stopping_enabled && stop_test(res, meas.sigma_y, sigma_t).stop) {
      out.stopped_early = true;
      break;
    }
    if (out.iters_used >= cfg.max_iters) break;
    rule.step(out.eps_y, loss_gradient_from_residual(res, t, s, meas));
    ++out.iters_used;
    res = likelihood_residual(x_t, eps_theta, out.eps_y, t, s, meas);
  }
  detail::finish(out, res, meas, sigma_t);
  return out;
}

}  // namespace dcs
