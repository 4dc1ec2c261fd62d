#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "dcs/error.hpp"
#include "dcs/nam.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/rng.hpp"
#include "dcs/schedule.hpp"

namespace dcs {

enum class SolverKind { DCS, DPS_JF, DDNM, Unconditional };
enum class StepKind { DDPM, DDIM };

inline std::string to_string(SolverKind s) {
  switch (s) {
    case SolverKind::DCS: return "DCS";
    case SolverKind::DPS_JF: return "DPS_JF";
    case SolverKind::DDNM: return "DDNM";
    case SolverKind::Unconditional: return "Unconditional";
  }
  return "unknown";
}

inline std::string to_string(StepKind s) { return s == StepKind::DDPM ? "DDPM" : "DDIM"; }

// Guidance scale cap applied when the DPS residual norm underflows.
inline constexpr double kDpsZetaCap = 1e3;
inline constexpr double kDpsResidualFloor = 1e-9;

struct SolverConfig {
  SolverKind solver = SolverKind::DCS;
  int T = 50;
  StepKind sampler_step = StepKind::DDPM;
  double ddim_eta = 0.0;
  NamConfig nam;
  double dps_zeta = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (T < 1) throw ConfigError("solver.T: must be >= 1");
    if (!(ddim_eta >= 0.0 && ddim_eta <= 1.0)) throw ConfigError("solver.ddim_eta: must lie in [0,1]");
    if (solver == SolverKind::DCS) nam.validate();
    if (solver == SolverKind::DPS_JF && !(dps_zeta > 0.0)) throw ConfigError("solver.dps_zeta: must be > 0");
  }
};

struct StepRecord {
  int t = 0;
  int nam_iters = 0;
  double pvalue = 0.0;
  double mean_abs_res = 0.0;
};

struct RunRecord {
  Vector x0_hat;
  bool diverged = false;  // iterate became non-finite; x0_hat is all NaN
  std::vector<StepRecord> per_step;
  double mse = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();

  double mean_nam_iters() const {
    if (per_step.empty()) return 0.0;
    double total = 0.0;
    for (const auto& s : per_step) total += s.nam_iters;
    return total / static_cast<double>(per_step.size());
  }
};

// Ancestral DDPM step; no noise is injected at t = 1.
inline Vector ddpm_step(const Vector& x_t, const Vector& eps_hat, int t, const Schedule& s, RandomStream& rng) {
  s.check_reverse(t);
  detail::require_dim(eps_hat.size(), x_t.size(), "ddpm_step");
  const double beta = s.beta(t);
  Vector mean = (x_t - (beta / s.sigma(t)) * eps_hat) / std::sqrt(1.0 - beta);
  if (t > 1) mean += std::sqrt(s.posterior_variance(t)) * rng.normal_vector(x_t.size());
  return mean;
}

// DDIM step; eta = 0 is deterministic and eta = 1 has the DDPM variance.
inline Vector ddim_step(const Vector& x_t, const Vector& eps_hat, int t, const Schedule& s, double eta,
                        RandomStream& rng) {
  s.check_reverse(t);
  detail::require_dim(eps_hat.size(), x_t.size(), "ddim_step");
  const double noise_std = eta * std::sqrt(s.posterior_variance(t));
  const double prev_sigma = s.sigma(t - 1);
  const double dir = std::sqrt(std::max(0.0, prev_sigma * prev_sigma - noise_std * noise_std));
  Vector next = std::sqrt(s.alpha_bar(t - 1)) * tweedie(x_t, eps_hat, t, s) + dir * eps_hat;
  if (noise_std > 0.0) next += noise_std * rng.normal_vector(x_t.size());
  return next;
}

namespace detail {

template <ScoreModel Score>
void check_solver_inputs(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                         SolverKind expected) {
  cfg.validate();
  if (cfg.solver != expected) {
    throw ConfigError("solver mismatch: config requests " + to_string(cfg.solver) + ", called " + to_string(expected));
  }
  if (cfg.T != s.T()) throw ConfigError("solver.T does not match the schedule");
  if (score.schedule().alpha_bars() != s.alpha_bars()) throw ConfigError("score model uses a different schedule");
  if (meas.A().in_dim() < 1) throw ArgumentError("operator has no input dimension");
}

inline Vector reverse_step(const Vector& x_t, const Vector& eps_hat, int t, const Schedule& s, const SolverConfig& cfg,
                           RandomStream& rng) {
  return cfg.sampler_step == StepKind::DDPM ? ddpm_step(x_t, eps_hat, t, s, rng)
                                            : ddim_step(x_t, eps_hat, t, s, cfg.ddim_eta, rng);
}

// Marks the record diverged and fills x0_hat with NaN; returns true if so.
inline bool check_divergence(RunRecord& rec, const Vector& x) {
  if (x.allFinite()) return false;
  rec.diverged = true;
  rec.x0_hat = Vector::Constant(x.size(), std::numeric_limits<double>::quiet_NaN());
  return true;
}

inline StepRecord residual_record(int t, const Vector& res, double sigma_y, double sigma_t) {
  StepRecord r{t, 0, 1.0, mean_abs(res)};
  if (sigma_y > 0.0) r.pvalue = stop_test(res, sigma_y, sigma_t).pvalue;
  return r;
}

// Shared body of DCS and the unconditional ablation.
template <ScoreModel Score>
RunRecord corrected_sample(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                           RandomStream& rng, bool conditioned) {
  const Eigen::Index d = meas.A().in_dim();
  RunRecord rec;
  rec.per_step.reserve(static_cast<std::size_t>(s.T()));
  Vector x = rng.normal_vector(d);
  for (int t = s.T(); t >= 1; --t) {
    Vector eps = score.eps(x, t);
    if (conditioned) {
      const NamResult nam = run_nam(x, eps, t, s, meas, cfg.nam);
      eps += nam.eps_y;
      rec.per_step.push_back({t, nam.iters_used, nam.final_pvalue, nam.final_mean_abs_res});
    } else {
      const Vector res = likelihood_residual(x, eps, Vector::Zero(d), t, s, meas);
      rec.per_step.push_back(residual_record(t, res, meas.sigma_y, s.sigma(t)));
    }
    x = reverse_step(x, eps, t, s, cfg, rng);
    if (check_divergence(rec, x)) return rec;
  }
  rec.x0_hat = std::move(x);
  return rec;
}

}  // namespace detail

// Diffusion conditional sampler: each reverse step corrects the model noise
// prediction with the eps_y returned by run_nam, then takes a standard step with
// eps_theta + eps_y.
template <ScoreModel Score>
RunRecord dcs_sample(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                     RandomStream& rng) {
  detail::check_solver_inputs(meas, score, s, cfg, SolverKind::DCS);
  return detail::corrected_sample(meas, score, s, cfg, rng, true);
}

// The DCS backbone with the correction disabled (eps_y = 0).
template <ScoreModel Score>
RunRecord unconditional_sample(const Measurement& meas, const Score& score, const Schedule& s,
                               const SolverConfig& cfg, RandomStream& rng) {
  detail::check_solver_inputs(meas, score, s, cfg, SolverKind::Unconditional);
  return detail::corrected_sample(meas, score, s, cfg, rng, false);
}

// Range-space projection of the Tweedie estimate, x0' = A+ y + (I - A+ A) x0,
// followed by a DDIM step toward x0'.
inline Vector ddnm_project(const LinearOperator& A, const Vector& y, const Vector& x0_hat) {
  return A.pinv_apply(y) + x0_hat - A.pinv_apply(A.apply(x0_hat));
}

template <ScoreModel Score>
RunRecord ddnm_sample(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                      RandomStream& rng) {
  detail::check_solver_inputs(meas, score, s, cfg, SolverKind::DDNM);
  const LinearOperator& A = meas.A();
  RunRecord rec;
  rec.per_step.reserve(static_cast<std::size_t>(s.T()));
  Vector x = rng.normal_vector(A.in_dim());
  for (int t = s.T(); t >= 1; --t) {
    const Vector eps = score.eps(x, t);
    const Vector x0 = tweedie(x, eps, t, s);
    const Vector projected = ddnm_project(A, meas.y, x0);
    rec.per_step.push_back(detail::residual_record(t, meas.y - A.apply(x0), meas.sigma_y, s.sigma(t)));
    // Noise direction consistent with the projected estimate.
    const Vector eps_proj = (x - std::sqrt(s.alpha_bar(t)) * projected) / s.sigma(t);
    x = ddim_step(x, eps_proj, t, s, cfg.ddim_eta, rng);
    if (detail::check_divergence(rec, x)) return rec;
  }
  rec.x0_hat = std::move(x);
  return rec;
}

// Guidance term of the Jacobian-free DPS step: zeta_t A^T (A x0 - y) with
// zeta_t = zeta / ||A x0 - y||.
inline Vector dps_guidance(const LinearOperator& A, const Vector& y, const Vector& x0_hat, double zeta) {
  const Vector r = A.apply(x0_hat) - y;
  const double norm = r.norm();
  if (norm == 0.0) return Vector::Zero(x0_hat.size());
  const double step = norm < kDpsResidualFloor ? std::min(zeta / norm, kDpsZetaCap) : zeta / norm;
  return step * A.adjoint(r);
}

template <ScoreModel Score>
RunRecord dps_jf_sample(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                        RandomStream& rng) {
  detail::check_solver_inputs(meas, score, s, cfg, SolverKind::DPS_JF);
  const LinearOperator& A = meas.A();
  RunRecord rec;
  rec.per_step.reserve(static_cast<std::size_t>(s.T()));
  Vector x = rng.normal_vector(A.in_dim());
  for (int t = s.T(); t >= 1; --t) {
    const Vector eps = score.eps(x, t);
    const Vector x0 = tweedie(x, eps, t, s);
    rec.per_step.push_back(detail::residual_record(t, meas.y - A.apply(x0), meas.sigma_y, s.sigma(t)));
    const Vector guidance = dps_guidance(A, meas.y, x0, cfg.dps_zeta);
    x = ddpm_step(x, eps, t, s, rng) - guidance;
    if (detail::check_divergence(rec, x)) return rec;
  }
  rec.x0_hat = std::move(x);
  return rec;
}

// Dispatches on cfg.solver.
template <ScoreModel Score>
RunRecord solve(const Measurement& meas, const Score& score, const Schedule& s, const SolverConfig& cfg,
                RandomStream& rng) {
  switch (cfg.solver) {
    case SolverKind::DCS: return dcs_sample(meas, score, s, cfg, rng);
    case SolverKind::DPS_JF: return dps_jf_sample(meas, score, s, cfg, rng);
    case SolverKind::DDNM: return ddnm_sample(meas, score, s, cfg, rng);
    case SolverKind::Unconditional: return unconditional_sample(meas, score, s, cfg, rng);
  }
  throw ConfigError("unknown solver");
}

}  // namespace dcs
