#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dcs/error.hpp"
#include "dcs/rng.hpp"

namespace dcs {

// Discretized variance-preserving noise schedule.
//
// Index t runs over 0..T. beta(t) is defined for t >= 1; alpha_bar(0) = 1 and
// alpha_bar(t) = prod_{s<=t} (1 - beta(s)); sigma(t) = sqrt(1 - alpha_bar(t)).
class Schedule {
 public:
  // Builds from per-step rates beta[0..T-1] (beta[i] is the rate of step i+1).
  static Schedule from_betas(std::vector<double> betas) {
    if (betas.empty()) throw ConfigError("schedule: T must be >= 1");
    for (double b : betas) {
      if (!(b > 0.0 && b < 1.0)) throw ConfigError("schedule: every beta must lie in (0,1)");
    }
    Schedule s;
    const std::size_t T = betas.size();
    s.beta_.assign(T + 1, 0.0);
    s.alpha_bar_.assign(T + 1, 1.0);
    s.sigma_.assign(T + 1, 0.0);
    long double prod = 1.0L;
    for (std::size_t t = 1; t <= T; ++t) {
      s.beta_[t] = betas[t - 1];
      prod *= 1.0L - static_cast<long double>(betas[t - 1]);
      s.alpha_bar_[t] = static_cast<double>(prod);
      // 1 - prod in long double keeps the VP identity at full double precision.
      s.sigma_[t] = static_cast<double>(std::sqrt(1.0L - prod));
    }
    return s;
  }

  int T() const { return static_cast<int>(beta_.size()) - 1; }

  double beta(int t) const {
    check_reverse(t);
    return beta_[t];
  }
  double alpha_bar(int t) const {
    check(t);
    return alpha_bar_[t];
  }
  double sigma(int t) const {
    check(t);
    return sigma_[t];
  }

  // Variance of the ancestral DDPM step: beta_t (1 - abar_{t-1}) / (1 - abar_t).
  double posterior_variance(int t) const {
    check_reverse(t);
    return beta_[t] * (1.0 - alpha_bar_[t - 1]) / (1.0 - alpha_bar_[t]);
  }

  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  void check(int t) const {
    if (t < 0 || t > T()) {
      throw IndexError("step index " + std::to_string(t) + " outside [0, " + std::to_string(T()) + "]");
    }
  }
  void check_reverse(int t) const {
    if (t < 1 || t > T()) {
      throw IndexError("reverse step index " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
    }
  }

 private:
  Schedule() = default;

  std::vector<double> beta_;
  std::vector<double> alpha_bar_;
  std::vector<double> sigma_;
};

inline constexpr double kBetaMin = 1e-4;
inline constexpr double kBetaMax = 0.02;
inline constexpr int kReferenceSteps = 1000;

// Linear-beta schedule with DDPM endpoints (1e-4 .. 0.02 per 1000 steps).
//
// The reference chain has N = max(T, 1000) steps with beta scaled by 1000/N, so
// the total injected noise does not depend on N. For T < N the chain is
// respaced: step t of the result lands on reference index round(t N / T), which
// keeps alpha_bar(T) identical for every T <= 1000.
inline Schedule make_linear_schedule(int T, double beta_min = kBetaMin, double beta_max = kBetaMax) {
  if (T < 1) throw ConfigError("schedule: T must be >= 1");
  const int N = std::max(T, kReferenceSteps);
  const double scale = static_cast<double>(kReferenceSteps) / N;
  std::vector<long double> ref(N + 1, 1.0L);
  for (int i = 1; i <= N; ++i) {
    const double frac = N == 1 ? 0.0 : static_cast<double>(i - 1) / (N - 1);
    const long double b = scale * (beta_min + frac * (beta_max - beta_min));
    ref[i] = ref[i - 1] * (1.0L - b);
  }
  std::vector<double> betas(T);
  long double prev = 1.0L;
  for (int t = 1; t <= T; ++t) {
    const auto idx = static_cast<int>(std::llround(static_cast<double>(t) * N / T));
    betas[t - 1] = static_cast<double>(1.0L - ref[idx] / prev);
    prev = ref[idx];
  }
  return Schedule::from_betas(std::move(betas));
}

// x_t = sqrt(abar_t) x0 + sigma_t z with the given z.
inline Vector forward_with_noise(const Schedule& s, const Vector& x0, int t, const Vector& z) {
  s.check(t);
  detail::require_dim(z.size(), x0.size(), "forward_sample");
  return std::sqrt(s.alpha_bar(t)) * x0 + s.sigma(t) * z;
}

struct ForwardDraw {
  Vector x_t;
  Vector z;
};

inline ForwardDraw forward_sample(const Schedule& s, const Vector& x0, int t, RandomStream& rng) {
  s.check(t);
  if (!x0.allFinite()) throw ArgumentError("forward_sample: x0 is not finite");
  Vector z = rng.normal_vector(x0.size());
  Vector x_t = forward_with_noise(s, x0, t, z);
  return {std::move(x_t), std::move(z)};
}

}  // namespace dcs
