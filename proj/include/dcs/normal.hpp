#pragma once

#include <cmath>
#include <numbers>

namespace dcs {

// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Two-sided tail 2 Phi(-|z|), evaluated through erfc so that deep tails do not
// cancel.
inline double two_sided_tail(double z) { return std::erfc(std::abs(z) / std::numbers::sqrt2); }

// Inverse CDF by bisection; accurate to ~1e-14 in z for p in (1e-300, 1).
inline double normal_quantile(double p) {
  if (p <= 0.0) return -INFINITY;
  if (p >= 1.0) return INFINITY;
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace dcs
