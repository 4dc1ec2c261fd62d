#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dcs/nam.hpp"
#include "dcs/normal.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/samplers.hpp"
#include "dcs/schedule.hpp"

namespace dcs {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::vector<LinearOperator> sample_operators(RandomStream& rng) {
  Matrix dense(5, 12);
  for (Eigen::Index i = 0; i < dense.size(); ++i) dense.data()[i] = rng.normal();
  return {LinearOperator::identity(12), LinearOperator::mask(12, {0, 3, 4, 9, 11}),
          LinearOperator::downsample(12, 4), LinearOperator::circular_conv(12, gaussian_kernel(1.0, 2)),
          LinearOperator::dense(dense)};
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace detail

// Quick invariant checks, each on a handful of random inputs.
inline std::vector<PropertyResult> run_selftest(std::uint64_t seed = 2024) {
  std::vector<PropertyResult> out;
  auto check = [&](std::string name, const std::function<std::pair<bool, std::string>()>& body) {
    try {
      auto [ok, info] = body();
      out.push_back({std::move(name), ok, std::move(info)});
    } catch (const std::exception& e) {
      out.push_back({std::move(name), false, std::string("exception: ") + e.what()});
    }
  };
  RandomStream rng(seed, 0);
  const Schedule sched = make_linear_schedule(50);

  check("schedule: alpha_bar + sigma^2 = 1", [&] {
    double worst = 0.0;
    for (int T : {1, 10, 50, 1000}) {
      const Schedule s = make_linear_schedule(T);
      for (int t = 0; t <= T; ++t) worst = std::max(worst, std::abs(s.alpha_bar(t) + s.sigma(t) * s.sigma(t) - 1.0));
    }
    return std::pair{worst < 1e-12, "max deviation " + detail::fmt(worst)};
  });

  check("operators: linearity, adjoint identity, Penrose identity", [&] {
    double worst = 0.0;
    for (const auto& A : detail::sample_operators(rng)) {
      const Vector x = rng.normal_vector(A.in_dim()), z = rng.normal_vector(A.in_dim());
      const Vector u = rng.normal_vector(A.out_dim());
      worst = std::max(worst, (A.apply(2.0 * x - 3.0 * z) - (2.0 * A.apply(x) - 3.0 * A.apply(z))).norm());
      worst = std::max(worst, std::abs(A.apply(x).dot(u) - x.dot(A.adjoint(u))));
      const Vector Ax = A.apply(x);
      worst = std::max(worst, (A.apply(A.pinv_apply(Ax)) - Ax).norm() / std::max(1.0, Ax.norm()));
    }
    return std::pair{worst < 1e-8, "max violation " + detail::fmt(worst)};
  });

  const GmmPrior mix({0.3, 0.7}, {Vector::Constant(3, -0.5), Vector::Constant(3, 0.4)},
                     {Vector::Constant(3, 0.05), Vector::Constant(3, 0.1)});

  check("prior: score matches finite differences", [&] {
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
      const int t = 1 + static_cast<int>(rng.uniform() * 49);
      const Vector x = rng.normal_vector(3);
      const Vector g = gmm_score(mix, x, t, sched);
      const GmmPrior marg = gmm_marginal_params(mix, t, sched);
      for (Eigen::Index i = 0; i < 3; ++i) {
        Vector xp = x, xm = x;
        xp[i] += 1e-5;
        xm[i] -= 1e-5;
        const double fd = (marg.log_density(xp) - marg.log_density(xm)) / 2e-5;
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
      }
    }
    return std::pair{worst < 1e-5, "max rel. error " + detail::fmt(worst)};
  });

  check("prior: Tweedie of exact score equals posterior mean", [&] {
    const GmmScoreModel model(mix, sched);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int t = 1 + static_cast<int>(rng.uniform() * 50);
      const Vector x = rng.normal_vector(3);
      worst = std::max(worst, (tweedie(x, model.eps(x, t), t, sched) - posterior_mean_oracle(mix, x, t, sched)).cwiseAbs().maxCoeff());
    }
    return std::pair{worst < 1e-8, "max error " + detail::fmt(worst)};
  });

  check("prior: point mass recovered exactly by Tweedie", [&] {
    const Vector mu = rng.normal_vector(4);
    const GmmPrior pm = GmmPrior::point_mass(mu);
    const GmmScoreModel model(pm, sched);
    double worst = 0.0;
    for (int t = 1; t <= 50; ++t) {
      const Vector x = forward_sample(sched, mu, t, rng).x_t;
      worst = std::max(worst, (tweedie(x, model.eps(x, t), t, sched) - mu).cwiseAbs().maxCoeff());
    }
    return std::pair{worst < 1e-6, "max error " + detail::fmt(worst)};
  });

  check("nam: stop test calibrated and monotone", [&] {
    const double p = stop_test(Vector::Constant(1, 1.959964), 1.0, 0.5).pvalue;
    bool monotone = true;
    double prev = 2.0;
    for (int i = 0; i < 100; ++i) {
      const double cur = stop_test(Vector::Constant(4, 0.05 * i), 1.0, 0.5).pvalue;
      monotone = monotone && cur < prev;
      prev = cur;
    }
    return std::pair{std::abs(p - 0.05) < 1e-3 && monotone, "2Phi(-1.959964) = " + detail::fmt(p)};
  });

  check("nam: loss gradient matches finite differences", [&] {
    double worst = 0.0;
    for (const auto& A0 : detail::sample_operators(rng)) {
      auto A = std::make_shared<const LinearOperator>(A0);
      const int t = 1 + static_cast<int>(rng.uniform() * 50);
      const Vector x = rng.normal_vector(A->in_dim()), eps = rng.normal_vector(A->in_dim());
      const Vector ey = 0.1 * rng.normal_vector(A->in_dim());
      const Measurement meas(rng.normal_vector(A->out_dim()), 0.3, A);
      const Vector g = loss_gradient(x, eps, ey, t, sched, meas);
      auto loss = [&](const Vector& e) {
        return likelihood_residual(x, eps, e, t, sched, meas).squaredNorm() / (2.0 * 0.09);
      };
      for (Eigen::Index i = 0; i < ey.size(); ++i) {
        Vector p = ey, m = ey;
        p[i] += 1e-6;
        m[i] -= 1e-6;
        const double fd = (loss(p) - loss(m)) / 2e-6;
        worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, g.cwiseAbs().maxCoeff()));
      }
    }
    return std::pair{worst < 1e-5, "max rel. error " + detail::fmt(worst)};
  });

  check("nam: analytic solve reproduces noiseless measurements", [&] {
    double worst = 0.0;
    NamConfig cfg;
    cfg.optimizer = Optimizer::Analytic;
    for (const auto& A0 : detail::sample_operators(rng)) {
      if (A0.kind() == OperatorKind::CircularConv) continue;
      auto A = std::make_shared<const LinearOperator>(A0);
      const Vector x0 = rng.normal_vector(A->in_dim());
      const Measurement meas(A->apply(x0), 0.0, A);
      const int t = 25;
      const Vector x = forward_sample(sched, x0, t, rng).x_t;
      const Vector eps = rng.normal_vector(A->in_dim());
      const NamResult r = run_nam(x, eps, t, sched, meas, cfg);
      worst = std::max(worst, likelihood_residual(x, eps, r.eps_y, t, sched, meas).cwiseAbs().maxCoeff());
    }
    return std::pair{worst < 1e-8, "max residual " + detail::fmt(worst)};
  });

  check("samplers: identical seeds give identical samples", [&] {
    auto A = std::make_shared<const LinearOperator>(LinearOperator::downsample(12, 4));
    const GmmPrior p = GmmPrior({0.5, 0.5}, {Vector::Constant(12, -0.3), Vector::Constant(12, 0.3)},
                                {Vector::Constant(12, 0.02), Vector::Constant(12, 0.02)});
    const Schedule s = make_linear_schedule(20);
    const GmmScoreModel model(p, s);
    SolverConfig cfg;
    cfg.T = 20;
    RandomStream noise(5, 1);
    const Measurement meas = measure(A, Vector::Constant(12, 0.3), 0.05, noise);
    RandomStream a(11, 2), b(11, 2);
    const RunRecord ra = dcs_sample(meas, model, s, cfg, a);
    const RunRecord rb = dcs_sample(meas, model, s, cfg, b);
    const bool same = ra.x0_hat == rb.x0_hat;
    return std::pair{same, same ? "bit-identical" : "outputs differ"};
  });

  return out;
}

}  // namespace dcs
