#include <gtest/gtest.h>

#include <cmath>

#include "dcs/config.hpp"
#include "dcs/prior.hpp"
#include "oracles.hpp"

namespace {

using dcs::GmmPrior;
using dcs::Matrix;
using dcs::Vector;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

GmmPrior two_component_1d() { return GmmPrior({0.3, 0.7}, {vec({-1.0}), vec({0.8})}, {vec({0.1}), vec({0.3})}); }

GmmPrior random_prior(dcs::RandomStream& rng, int K, int d) {
  std::vector<double> w;
  std::vector<Vector> means, vars;
  double total = 0.0;
  for (int k = 0; k < K; ++k) {
    w.push_back(0.2 + rng.uniform());
    total += w.back();
    means.push_back(rng.normal_vector(d));
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = 0.05 + rng.uniform();
    vars.push_back(v);
  }
  for (double& x : w) x /= total;
  return GmmPrior(w, means, vars);
}

TEST(GmmPrior, Validation) {
  EXPECT_THROW(GmmPrior({0.5, 0.4}, {vec({0}), vec({1})}, {vec({1}), vec({1})}), dcs::ConfigError);
  EXPECT_THROW(GmmPrior({1.0}, {vec({0})}, {vec({0.0})}), dcs::ConfigError);
  EXPECT_THROW(GmmPrior({1.5, -0.5}, {vec({0}), vec({1})}, {vec({1}), vec({1})}), dcs::ConfigError);
  EXPECT_THROW(GmmPrior({1.0}, {vec({0, 1})}, {vec({1})}), dcs::ConfigError);
  EXPECT_NO_THROW(GmmPrior({0.25, 0.75}, {vec({0}), vec({1})}, {vec({1}), vec({2})}));
}

TEST(MarginalParams, ZeroStepIsIdentity) {
  const auto s = dcs::make_linear_schedule(50);
  const auto p = two_component_1d();
  const auto m = dcs::gmm_marginal_params(p, 0, s);
  for (std::size_t k = 0; k < p.K(); ++k) {
    EXPECT_EQ(m.weight(k), p.weight(k));
    EXPECT_EQ(m.mean(k), p.mean(k));
    EXPECT_EQ(m.variance(k), p.variance(k));
  }
}

TEST(MarginalParams, UnitGaussianStaysUnit) {
  const auto s = dcs::make_linear_schedule(50);
  const GmmPrior p({1.0}, {vec({0.0, 0.0})}, {vec({1.0, 1.0})});
  for (int t = 0; t <= 50; ++t) {
    const auto m = dcs::gmm_marginal_params(p, t, s);
    EXPECT_NEAR(m.variance(0)[0], 1.0, 1e-12);
    EXPECT_NEAR(m.variance(0)[1], 1.0, 1e-12);
  }
}

TEST(MarginalParams, MatchesGridConvolution) {
  const auto s = dcs::make_linear_schedule(50);
  const auto p = two_component_1d();
  for (int t : {3, 15, 30, 50}) {
    const double ab = s.alpha_bar(t), sg = s.sigma(t);
    const auto m = dcs::gmm_marginal_params(p, t, s);
    double worst = 0.0;
    for (double x = -4.0; x <= 4.0; x += 0.25) {
      auto integrand = [&](double x0) {
        const double prior = 0.3 * oracle::normal_pdf(x0, -1.0, 0.1) + 0.7 * oracle::normal_pdf(x0, 0.8, 0.3);
        return prior * oracle::normal_pdf(x, std::sqrt(ab) * x0, sg * sg);
      };
      const double grid = oracle::simpson(integrand, -8.0, 8.0, 8000);
      worst = std::max(worst, std::abs(grid - std::exp(m.log_density(vec({x})))));
    }
    EXPECT_LT(worst, 1e-6) << "t=" << t;
  }
}

TEST(GmmScore, SingleComponentClosedForm) {
  const auto s = dcs::make_linear_schedule(50);
  const GmmPrior p({1.0}, {vec({0.3, -0.2})}, {vec({0.5, 2.0})});
  const Vector x = vec({0.7, 1.1});
  const int t = 20;
  const double ab = s.alpha_bar(t), var_n = s.sigma(t) * s.sigma(t);
  const Vector score = dcs::gmm_score(p, x, t, s);
  for (int i = 0; i < 2; ++i) {
    const double expected = -(x[i] - std::sqrt(ab) * p.mean(0)[i]) / (ab * p.variance(0)[i] + var_n);
    EXPECT_NEAR(score[i], expected, 1e-14);
  }
}

TEST(GmmScore, SymmetricMixtureVanishesAtCenter) {
  const auto s = dcs::make_linear_schedule(50);
  const GmmPrior p({0.5, 0.5}, {vec({-1.0}), vec({1.0})}, {vec({0.2}), vec({0.2})});
  for (int t = 1; t <= 50; ++t) EXPECT_NEAR(dcs::gmm_score(p, vec({0.0}), t, s)[0], 0.0, 1e-15);
}

TEST(GmmScore, MatchesFiniteDifferences) {
  const auto s = dcs::make_linear_schedule(50);
  dcs::RandomStream rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = random_prior(rng, 3, 2);
    const int t = 1 + static_cast<int>(rng.uniform() * 50);
    const Vector x = rng.normal_vector(2);
    const auto m = dcs::gmm_marginal_params(p, t, s);
    const Vector fd = oracle::fd_gradient([&](const Vector& z) { return m.log_density(z); }, x, 1e-5);
    const Vector g = dcs::gmm_score(p, x, t, s);
    EXPECT_LT((fd - g).norm() / std::max(g.norm(), 1e-3), 1e-5) << "trial " << trial;
  }
}

TEST(GmmScore, StableFarFromModes) {
  const auto s = dcs::make_linear_schedule(50);
  const auto p = two_component_1d();
  const Vector g = dcs::gmm_score(p, vec({1e3}), 1, s);
  EXPECT_TRUE(g.allFinite());
}

TEST(GmmScore, RejectsNaN) {
  const auto s = dcs::make_linear_schedule(10);
  EXPECT_THROW(dcs::gmm_score(two_component_1d(), vec({NAN}), 3, s), dcs::ArgumentError);
  EXPECT_THROW(dcs::gmm_score(two_component_1d(), vec({0, 0}), 3, s), dcs::ArgumentError);
}

TEST(ScoreModel, EpsIsScaledScore) {
  const auto s = dcs::make_linear_schedule(50);
  const auto p = two_component_1d();
  const dcs::GmmScoreModel model(p, s);
  for (int t = 1; t <= 50; t += 7) {
    const Vector x = vec({0.1 * t - 2.0});
    EXPECT_EQ(model.eps(x, t), (-s.sigma(t) * model.score(x, t)).eval());
  }
}

TEST(PosteriorMean, PointMassReturnsMean) {
  const auto s = dcs::make_linear_schedule(50);
  const Vector mu = vec({0.4, -0.9, 0.1});
  const auto p = GmmPrior::point_mass(mu);
  dcs::RandomStream rng(2);
  for (int t = 1; t <= 50; t += 5) {
    const Vector x = rng.normal_vector(3);
    EXPECT_LT((dcs::posterior_mean_oracle(p, x, t, s) - mu).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(PosteriorMean, ZeroStepReturnsInput) {
  const auto s = dcs::make_linear_schedule(50);
  const Vector x = vec({0.37});
  EXPECT_EQ(dcs::posterior_mean_oracle(two_component_1d(), x, 0, s), x);
}

TEST(PosteriorMean, MatchesQuadrature) {
  const auto s = dcs::make_linear_schedule(50);
  const auto p = two_component_1d();
  for (int t : {2, 10, 25, 40, 50}) {
    const double ab = s.alpha_bar(t), sg = s.sigma(t);
    for (double x : {-1.5, -0.2, 0.0, 0.6, 2.0}) {
      auto joint = [&](double x0) {
        const double prior = 0.3 * oracle::normal_pdf(x0, -1.0, 0.1) + 0.7 * oracle::normal_pdf(x0, 0.8, 0.3);
        return prior * oracle::normal_pdf(x, std::sqrt(ab) * x0, sg * sg);
      };
      const double num = oracle::simpson([&](double x0) { return x0 * joint(x0); }, -8.0, 8.0, 20000);
      const double den = oracle::simpson(joint, -8.0, 8.0, 20000);
      EXPECT_NEAR(dcs::posterior_mean_oracle(p, vec({x}), t, s)[0], num / den, 1e-6) << "t=" << t << " x=" << x;
    }
  }
}

TEST(Tweedie, ZeroNoiseScalesInput) {
  const auto s = dcs::make_linear_schedule(50);
  const Vector x = vec({1.0, -2.0});
  EXPECT_TRUE(dcs::tweedie(x, Vector::Zero(2), 13, s).isApprox(x / std::sqrt(s.alpha_bar(13)), 1e-15));
  EXPECT_EQ(dcs::tweedie(x, vec({5.0, 5.0}), 0, s), x);
}

TEST(Tweedie, PointMassRecoveryIsExact) {
  const auto s = dcs::make_linear_schedule(50);
  const Vector mu = vec({0.25, -0.5, 0.75, 0.0});
  const auto p = GmmPrior::point_mass(mu);
  const dcs::GmmScoreModel model(p, s);
  dcs::RandomStream rng(9);
  for (int i = 0; i < 200; ++i) {
    const int t = 1 + static_cast<int>(rng.uniform() * 50);
    const Vector x_t = dcs::forward_sample(s, mu, t, rng).x_t;
    EXPECT_LT((dcs::tweedie(x_t, model.eps(x_t, t), t, s) - mu).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(Tweedie, EqualsPosteriorMeanOracle) {
  const auto s = dcs::make_linear_schedule(50);
  dcs::RandomStream rng(21);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_prior(rng, 3, 3);
    const dcs::GmmScoreModel model(p, s);
    const int t = 1 + static_cast<int>(rng.uniform() * 50);
    const Vector x = 1.5 * rng.normal_vector(3);
    const Vector a = dcs::tweedie(x, model.eps(x, t), t, s);
    const Vector b = dcs::posterior_mean_oracle(p, x, t, s);
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(ConditionalPosterior, UninformativeMeasurementKeepsPrior) {
  const GmmPrior p({0.3, 0.7}, {vec({-1.0, 0.5}), vec({1.0, -0.5})}, {vec({1.0, 1.0}), vec({1.0, 1.0})});
  const auto A = dcs::LinearOperator::identity(2);
  const auto post = dcs::gmm_conditional_posterior(p, A, vec({0.4, 0.2}), 1e3);
  for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(post.weights()[k], p.weight(k), 1e-3);
}

TEST(ConditionalPosterior, SingleGaussianConjugacy) {
  const GmmPrior p({1.0}, {vec({0.5, -1.0})}, {vec({2.0, 0.5})});
  const auto A = dcs::LinearOperator::identity(2);
  const Vector y = vec({1.5, 0.3});
  const double sy = 0.7;
  const auto post = dcs::gmm_conditional_posterior(p, A, y, sy);
  for (int i = 0; i < 2; ++i) {
    const double v = p.variance(0)[i], m = p.mean(0)[i];
    const double pv = 1.0 / (1.0 / v + 1.0 / (sy * sy));
    const double pm = pv * (m / v + y[i] / (sy * sy));
    EXPECT_NEAR(post.means()[0][i], pm, 1e-12);
    EXPECT_NEAR(post.covariances()[0](i, i), pv, 1e-12);
  }
  EXPECT_NEAR(post.covariances()[0](0, 1), 0.0, 1e-14);
}

TEST(ConditionalPosterior, MatchesTwoDimensionalQuadrature) {
  const GmmPrior p({0.4, 0.6}, {vec({-0.8, 0.3}), vec({0.9, -0.4})}, {vec({0.3, 0.5}), vec({0.4, 0.2})});
  Matrix row(1, 2);
  row << 1.0, -0.6;
  const auto A = dcs::LinearOperator::dense(row);
  const double sy = 0.5;
  for (double yv : {-1.0, 0.2, 1.3}) {
    const Vector y = vec({yv});
    const auto post = dcs::gmm_conditional_posterior(p, A, y, sy);
    auto density = [&](double a, double b) {
      double prior = 0.0;
      for (std::size_t k = 0; k < 2; ++k) {
        prior += p.weight(k) * oracle::normal_pdf(a, p.mean(k)[0], p.variance(k)[0]) *
                 oracle::normal_pdf(b, p.mean(k)[1], p.variance(k)[1]);
      }
      return prior * oracle::normal_pdf(yv, a - 0.6 * b, sy * sy);
    };
    const int n = 600;
    const double lo = -6.0, hi = 6.0, h = (hi - lo) / n;
    double z = 0.0, ma = 0.0, mb = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double wa = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double a = lo + i * h;
      for (int j = 0; j <= n; ++j) {
        const double wb = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
        const double b = lo + j * h;
        const double f = wa * wb * density(a, b);
        z += f;
        ma += a * f;
        mb += b * f;
      }
    }
    const Vector mean = post.mean();
    EXPECT_NEAR(mean[0], ma / z, 1e-5) << "y=" << yv;
    EXPECT_NEAR(mean[1], mb / z, 1e-5) << "y=" << yv;
  }
}

TEST(ConditionalPosterior, NoiselessIsDegenerate) {
  const auto p = two_component_1d();
  const auto A = dcs::LinearOperator::identity(1);
  EXPECT_THROW(dcs::gmm_conditional_posterior(p, A, vec({0.0}), 0.0), dcs::DegeneratePosteriorError);
}

TEST(ConditionalTweedie, DiffusedPosteriorScoreGivesConditionalMean) {
  const auto s = dcs::make_linear_schedule(50);
  dcs::RandomStream rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_prior(rng, 2, 3);
    Matrix M(2, 3);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = rng.normal();
    const auto A = dcs::LinearOperator::dense(M);
    const double sy = 0.2 + rng.uniform();
    const Vector y = M * p.sample(rng) + sy * rng.normal_vector(2);
    const auto post = dcs::gmm_conditional_posterior(p, A, y, sy);
    const int t = 1 + static_cast<int>(rng.uniform() * 50);
    const Vector x_t = dcs::forward_sample(s, post.mean(), t, rng).x_t;
    const Vector eps = -s.sigma(t) * dcs::dense_gmm_score(post, x_t, t, s);
    const Vector est = dcs::tweedie(x_t, eps, t, s);
    const Vector ref = oracle::joint_conditional_mean(p.weights(), p.means(), p.variances(), M, y, sy, x_t,
                                                      s.alpha_bar(t), s.sigma(t));
    EXPECT_LT((est - ref).cwiseAbs().maxCoeff(), 1e-8) << "trial " << trial;
  }
}

TEST(DenseGmm, ScoreMatchesFiniteDifferences) {
  const auto s = dcs::make_linear_schedule(50);
  dcs::RandomStream rng(4);
  const auto p = random_prior(rng, 3, 2);
  Matrix M(1, 2);
  M << 0.7, 0.4;
  const auto post = dcs::gmm_conditional_posterior(p, dcs::LinearOperator::dense(M), vec({0.3}), 0.4);
  for (int t : {1, 10, 30}) {
    const Vector x = rng.normal_vector(2);
    const Vector fd = oracle::fd_gradient([&](const Vector& z) { return dcs::dense_gmm_log_density(post, z, t, s); }, x, 1e-5);
    const Vector g = dcs::dense_gmm_score(post, x, t, s);
    EXPECT_LT((fd - g).norm() / g.norm(), 1e-5);
  }
}

TEST(GmmPrior, SamplingMatchesWeights) {
  const auto p = two_component_1d();
  dcs::RandomStream rng(8);
  const int n = 20000;
  int right = 0;
  for (int i = 0; i < n; ++i) right += p.sample(rng)[0] > 0.0 ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(right) / n, 0.7 * 0.9283 + 0.3 * 0.0008, 0.015);
}

TEST(GmmPrior, JsonRoundTrip) {
  dcs::RandomStream rng(12);
  const auto p = random_prior(rng, 3, 4);
  const auto q = dcs::prior_from_json(dcs::json::parse(dcs::prior_to_json(p).dump()));
  ASSERT_EQ(q.K(), p.K());
  for (std::size_t k = 0; k < p.K(); ++k) {
    EXPECT_EQ(q.weight(k), p.weight(k));
    EXPECT_EQ(q.mean(k), p.mean(k));
    EXPECT_EQ(q.variance(k), p.variance(k));
  }
  EXPECT_THROW(dcs::prior_from_json(dcs::json{{"weights", {1.0}}, {"means", {{0.0}}}}), dcs::ConfigError);
}

}  // namespace
