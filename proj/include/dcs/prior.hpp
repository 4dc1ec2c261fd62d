#pragma once

#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "dcs/error.hpp"
#include "dcs/operators.hpp"
#include "dcs/rng.hpp"
#include "dcs/schedule.hpp"

namespace dcs {

inline constexpr double kPointMassVariance = 1e-12;

namespace detail {

inline double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

inline Vector softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  Vector r = (logits.array() - m).exp();
  return r / r.sum();
}

inline void require_finite(const Vector& x, const char* what) {
  if (x.hasNaN()) throw ArgumentError(std::string(what) + ": input contains NaN");
}

}  // namespace detail

// Gaussian mixture with diagonal covariances.
class GmmPrior {
 public:
  GmmPrior(std::vector<double> weights, std::vector<Vector> means, std::vector<Vector> variances)
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    validate();
  }

  static GmmPrior point_mass(const Vector& mean) {
    return GmmPrior({1.0}, {mean}, {Vector::Constant(mean.size(), kPointMassVariance)});
  }

  std::size_t K() const { return weights_.size(); }
  Eigen::Index dim() const { return means_.front().size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Vector>& variances() const { return variances_; }
  double weight(std::size_t k) const { return weights_[k]; }
  const Vector& mean(std::size_t k) const { return means_[k]; }
  const Vector& variance(std::size_t k) const { return variances_[k]; }

  double log_density(const Vector& x) const {
    detail::require_dim(x.size(), dim(), "gmm log_density");
    return detail::log_sum_exp(component_log_terms(x));
  }

  // log w_k + log N(x; mu_k, diag v_k) for each component.
  Vector component_log_terms(const Vector& x) const {
    Vector logs(static_cast<Eigen::Index>(K()));
    const double log2pi = std::log(2.0 * std::numbers::pi);
    for (std::size_t k = 0; k < K(); ++k) {
      const auto& v = variances_[k].array();
      const double quad = ((x - means_[k]).array().square() / v).sum();
      logs[static_cast<Eigen::Index>(k)] =
          std::log(weights_[k]) - 0.5 * (quad + v.log().sum() + static_cast<double>(dim()) * log2pi);
    }
    return logs;
  }

  Vector sample(RandomStream& rng) const {
    const std::size_t k = rng.categorical(weights_);
    Vector z = rng.normal_vector(dim());
    return means_[k] + (variances_[k].array().sqrt() * z.array()).matrix();
  }

 private:
  void validate() const {
    if (weights_.empty()) throw ConfigError("gmm: at least one component required");
    if (means_.size() != weights_.size() || variances_.size() != weights_.size()) {
      throw ConfigError("gmm: weights, means and variances must have the same length");
    }
    const Eigen::Index d = means_.front().size();
    if (d < 1) throw ConfigError("gmm: dimension must be >= 1");
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
      if (!(weights_[k] >= 0.0)) throw ConfigError("gmm: weights must be nonnegative");
      total += weights_[k];
      if (means_[k].size() != d || variances_[k].size() != d) throw ConfigError("gmm: inconsistent component dimension");
      if (!means_[k].allFinite()) throw ConfigError("gmm: means must be finite");
      if (!(variances_[k].array() > 0.0).all() || !variances_[k].allFinite()) {
        throw ConfigError("gmm: variances must be finite and > 0");
      }
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("gmm: weights must sum to 1");
  }

  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Vector> variances_;
};

// Gaussian mixture with dense covariances; the form taken by the posterior of a
// GmmPrior under a linear-Gaussian measurement.
class DenseGmm {
 public:
  DenseGmm(std::vector<double> weights, std::vector<Vector> means, std::vector<Matrix> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    if (weights_.empty() || means_.size() != weights_.size() || covs_.size() != weights_.size()) {
      throw ConfigError("dense gmm: inconsistent component lists");
    }
  }

  std::size_t K() const { return weights_.size(); }
  Eigen::Index dim() const { return means_.front().size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<Vector>& means() const { return means_; }
  const std::vector<Matrix>& covariances() const { return covs_; }

  Vector mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t k = 0; k < K(); ++k) m += weights_[k] * means_[k];
    return m;
  }

 private:
  std::vector<double> weights_;
  std::vector<Vector> means_;
  std::vector<Matrix> covs_;
};

// Diffused marginal p_t: means scaled by sqrt(abar_t), variances abar_t v + sigma_t^2.
inline GmmPrior gmm_marginal_params(const GmmPrior& prior, int t, const Schedule& s) {
  s.check(t);
  const double ab = s.alpha_bar(t);
  const double var_noise = s.sigma(t) * s.sigma(t);
  std::vector<Vector> means, vars;
  means.reserve(prior.K());
  vars.reserve(prior.K());
  for (std::size_t k = 0; k < prior.K(); ++k) {
    means.push_back(std::sqrt(ab) * prior.mean(k));
    vars.push_back((ab * prior.variance(k).array() + var_noise).matrix());
  }
  return GmmPrior(prior.weights(), std::move(means), std::move(vars));
}

// Marginal score grad log p_t(x_t), responsibilities in the log domain.
inline Vector gmm_score(const GmmPrior& prior, const Vector& x_t, int t, const Schedule& s) {
  detail::require_dim(x_t.size(), prior.dim(), "gmm_score");
  detail::require_finite(x_t, "gmm_score");
  const GmmPrior marginal = gmm_marginal_params(prior, t, s);
  const Vector r = detail::softmax(marginal.component_log_terms(x_t));
  Vector score = Vector::Zero(x_t.size());
  for (std::size_t k = 0; k < marginal.K(); ++k) {
    score -= r[static_cast<Eigen::Index>(k)] *
             ((x_t - marginal.mean(k)).array() / marginal.variance(k).array()).matrix();
  }
  return score;
}

// E[x0 | x_t] in closed form: responsibilities times per-component Gaussian
// conditional means.
inline Vector posterior_mean_oracle(const GmmPrior& prior, const Vector& x_t, int t, const Schedule& s) {
  detail::require_dim(x_t.size(), prior.dim(), "posterior_mean_oracle");
  detail::require_finite(x_t, "posterior_mean_oracle");
  if (t == 0) {
    s.check(t);
    return x_t;
  }
  const GmmPrior marginal = gmm_marginal_params(prior, t, s);
  const Vector r = detail::softmax(marginal.component_log_terms(x_t));
  const double root_ab = std::sqrt(s.alpha_bar(t));
  Vector out = Vector::Zero(x_t.size());
  for (std::size_t k = 0; k < prior.K(); ++k) {
    const auto gain = root_ab * prior.variance(k).array() / marginal.variance(k).array();
    const Vector m = prior.mean(k) + (gain * (x_t - marginal.mean(k)).array()).matrix();
    out += r[static_cast<Eigen::Index>(k)] * m;
  }
  return out;
}

// Exact posterior p(x0 | y) for y = A x0 + sigma_y eta: reweighted components
// with Kalman-conditioned means and dense covariances.
inline DenseGmm gmm_conditional_posterior(const GmmPrior& prior, const LinearOperator& A, const Vector& y,
                                          double sigma_y) {
  detail::require_dim(A.in_dim(), prior.dim(), "gmm_conditional_posterior (operator input)");
  detail::require_dim(y.size(), A.out_dim(), "gmm_conditional_posterior (measurement)");
  if (!(sigma_y > 0.0)) {
    throw DegeneratePosteriorError("gmm_conditional_posterior: sigma_y must be > 0 for a nonsingular posterior");
  }
  const Matrix M = A.to_dense();
  const Eigen::Index m = M.rows();
  const double log2pi = std::log(2.0 * std::numbers::pi);

  std::vector<Vector> means;
  std::vector<Matrix> covs;
  Vector log_w(static_cast<Eigen::Index>(prior.K()));
  for (std::size_t k = 0; k < prior.K(); ++k) {
    const Matrix V = prior.variance(k).asDiagonal();
    const Matrix VAt = V * M.transpose();
    Matrix S = M * VAt;
    S.diagonal().array() += sigma_y * sigma_y;
    Eigen::LLT<Matrix> llt(S);
    if (llt.info() != Eigen::Success) throw DegeneratePosteriorError("gmm_conditional_posterior: singular innovation");
    const Vector innov = y - M * prior.mean(k);
    const Vector solved = llt.solve(innov);
    means.push_back(prior.mean(k) + VAt * solved);
    Matrix C = V - VAt * llt.solve(VAt.transpose());
    C = 0.5 * (C + C.transpose());
    Eigen::LLT<Matrix> check(C);
    if (check.info() != Eigen::Success) throw DegeneratePosteriorError("gmm_conditional_posterior: singular posterior covariance");
    covs.push_back(std::move(C));
    const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_w[static_cast<Eigen::Index>(k)] =
        std::log(prior.weight(k)) - 0.5 * (innov.dot(solved) + logdet + static_cast<double>(m) * log2pi);
  }
  const Vector w = detail::softmax(log_w);
  return DenseGmm(std::vector<double>(w.data(), w.data() + w.size()), std::move(means), std::move(covs));
}

namespace detail {

// Diffused dense mixture component: N(sqrt(ab) mu, ab C + sigma^2 I).
struct DenseDiffused {
  Vector mean;
  Eigen::LLT<Matrix> chol;
  double log_term;
};

inline std::vector<DenseDiffused> diffuse(const DenseGmm& g, const Vector& x_t, int t, const Schedule& s) {
  const double ab = s.alpha_bar(t);
  const double var_noise = s.sigma(t) * s.sigma(t);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  std::vector<DenseDiffused> out;
  out.reserve(g.K());
  for (std::size_t k = 0; k < g.K(); ++k) {
    Matrix S = ab * g.covariances()[k];
    S.diagonal().array() += var_noise;
    DenseDiffused c{std::sqrt(ab) * g.means()[k], Eigen::LLT<Matrix>(S), 0.0};
    if (c.chol.info() != Eigen::Success) throw DegeneratePosteriorError("dense gmm: singular diffused covariance");
    const Vector diff = x_t - c.mean;
    const double logdet = 2.0 * c.chol.matrixL().toDenseMatrix().diagonal().array().log().sum();
    c.log_term = std::log(g.weights()[k]) -
                 0.5 * (diff.dot(c.chol.solve(diff)) + logdet + static_cast<double>(x_t.size()) * log2pi);
    out.push_back(std::move(c));
  }
  return out;
}

inline Vector responsibilities(const std::vector<DenseDiffused>& comps) {
  Vector logs(static_cast<Eigen::Index>(comps.size()));
  for (std::size_t k = 0; k < comps.size(); ++k) logs[static_cast<Eigen::Index>(k)] = comps[k].log_term;
  return softmax(logs);
}

}  // namespace detail

inline Vector dense_gmm_score(const DenseGmm& g, const Vector& x_t, int t, const Schedule& s) {
  s.check(t);
  detail::require_dim(x_t.size(), g.dim(), "dense_gmm_score");
  detail::require_finite(x_t, "dense_gmm_score");
  const auto comps = detail::diffuse(g, x_t, t, s);
  const Vector r = detail::responsibilities(comps);
  Vector score = Vector::Zero(x_t.size());
  for (std::size_t k = 0; k < comps.size(); ++k) {
    score -= r[static_cast<Eigen::Index>(k)] * comps[k].chol.solve(x_t - comps[k].mean);
  }
  return score;
}

inline double dense_gmm_log_density(const DenseGmm& g, const Vector& x_t, int t, const Schedule& s) {
  s.check(t);
  const auto comps = detail::diffuse(g, x_t, t, s);
  Vector logs(static_cast<Eigen::Index>(comps.size()));
  for (std::size_t k = 0; k < comps.size(); ++k) logs[static_cast<Eigen::Index>(k)] = comps[k].log_term;
  return detail::log_sum_exp(logs);
}

// E[x0 | x_t] for a dense mixture, by per-component Gaussian conditioning.
inline Vector dense_gmm_posterior_mean(const DenseGmm& g, const Vector& x_t, int t, const Schedule& s) {
  s.check(t);
  detail::require_dim(x_t.size(), g.dim(), "dense_gmm_posterior_mean");
  if (t == 0) return x_t;
  const auto comps = detail::diffuse(g, x_t, t, s);
  const Vector r = detail::responsibilities(comps);
  const double root_ab = std::sqrt(s.alpha_bar(t));
  Vector out = Vector::Zero(x_t.size());
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const Vector m = g.means()[k] + root_ab * g.covariances()[k] * comps[k].chol.solve(x_t - comps[k].mean);
    out += r[static_cast<Eigen::Index>(k)] * m;
  }
  return out;
}

// Tweedie estimate x0_hat = (x_t - sigma_t eps) / sqrt(abar_t).
inline Vector tweedie(const Vector& x_t, const Vector& eps, int t, const Schedule& s) {
  s.check(t);
  detail::require_dim(eps.size(), x_t.size(), "tweedie");
  if (t == 0) return x_t;
  return (x_t - s.sigma(t) * eps) / std::sqrt(s.alpha_bar(t));
}

// Any model providing the marginal score and its noise parameterization
// eps = -sigma_t * score.
template <typename M>
concept ScoreModel = requires(const M& m, const Vector& x, int t) {
  { m.score(x, t) } -> std::convertible_to<Vector>;
  { m.eps(x, t) } -> std::convertible_to<Vector>;
  { m.schedule() } -> std::convertible_to<const Schedule&>;
};

// Exact score of a diffused diagonal GMM. Holds references; the prior and
// schedule must outlive it.
class GmmScoreModel {
 public:
  GmmScoreModel(const GmmPrior& prior, const Schedule& schedule) : prior_(&prior), schedule_(&schedule) {}
  // Non-owning; refuse temporaries.
  GmmScoreModel(GmmPrior&&, const Schedule&) = delete;
  GmmScoreModel(const GmmPrior&, Schedule&&) = delete;

  Vector score(const Vector& x_t, int t) const { return gmm_score(*prior_, x_t, t, *schedule_); }
  Vector eps(const Vector& x_t, int t) const { return -schedule_->sigma(t) * score(x_t, t); }
  const Schedule& schedule() const { return *schedule_; }
  const GmmPrior& prior() const { return *prior_; }

 private:
  const GmmPrior* prior_;
  const Schedule* schedule_;
};

class DenseGmmScoreModel {
 public:
  DenseGmmScoreModel(const DenseGmm& mixture, const Schedule& schedule) : mix_(&mixture), schedule_(&schedule) {}
  DenseGmmScoreModel(DenseGmm&&, const Schedule&) = delete;
  DenseGmmScoreModel(const DenseGmm&, Schedule&&) = delete;

  Vector score(const Vector& x_t, int t) const { return dense_gmm_score(*mix_, x_t, t, *schedule_); }
  Vector eps(const Vector& x_t, int t) const { return -schedule_->sigma(t) * score(x_t, t); }
  const Schedule& schedule() const { return *schedule_; }

 private:
  const DenseGmm* mix_;
  const Schedule* schedule_;
};

static_assert(ScoreModel<GmmScoreModel>);
static_assert(ScoreModel<DenseGmmScoreModel>);

}  // namespace dcs
