#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "dcs/error.hpp"
#include "dcs/nam.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/samplers.hpp"

namespace dcs {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError(where + ": unknown field '" + key + "'");
  }
}

template <typename T>
T get_field(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + "." + key + ": missing required field");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& where) {
  return j.contains(key) ? get_field<T>(j, key, where) : fallback;
}

inline Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }
inline std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

// ---- GmmPrior <-> {"weights":[...],"means":[[...]],"variances":[[...]]} ----

inline json prior_to_json(const GmmPrior& p) {
  json means = json::array(), vars = json::array();
  for (std::size_t k = 0; k < p.K(); ++k) {
    means.push_back(detail::to_std(p.mean(k)));
    vars.push_back(detail::to_std(p.variance(k)));
  }
  return {{"weights", p.weights()}, {"means", std::move(means)}, {"variances", std::move(vars)}};
}

inline GmmPrior prior_from_json(const json& j) {
  const std::string where = "prior";
  if (!j.is_object()) throw ConfigError("prior: expected an object");
  detail::reject_unknown_keys(j, {"weights", "means", "variances"}, where);
  auto weights = detail::get_field<std::vector<double>>(j, "weights", where);
  auto means = detail::get_field<std::vector<std::vector<double>>>(j, "means", where);
  auto vars = detail::get_field<std::vector<std::vector<double>>>(j, "variances", where);
  std::vector<Vector> m, v;
  for (const auto& row : means) m.push_back(detail::to_vector(row));
  for (const auto& row : vars) v.push_back(detail::to_vector(row));
  return GmmPrior(std::move(weights), std::move(m), std::move(v));
}

// Seeded synthetic mixture used by the toy tasks: K equally weighted
// components, means uniform in [-spread, spread], isotropic variance.
inline GmmPrior toy_prior(Eigen::Index dim, std::size_t components, std::uint64_t seed, double variance = 0.02,
                          double spread = 0.6) {
  if (dim < 1 || components < 1) throw ConfigError("toy prior: dim and components must be >= 1");
  RandomStream rng(seed, 0x70e);
  std::vector<double> w(components, 1.0 / static_cast<double>(components));
  std::vector<Vector> means, vars;
  for (std::size_t k = 0; k < components; ++k) {
    Vector mu(dim);
    for (Eigen::Index i = 0; i < dim; ++i) mu[i] = spread * (2.0 * rng.uniform() - 1.0);
    means.push_back(std::move(mu));
    vars.push_back(Vector::Constant(dim, variance));
  }
  return GmmPrior(std::move(w), std::move(means), std::move(vars));
}

// Accepts a literal GMM, the string "point_mass" (zero mean, needs dim), or
// {"kind":"point_mass","mean":[...]} / {"kind":"toy","dim":..,"components":..,"seed":..}.
inline GmmPrior parse_prior_spec(const json& j, std::optional<Eigen::Index> dim) {
  if (j.is_string()) {
    if (j.get<std::string>() != "point_mass") throw ConfigError("prior: unknown prior name '" + j.get<std::string>() + "'");
    if (!dim) throw ConfigError("prior: \"point_mass\" needs a top-level \"dim\"");
    return GmmPrior::point_mass(Vector::Zero(*dim));
  }
  if (!j.is_object()) throw ConfigError("prior: expected an object or \"point_mass\"");
  if (!j.contains("kind")) return prior_from_json(j);
  const auto kind = detail::get_field<std::string>(j, "kind", "prior");
  if (kind == "point_mass") {
    detail::reject_unknown_keys(j, {"kind", "mean"}, "prior");
    return GmmPrior::point_mass(detail::to_vector(detail::get_field<std::vector<double>>(j, "mean", "prior")));
  }
  if (kind == "toy") {
    detail::reject_unknown_keys(j, {"kind", "dim", "components", "seed", "variance", "spread"}, "prior");
    const auto d = detail::get_or<long>(j, "dim", dim.value_or(16), "prior");
    return toy_prior(d, detail::get_or<std::size_t>(j, "components", 4, "prior"),
                     detail::get_or<std::uint64_t>(j, "seed", 7, "prior"), detail::get_or<double>(j, "variance", 0.02, "prior"),
                     detail::get_or<double>(j, "spread", 0.6, "prior"));
  }
  throw ConfigError("prior.kind: unknown kind '" + kind + "'");
}

// ---- operator specs ----

// Operator description independent of the signal dimension; build() binds it.
struct OperatorSpec {
  OperatorKind kind = OperatorKind::Identity;
  std::vector<Eigen::Index> keep;
  Eigen::Index block = 1;
  Vector kernel;
  Matrix rows;

  LinearOperator build(Eigen::Index n) const {
    switch (kind) {
      case OperatorKind::Identity: return LinearOperator::identity(n);
      case OperatorKind::Mask: return LinearOperator::mask(n, keep);
      case OperatorKind::Downsample: return LinearOperator::downsample(n, block);
      case OperatorKind::CircularConv: return LinearOperator::circular_conv(n, kernel);
      case OperatorKind::Dense:
        if (rows.cols() != n) throw ConfigError("operator.rows: column count does not match the signal dimension");
        return LinearOperator::dense(rows);
    }
    throw ConfigError("operator: unknown kind");
  }

  std::string name() const { return to_string(kind); }
};

inline json operator_to_json(const OperatorSpec& op) {
  json j{{"kind", op.name()}};
  switch (op.kind) {
    case OperatorKind::Identity: break;
    case OperatorKind::Mask: j["keep"] = op.keep; break;
    case OperatorKind::Downsample: j["block"] = op.block; break;
    case OperatorKind::CircularConv: j["kernel"] = detail::to_std(op.kernel); break;
    case OperatorKind::Dense: {
      json rows = json::array();
      for (Eigen::Index i = 0; i < op.rows.rows(); ++i) rows.push_back(detail::to_std(op.rows.row(i).transpose()));
      j["rows"] = std::move(rows);
      break;
    }
  }
  return j;
}

// {"kind":"identity"} | {"kind":"mask","keep":[...]} | {"kind":"downsample","block":b}
// | {"kind":"circ_conv","kernel":[...]} | {"kind":"dense","rows":[[...]]}.
// circ_conv also accepts {"gaussian_std":s,"radius":r} or {"box":L} in place of "kernel".
inline OperatorSpec operator_from_json(const json& j) {
  const std::string where = "operator";
  if (!j.is_object()) throw ConfigError("operator: expected an object");
  const auto kind = detail::get_field<std::string>(j, "kind", where);
  OperatorSpec op;
  if (kind == "identity") {
    detail::reject_unknown_keys(j, {"kind"}, where);
    op.kind = OperatorKind::Identity;
  } else if (kind == "mask") {
    detail::reject_unknown_keys(j, {"kind", "keep"}, where);
    op.kind = OperatorKind::Mask;
    op.keep = detail::get_field<std::vector<Eigen::Index>>(j, "keep", where);
  } else if (kind == "downsample") {
    detail::reject_unknown_keys(j, {"kind", "block"}, where);
    op.kind = OperatorKind::Downsample;
    op.block = detail::get_field<Eigen::Index>(j, "block", where);
  } else if (kind == "circ_conv") {
    detail::reject_unknown_keys(j, {"kind", "kernel", "gaussian_std", "radius", "box"}, where);
    op.kind = OperatorKind::CircularConv;
    if (j.contains("kernel")) {
      op.kernel = detail::to_vector(detail::get_field<std::vector<double>>(j, "kernel", where));
    } else if (j.contains("gaussian_std")) {
      const double std_dev = detail::get_field<double>(j, "gaussian_std", where);
      op.kernel = gaussian_kernel(std_dev, detail::get_or<Eigen::Index>(j, "radius", static_cast<Eigen::Index>(std::ceil(3.0 * std_dev)), where));
    } else if (j.contains("box")) {
      op.kernel = box_kernel(detail::get_field<Eigen::Index>(j, "box", where));
    } else {
      throw ConfigError("operator: circ_conv needs \"kernel\", \"gaussian_std\" or \"box\"");
    }
  } else if (kind == "dense") {
    detail::reject_unknown_keys(j, {"kind", "rows"}, where);
    op.kind = OperatorKind::Dense;
    const auto rows = detail::get_field<std::vector<std::vector<double>>>(j, "rows", where);
    if (rows.empty() || rows.front().empty()) throw ConfigError("operator.rows: empty matrix");
    op.rows.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.front().size()) throw ConfigError("operator.rows: ragged matrix");
      op.rows.row(static_cast<Eigen::Index>(i)) = detail::to_vector(rows[i]).transpose();
    }
  } else {
    throw ConfigError("operator.kind: unknown kind '" + kind + "'");
  }
  return op;
}

// ---- solver / nam ----

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "AdamW" || s == "adamw" || s == "Adam" || s == "adam") return Optimizer::AdamW;
  if (s == "SgdMomentum" || s == "sgd_momentum") return Optimizer::SgdMomentum;
  if (s == "Sgd" || s == "sgd") return Optimizer::Sgd;
  if (s == "Analytic" || s == "analytic") return Optimizer::Analytic;
  throw ConfigError("nam.optimizer: unknown optimizer '" + s + "'");
}

inline SolverKind parse_solver(const std::string& s) {
  if (s == "DCS" || s == "dcs") return SolverKind::DCS;
  if (s == "DPS_JF" || s == "dps_jf") return SolverKind::DPS_JF;
  if (s == "DDNM" || s == "ddnm") return SolverKind::DDNM;
  if (s == "Unconditional" || s == "unconditional") return SolverKind::Unconditional;
  throw ConfigError("solver.solver: unknown solver '" + s + "'");
}

inline StepKind parse_step(const std::string& s) {
  if (s == "DDPM" || s == "ddpm") return StepKind::DDPM;
  if (s == "DDIM" || s == "ddim") return StepKind::DDIM;
  throw ConfigError("solver.sampler_step: unknown step '" + s + "'");
}

// Returns the config plus whether "optimizer" was given explicitly.
inline std::pair<NamConfig, bool> nam_from_json(const json& j) {
  const std::string where = "nam";
  if (!j.is_object()) throw ConfigError("nam: expected an object");
  detail::reject_unknown_keys(j,
                              {"optimizer", "lr", "max_iters", "adam_beta1", "adam_beta2", "adam_eps", "weight_decay",
                               "momentum", "stopping_enabled"},
                              where);
  NamConfig c;
  const bool explicit_opt = j.contains("optimizer");
  if (explicit_opt) c.optimizer = parse_optimizer(detail::get_field<std::string>(j, "optimizer", where));
  c.lr = detail::get_or(j, "lr", c.lr, where);
  c.max_iters = detail::get_or(j, "max_iters", c.max_iters, where);
  c.adam_beta1 = detail::get_or(j, "adam_beta1", c.adam_beta1, where);
  c.adam_beta2 = detail::get_or(j, "adam_beta2", c.adam_beta2, where);
  c.adam_eps = detail::get_or(j, "adam_eps", c.adam_eps, where);
  c.weight_decay = detail::get_or(j, "weight_decay", c.weight_decay, where);
  c.momentum = detail::get_or(j, "momentum", c.momentum, where);
  c.stopping_enabled = detail::get_or(j, "stopping_enabled", c.stopping_enabled, where);
  c.validate();
  return {c, explicit_opt};
}

inline json nam_to_json(const NamConfig& c) {
  return {{"optimizer", to_string(c.optimizer)}, {"lr", c.lr},
          {"max_iters", c.max_iters},            {"adam_beta1", c.adam_beta1},
          {"adam_beta2", c.adam_beta2},          {"adam_eps", c.adam_eps},
          {"weight_decay", c.weight_decay},      {"momentum", c.momentum},
          {"stopping_enabled", c.stopping_enabled}};
}

// ---- experiment ----

struct ExperimentConfig {
  GmmPrior prior = GmmPrior::point_mass(Vector::Zero(1));
  OperatorSpec op;
  double sigma_y = 0.0;
  SolverConfig solver;
  bool nam_optimizer_auto = true;  // resolve via default_optimizer(op) per operator
  int n_seeds = 1;
  std::string output_dir;
  bool emit_images = false;
  std::optional<std::pair<int, int>> image_shape;
  double peak = 1.0;
  bool record_timing = true;

  // Solver config with the nam optimizer resolved for the given operator.
  SolverConfig resolved_solver(const LinearOperator& A) const {
    SolverConfig s = solver;
    if (nam_optimizer_auto) s.nam.optimizer = default_optimizer(A);
    return s;
  }

  void validate() const {
    if (n_seeds < 1) throw ConfigError("n_seeds: must be >= 1");
    if (!(sigma_y >= 0.0)) throw ConfigError("sigma_y: must be >= 0");
    if (!(peak > 0.0)) throw ConfigError("peak: must be > 0");
    if (image_shape) {
      const auto [h, w] = *image_shape;
      if (h < 1 || w < 1 || static_cast<Eigen::Index>(h) * w != prior.dim()) {
        throw ConfigError("image_shape: h*w must equal the prior dimension " + std::to_string(prior.dim()));
      }
    }
    if (emit_images && !image_shape) throw ConfigError("emit_images: requires image_shape");
    solver.validate();
    (void)op.build(prior.dim());
  }
};

// Lists of settings crossed by sweep(); an empty list keeps the base value.
struct SweepGrid {
  std::vector<double> sigma_y;
  std::vector<int> T;
  std::vector<SolverKind> solvers;
  std::vector<OperatorSpec> operators;
};

inline SolverConfig solver_from_json(const json& j, bool* explicit_optimizer) {
  const std::string where = "solver";
  if (!j.is_object()) throw ConfigError("solver: expected an object");
  detail::reject_unknown_keys(j, {"solver", "T", "sampler_step", "ddim_eta", "nam", "dps_zeta", "seed"}, where);
  SolverConfig s;
  if (j.contains("solver")) s.solver = parse_solver(detail::get_field<std::string>(j, "solver", where));
  s.T = detail::get_or(j, "T", s.T, where);
  if (j.contains("sampler_step")) s.sampler_step = parse_step(detail::get_field<std::string>(j, "sampler_step", where));
  s.ddim_eta = detail::get_or(j, "ddim_eta", s.ddim_eta, where);
  s.dps_zeta = detail::get_or(j, "dps_zeta", s.dps_zeta, where);
  s.seed = detail::get_or<std::uint64_t>(j, "seed", s.seed, where);
  bool explicit_opt = false;
  if (j.contains("nam")) std::tie(s.nam, explicit_opt) = nam_from_json(j.at("nam"));
  if (explicit_optimizer) *explicit_optimizer = explicit_opt;
  s.validate();
  return s;
}

inline json solver_to_json(const SolverConfig& s) {
  return {{"solver", to_string(s.solver)}, {"T", s.T},
          {"sampler_step", to_string(s.sampler_step)}, {"ddim_eta", s.ddim_eta},
          {"nam", nam_to_json(s.nam)}, {"dps_zeta", s.dps_zeta},
          {"seed", s.seed}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  const std::string where = "config";
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  detail::reject_unknown_keys(j,
                              {"prior", "dim", "operator", "sigma_y", "solver", "n_seeds", "output_dir", "emit_images",
                               "image_shape", "peak", "record_timing", "sweep"},
                              where);
  ExperimentConfig c;
  std::optional<Eigen::Index> dim;
  if (j.contains("dim")) dim = detail::get_field<Eigen::Index>(j, "dim", where);
  if (!j.contains("prior")) throw ConfigError("config.prior: missing required field");
  c.prior = parse_prior_spec(j.at("prior"), dim);
  if (dim && *dim != c.prior.dim()) throw ConfigError("config.dim: does not match the prior dimension");
  if (!j.contains("operator")) throw ConfigError("config.operator: missing required field");
  c.op = operator_from_json(j.at("operator"));
  c.sigma_y = detail::get_field<double>(j, "sigma_y", where);
  if (j.contains("solver")) {
    bool explicit_opt = false;
    c.solver = solver_from_json(j.at("solver"), &explicit_opt);
    c.nam_optimizer_auto = !explicit_opt;
  }
  c.n_seeds = detail::get_or(j, "n_seeds", c.n_seeds, where);
  c.output_dir = detail::get_or<std::string>(j, "output_dir", "", where);
  c.emit_images = detail::get_or(j, "emit_images", c.emit_images, where);
  if (j.contains("image_shape")) {
    const auto hw = detail::get_field<std::vector<int>>(j, "image_shape", where);
    if (hw.size() != 2) throw ConfigError("config.image_shape: expected [h, w]");
    c.image_shape = std::make_pair(hw[0], hw[1]);
  }
  c.peak = detail::get_or(j, "peak", c.peak, where);
  c.record_timing = detail::get_or(j, "record_timing", c.record_timing, where);
  c.validate();
  return c;
}

// {"sigma_y":[...],"T":[...],"solvers":[...],"operators":[{...}]}
inline SweepGrid sweep_from_json(const json& j) {
  const std::string where = "sweep";
  if (!j.is_object()) throw ConfigError("sweep: expected an object");
  detail::reject_unknown_keys(j, {"sigma_y", "T", "solvers", "operators"}, where);
  SweepGrid g;
  g.sigma_y = detail::get_or<std::vector<double>>(j, "sigma_y", {}, where);
  g.T = detail::get_or<std::vector<int>>(j, "T", {}, where);
  for (const auto& s : detail::get_or<std::vector<std::string>>(j, "solvers", {}, where)) g.solvers.push_back(parse_solver(s));
  if (j.contains("operators")) {
    if (!j.at("operators").is_array()) throw ConfigError("sweep.operators: expected an array");
    for (const auto& o : j.at("operators")) g.operators.push_back(operator_from_json(o));
  }
  return g;
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace dcs
