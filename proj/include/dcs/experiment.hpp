#pragma once

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "dcs/config.hpp"
#include "dcs/error.hpp"
#include "dcs/operators.hpp"
#include "dcs/prior.hpp"
#include "dcs/samplers.hpp"
#include "dcs/schedule.hpp"

namespace dcs {

inline constexpr const char* kMetricsHeader = "solver,operator,sigma_y,T,seed,mse,psnr,nam_iters_mean,wall_ms";
inline constexpr const char* kAggregateHeader =
    "solver,operator,sigma_y,T,n,mse_mean,mse_se,psnr_mean,psnr_se,nam_iters_mean";

// Stream indices derived from each seed.
inline constexpr std::uint64_t kDataStream = 0;
inline constexpr std::uint64_t kNoiseStream = 1;
inline constexpr std::uint64_t kSolverStream = 2;

inline double mse(const Vector& x_hat, const Vector& x0) {
  detail::require_dim(x_hat.size(), x0.size(), "mse");
  return (x_hat - x0).squaredNorm() / static_cast<double>(x0.size());
}

// 10 log10(peak^2 / mse); +inf when the estimate is exact.
inline double psnr(const Vector& x_hat, const Vector& x0, double peak = 1.0) {
  detail::require_dim(x_hat.size(), x0.size(), "psnr");
  if (!(peak > 0.0)) throw ArgumentError("psnr: peak must be > 0");
  const double err = mse(x_hat, x0);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / err);
}

inline void score_run(RunRecord& rec, const Vector& x0, double peak = 1.0) {
  rec.mse = mse(rec.x0_hat, x0);
  rec.psnr = std::isnan(rec.mse) ? rec.mse : psnr(rec.x0_hat, x0, peak);
}

// Shortest exact decimal form; non-finite values as inf / -inf / nan.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct MetricsRow {
  std::string solver;
  std::string op;
  double sigma_y = 0.0;
  int T = 0;
  std::uint64_t seed = 0;
  double mse = 0.0;
  double psnr = 0.0;
  double nam_iters_mean = 0.0;
  double wall_ms = 0.0;

  std::string to_csv() const {
    std::ostringstream out;
    out << solver << ',' << op << ',' << format_number(sigma_y) << ',' << T << ',' << seed << ','
        << format_number(mse) << ',' << format_number(psnr) << ',' << format_number(nam_iters_mean) << ','
        << format_number(wall_ms);
    return out.str();
  }
};

struct AggregateRow {
  std::string solver;
  std::string op;
  double sigma_y = 0.0;
  int T = 0;
  int n = 0;
  double mse_mean = 0.0;
  double mse_se = 0.0;
  double psnr_mean = 0.0;
  double psnr_se = 0.0;
  double nam_iters_mean = 0.0;

  std::string to_csv() const {
    std::ostringstream out;
    out << solver << ',' << op << ',' << format_number(sigma_y) << ',' << T << ',' << n << ','
        << format_number(mse_mean) << ',' << format_number(mse_se) << ',' << format_number(psnr_mean) << ','
        << format_number(psnr_se) << ',' << format_number(nam_iters_mean);
    return out.str();
  }
};

namespace detail {

inline std::pair<double, double> mean_and_se(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  const double mean = sum / n;
  if (v.size() < 2 || !std::isfinite(mean)) return {mean, v.size() < 2 ? 0.0 : std::numeric_limits<double>::quiet_NaN()};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0) / n)};
}

inline int thread_budget() {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("DCSOLVE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1) n = n > 0 ? std::min(n, cap) : cap;
  }
  return std::max(n, 1);
}

// Runs body(i) for i in [0, count) on up to thread_budget() workers. Results
// must be written to index-addressed storage so ordering never depends on
// scheduling. The first exception is rethrown.
template <typename Body>
void parallel_for(std::size_t count, Body&& body) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(thread_budget()), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir)) {
    throw IoError("cannot create output directory '" + dir.string() + "'");
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

// Binary PGM (P5), values mapped from [-1, 1] to [0, 255] after clamping.
inline void emit_image(const Vector& x, std::pair<int, int> shape, const std::filesystem::path& path) {
  const auto [h, w] = shape;
  if (h < 1 || w < 1 || static_cast<Eigen::Index>(h) * w != x.size()) {
    throw ArgumentError("emit_image: shape does not match vector length");
  }
  std::string data = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  data.reserve(data.size() + static_cast<std::size_t>(x.size()));
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = std::isnan(x[i]) ? -1.0 : std::clamp(x[i], -1.0, 1.0);
    data.push_back(static_cast<char>(static_cast<unsigned char>(std::lround((v + 1.0) * 127.5))));
  }
  detail::write_text(path, data);
}

struct CellResult {
  std::vector<MetricsRow> rows;
  AggregateRow aggregate;
};

inline AggregateRow aggregate_rows(const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw ArgumentError("aggregate_rows: no rows");
  AggregateRow a{rows.front().solver, rows.front().op, rows.front().sigma_y, rows.front().T,
                 static_cast<int>(rows.size())};
  std::vector<double> m, p, it;
  for (const auto& r : rows) {
    m.push_back(r.mse);
    p.push_back(r.psnr);
    it.push_back(r.nam_iters_mean);
  }
  std::tie(a.mse_mean, a.mse_se) = detail::mean_and_se(m);
  std::tie(a.psnr_mean, a.psnr_se) = detail::mean_and_se(p);
  a.nam_iters_mean = detail::mean_and_se(it).first;
  return a;
}

namespace detail {

// One seed of one cell: draw x0, measure, solve, score.
inline MetricsRow run_one(const ExperimentConfig& cfg, const LinearOperator& op_proto,
                          const std::shared_ptr<const LinearOperator>& op, const Schedule& schedule,
                          const SolverConfig& solver, int index, const std::filesystem::path& image_dir) {
  const std::uint64_t seed = solver.seed + static_cast<std::uint64_t>(index);
  RandomStream data(seed, kDataStream), noise(seed, kNoiseStream), chain(seed, kSolverStream);
  const auto start = std::chrono::steady_clock::now();
  const Vector x0 = cfg.prior.sample(data);
  const Measurement meas = measure(op, x0, cfg.sigma_y, noise);
  const GmmScoreModel score(cfg.prior, schedule);
  RunRecord rec = solve(meas, score, schedule, solver, chain);
  score_run(rec, x0, cfg.peak);
  const auto stop = std::chrono::steady_clock::now();

  MetricsRow row{to_string(solver.solver), op_proto.kind_name(), cfg.sigma_y, solver.T, seed, rec.mse, rec.psnr,
                 rec.mean_nam_iters(), 0.0};
  if (cfg.record_timing) row.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();

  if (cfg.emit_images && cfg.image_shape && !image_dir.empty()) {
    const std::string s = std::to_string(seed);
    emit_image(x0, *cfg.image_shape, image_dir / ("img_" + s + "_truth.pgm"));
    const std::string tag = row.solver + "_" + row.op + "_sy" + format_number(cfg.sigma_y) + "_T" + std::to_string(row.T);
    emit_image(rec.x0_hat, *cfg.image_shape, image_dir / ("img_" + s + "_" + tag + ".pgm"));
  }
  return row;
}

}  // namespace detail

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += r.to_csv() + "\n";
  return out;
}

inline std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::string out = std::string(kAggregateHeader) + "\n";
  for (const auto& r : rows) out += r.to_csv() + "\n";
  return out;
}

struct SweepResult {
  std::vector<MetricsRow> rows;         // grid order, then seed
  std::vector<AggregateRow> aggregate;  // one per grid cell
};

// Cross product of the grid (operators, solvers, sigma_y, T, outermost first),
// n_seeds runs per cell. Seeds are shared across cells, so every cell sees the
// same ground truths and measurement noise draws.
inline SweepResult sweep(const ExperimentConfig& base, const SweepGrid& grid) {
  base.validate();
  const std::vector<OperatorSpec> ops = grid.operators.empty() ? std::vector<OperatorSpec>{base.op} : grid.operators;
  const std::vector<SolverKind> solvers =
      grid.solvers.empty() ? std::vector<SolverKind>{base.solver.solver} : grid.solvers;
  const std::vector<double> sigmas = grid.sigma_y.empty() ? std::vector<double>{base.sigma_y} : grid.sigma_y;
  const std::vector<int> steps = grid.T.empty() ? std::vector<int>{base.solver.T} : grid.T;

  struct Cell {
    ExperimentConfig cfg;
    LinearOperator op;
    std::shared_ptr<const LinearOperator> shared;
    SolverConfig solver;
    std::shared_ptr<const Schedule> schedule;
  };
  std::vector<Cell> cells;
  for (const auto& op_spec : ops) {
    const LinearOperator op = op_spec.build(base.prior.dim());
    auto shared = std::make_shared<const LinearOperator>(op);
    for (SolverKind solver_kind : solvers) {
      for (double sigma : sigmas) {
        for (int T : steps) {
          ExperimentConfig cfg = base;
          cfg.op = op_spec;
          cfg.sigma_y = sigma;
          cfg.solver.solver = solver_kind;
          cfg.solver.T = T;
          cfg.validate();
          SolverConfig solver = cfg.resolved_solver(op);
          if (sigma == 0.0 && solver.solver == SolverKind::DCS && solver.nam.optimizer != Optimizer::Analytic) {
            throw ConfigError("sigma_y = 0 with solver DCS requires nam.optimizer = Analytic");
          }
          cells.push_back({cfg, op, shared, solver, std::make_shared<const Schedule>(make_linear_schedule(T))});
        }
      }
    }
  }

  std::filesystem::path image_dir;
  if (!base.output_dir.empty() && base.emit_images) {
    image_dir = base.output_dir;
    detail::ensure_dir(image_dir);
  }

  const std::size_t per_cell = static_cast<std::size_t>(base.n_seeds);
  SweepResult result;
  result.rows.resize(cells.size() * per_cell);
  detail::parallel_for(result.rows.size(), [&](std::size_t i) {
    const Cell& c = cells[i / per_cell];
    result.rows[i] = detail::run_one(c.cfg, c.op, c.shared, *c.schedule, c.solver, static_cast<int>(i % per_cell), image_dir);
  });
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<MetricsRow> cell_rows(result.rows.begin() + static_cast<std::ptrdiff_t>(c * per_cell),
                                      result.rows.begin() + static_cast<std::ptrdiff_t>((c + 1) * per_cell));
    result.aggregate.push_back(aggregate_rows(cell_rows));
  }
  return result;
}

inline SweepResult run_experiment_full(const ExperimentConfig& cfg) { return sweep(cfg, SweepGrid{}); }

// n_seeds runs of a single configuration.
inline std::vector<MetricsRow> run_experiment(const ExperimentConfig& cfg) { return run_experiment_full(cfg).rows; }

// Writes metrics.csv and aggregate.csv into dir.
inline void write_results(const SweepResult& r, const std::filesystem::path& dir) {
  detail::ensure_dir(dir);
  detail::write_text(dir / "metrics.csv", metrics_csv(r.rows));
  detail::write_text(dir / "aggregate.csv", aggregate_csv(r.aggregate));
}

}  // namespace dcs
