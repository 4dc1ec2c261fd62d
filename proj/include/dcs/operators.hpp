#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <Eigen/SVD>

#include "dcs/error.hpp"
#include "dcs/rng.hpp"

namespace dcs {

enum class OperatorKind { Identity, Mask, Downsample, CircularConv, Dense };

inline std::string to_string(OperatorKind k) {
  switch (k) {
    case OperatorKind::Identity: return "identity";
    case OperatorKind::Mask: return "mask";
    case OperatorKind::Downsample: return "downsample";
    case OperatorKind::CircularConv: return "circ_conv";
    case OperatorKind::Dense: return "dense";
  }
  return "unknown";
}

// Relative cutoffs below which spectral components are treated as zero.
inline constexpr double kCircConvCutoff = 1e-6;
inline constexpr double kDenseSvdCutoff = 1e-10;

namespace ops {

struct Identity {
  Eigen::Index n;
};

struct Mask {
  Eigen::Index n;
  std::vector<Eigen::Index> keep;
};

// Average pooling over contiguous blocks of `block` entries.
struct Downsample {
  Eigen::Index n;
  Eigen::Index block;
};

// Circular convolution with a kernel centered at index size/2.
struct CircularConv {
  Eigen::Index n;
  Vector kernel;
  std::vector<std::complex<double>> response;  // DFT of the first column
  Vector pinv_column;                          // first column of the circulant pseudoinverse
  double condition = 0.0;                      // max/min retained |response|
};

struct Dense {
  Matrix matrix;
  Matrix pinv;
};

}  // namespace ops

// Linear measurement map A with its adjoint and Moore-Penrose pseudoinverse.
// Immutable after construction; spectral factors are precomputed.
class LinearOperator {
 public:
  static LinearOperator identity(Eigen::Index n) {
    if (n < 1) throw ConfigError("identity operator: dimension must be >= 1");
    return LinearOperator(ops::Identity{n});
  }

  static LinearOperator mask(Eigen::Index n, std::vector<Eigen::Index> keep) {
    if (n < 1) throw ConfigError("mask operator: dimension must be >= 1");
    if (keep.empty()) throw ConfigError("mask operator: keep set is empty");
    std::vector<Eigen::Index> sorted = keep;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ConfigError("mask operator: duplicate keep index");
    }
    if (sorted.front() < 0 || sorted.back() >= n) throw ConfigError("mask operator: keep index out of range");
    return LinearOperator(ops::Mask{n, std::move(keep)});
  }

  static LinearOperator downsample(Eigen::Index n, Eigen::Index block) {
    if (block < 1) throw ConfigError("downsample operator: block must be >= 1");
    if (n < block || n % block != 0) {
      throw ConfigError("downsample operator: dimension " + std::to_string(n) + " not divisible by block " +
                        std::to_string(block));
    }
    return LinearOperator(ops::Downsample{n, block});
  }

  static LinearOperator circular_conv(Eigen::Index n, Vector kernel) {
    if (kernel.size() < 1 || kernel.size() > n) throw ConfigError("circ_conv operator: kernel length must be in [1, n]");
    if (!kernel.allFinite()) throw ConfigError("circ_conv operator: kernel is not finite");
    ops::CircularConv c{n, std::move(kernel), {}, Vector::Zero(n)};
    Vector column = Vector::Zero(n);
    const Eigen::Index center = c.kernel.size() / 2;
    for (Eigen::Index m = 0; m < c.kernel.size(); ++m) column[wrap(m - center, n)] += c.kernel[m];

    c.response.resize(n);
    double peak = 0.0;
    for (Eigen::Index f = 0; f < n; ++f) {
      std::complex<double> acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) acc += column[j] * std::polar(1.0, -angle(f * j, n));
      c.response[f] = acc;
      peak = std::max(peak, std::abs(acc));
    }
    if (peak == 0.0) throw ConfigError("circ_conv operator: kernel is identically zero");

    double smallest = peak;
    std::vector<std::complex<double>> inverse(n, 0.0);
    for (Eigen::Index f = 0; f < n; ++f) {
      const double mag = std::abs(c.response[f]);
      if (mag >= kCircConvCutoff * peak) {
        inverse[f] = 1.0 / c.response[f];
        smallest = std::min(smallest, mag);
      }
    }
    c.condition = peak / smallest;
    for (Eigen::Index j = 0; j < n; ++j) {
      std::complex<double> acc = 0.0;
      for (Eigen::Index f = 0; f < n; ++f) acc += inverse[f] * std::polar(1.0, angle(f * j, n));
      c.pinv_column[j] = acc.real() / static_cast<double>(n);
    }
    return LinearOperator(std::move(c));
  }

  static LinearOperator dense(Matrix m) {
    if (m.rows() < 1 || m.cols() < 1) throw ConfigError("dense operator: empty matrix");
    if (!m.allFinite()) throw ConfigError("dense operator: matrix is not finite");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Vector& s = svd.singularValues();
    const double cutoff = kDenseSvdCutoff * (s.size() > 0 ? s[0] : 0.0);
    Vector s_inv = Vector::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
      if (s[i] > cutoff) s_inv[i] = 1.0 / s[i];
    }
    Matrix pinv = svd.matrixV() * s_inv.asDiagonal() * svd.matrixU().transpose();
    return LinearOperator(ops::Dense{std::move(m), std::move(pinv)});
  }

  OperatorKind kind() const { return static_cast<OperatorKind>(impl_.index()); }
  std::string kind_name() const { return to_string(kind()); }

  Eigen::Index in_dim() const {
    return std::visit(
        [](const auto& op) -> Eigen::Index {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, ops::Dense>) {
            return op.matrix.cols();
          } else {
            return op.n;
          }
        },
        impl_);
  }

  Eigen::Index out_dim() const {
    return std::visit(
        [](const auto& op) -> Eigen::Index {
          using T = std::decay_t<decltype(op)>;
          if constexpr (std::is_same_v<T, ops::Identity> || std::is_same_v<T, ops::CircularConv>) {
            return op.n;
          } else if constexpr (std::is_same_v<T, ops::Mask>) {
            return static_cast<Eigen::Index>(op.keep.size());
          } else if constexpr (std::is_same_v<T, ops::Downsample>) {
            return op.n / op.block;
          } else {
            return op.matrix.rows();
          }
        },
        impl_);
  }

  Vector apply(const Vector& x) const {
    detail::require_dim(x.size(), in_dim(), "apply");
    return std::visit([&](const auto& op) { return apply_impl(op, x); }, impl_);
  }

  Vector adjoint(const Vector& u) const {
    detail::require_dim(u.size(), out_dim(), "adjoint");
    return std::visit([&](const auto& op) { return adjoint_impl(op, u); }, impl_);
  }

  Vector pinv_apply(const Vector& u) const {
    detail::require_dim(u.size(), out_dim(), "pinv_apply");
    return std::visit([&](const auto& op) { return pinv_impl(op, u); }, impl_);
  }

  // Explicit matrix of the map, built column by column from basis vectors.
  Matrix to_dense() const {
    Matrix m(out_dim(), in_dim());
    Vector e = Vector::Zero(in_dim());
    for (Eigen::Index j = 0; j < in_dim(); ++j) {
      e[j] = 1.0;
      m.col(j) = apply(e);
      e[j] = 0.0;
    }
    return m;
  }

  // Kept indices for Mask, empty otherwise.
  const std::vector<Eigen::Index>& keep() const {
    static const std::vector<Eigen::Index> none;
    if (const auto* m = std::get_if<ops::Mask>(&impl_)) return m->keep;
    return none;
  }
  Eigen::Index block() const {
    if (const auto* d = std::get_if<ops::Downsample>(&impl_)) return d->block;
    return 1;
  }
  // Kernel for CircularConv, empty otherwise.
  Vector kernel() const {
    if (const auto* c = std::get_if<ops::CircularConv>(&impl_)) return c->kernel;
    return {};
  }
  // Matrix for Dense, empty otherwise.
  Matrix matrix() const {
    if (const auto* d = std::get_if<ops::Dense>(&impl_)) return d->matrix;
    return {};
  }
  // Ratio of largest to smallest retained frequency magnitude (CircularConv only).
  double condition_number() const {
    if (const auto* c = std::get_if<ops::CircularConv>(&impl_)) return c->condition;
    return 1.0;
  }
  const std::vector<std::complex<double>>& frequency_response() const {
    static const std::vector<std::complex<double>> none;
    if (const auto* c = std::get_if<ops::CircularConv>(&impl_)) return c->response;
    return none;
  }

 private:
  using Impl = std::variant<ops::Identity, ops::Mask, ops::Downsample, ops::CircularConv, ops::Dense>;

  explicit LinearOperator(Impl impl) : impl_(std::move(impl)) {}

  static Eigen::Index wrap(Eigen::Index i, Eigen::Index n) { return ((i % n) + n) % n; }
  static double angle(Eigen::Index k, Eigen::Index n) {
    return 2.0 * std::numbers::pi * static_cast<double>(k % n) / static_cast<double>(n);
  }

  static Vector apply_impl(const ops::Identity&, const Vector& x) { return x; }
  static Vector adjoint_impl(const ops::Identity&, const Vector& u) { return u; }
  static Vector pinv_impl(const ops::Identity&, const Vector& u) { return u; }

  static Vector apply_impl(const ops::Mask& op, const Vector& x) {
    Vector y(static_cast<Eigen::Index>(op.keep.size()));
    for (std::size_t i = 0; i < op.keep.size(); ++i) y[static_cast<Eigen::Index>(i)] = x[op.keep[i]];
    return y;
  }
  static Vector adjoint_impl(const ops::Mask& op, const Vector& u) {
    Vector x = Vector::Zero(op.n);
    for (std::size_t i = 0; i < op.keep.size(); ++i) x[op.keep[i]] = u[static_cast<Eigen::Index>(i)];
    return x;
  }
  static Vector pinv_impl(const ops::Mask& op, const Vector& u) { return adjoint_impl(op, u); }

  static Vector apply_impl(const ops::Downsample& op, const Vector& x) {
    const Eigen::Index m = op.n / op.block;
    Vector y(m);
    for (Eigen::Index i = 0; i < m; ++i) y[i] = x.segment(i * op.block, op.block).mean();
    return y;
  }
  static Vector adjoint_impl(const ops::Downsample& op, const Vector& u) {
    Vector x(op.n);
    const double w = 1.0 / static_cast<double>(op.block);
    for (Eigen::Index i = 0; i < u.size(); ++i) x.segment(i * op.block, op.block).setConstant(w * u[i]);
    return x;
  }
  // Rows are orthogonal with squared norm 1/b, so A+ = b A^T.
  static Vector pinv_impl(const ops::Downsample& op, const Vector& u) {
    Vector x(op.n);
    for (Eigen::Index i = 0; i < u.size(); ++i) x.segment(i * op.block, op.block).setConstant(u[i]);
    return x;
  }

  static Vector apply_impl(const ops::CircularConv& op, const Vector& x) {
    const Eigen::Index n = op.n;
    const Eigen::Index center = op.kernel.size() / 2;
    Vector y = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Eigen::Index m = 0; m < op.kernel.size(); ++m) acc += op.kernel[m] * x[wrap(i - m + center, n)];
      y[i] = acc;
    }
    return y;
  }
  static Vector adjoint_impl(const ops::CircularConv& op, const Vector& u) {
    const Eigen::Index n = op.n;
    const Eigen::Index center = op.kernel.size() / 2;
    Vector x = Vector::Zero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      double acc = 0.0;
      for (Eigen::Index m = 0; m < op.kernel.size(); ++m) acc += op.kernel[m] * u[wrap(j + m - center, n)];
      x[j] = acc;
    }
    return x;
  }
  static Vector pinv_impl(const ops::CircularConv& op, const Vector& u) {
    const Eigen::Index n = op.n;
    Vector x = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) acc += op.pinv_column[wrap(i - j, n)] * u[j];
      x[i] = acc;
    }
    return x;
  }

  static Vector apply_impl(const ops::Dense& op, const Vector& x) { return op.matrix * x; }
  static Vector adjoint_impl(const ops::Dense& op, const Vector& u) { return op.matrix.transpose() * u; }
  static Vector pinv_impl(const ops::Dense& op, const Vector& u) { return op.pinv * u; }

  Impl impl_;
};

// Normalized Gaussian blur kernel of the given standard deviation, truncated at
// +-radius taps.
inline Vector gaussian_kernel(double stddev, Eigen::Index radius) {
  if (!(stddev > 0.0) || radius < 0) throw ConfigError("gaussian_kernel: stddev must be > 0 and radius >= 0");
  Vector k(2 * radius + 1);
  for (Eigen::Index i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (stddev * stddev));
  }
  return k / k.sum();
}

// Normalized 1-D box kernel (motion blur along the flattened axis).
inline Vector box_kernel(Eigen::Index length) {
  if (length < 1) throw ConfigError("box_kernel: length must be >= 1");
  return Vector::Constant(length, 1.0 / static_cast<double>(length));
}

// Observation y = A x0 + sigma_y eta.
struct Measurement {
  Vector y;
  double sigma_y = 0.0;
  std::shared_ptr<const LinearOperator> op;

  Measurement(Vector y_, double sigma, std::shared_ptr<const LinearOperator> op_)
      : y(std::move(y_)), sigma_y(sigma), op(std::move(op_)) {
    if (!op) throw ArgumentError("measurement: null operator");
    if (!(sigma_y >= 0.0)) throw ArgumentError("measurement: sigma_y must be >= 0");
    detail::require_dim(y.size(), op->out_dim(), "measurement");
  }

  const LinearOperator& A() const { return *op; }
};

inline Measurement measure(std::shared_ptr<const LinearOperator> op, const Vector& x0, double sigma_y,
                           RandomStream& rng) {
  if (!op) throw ArgumentError("measure: null operator");
  if (!(sigma_y >= 0.0)) throw ArgumentError("measure: sigma_y must be >= 0");
  Vector y = op->apply(x0);
  if (sigma_y > 0.0) y += sigma_y * rng.normal_vector(y.size());
  return Measurement(std::move(y), sigma_y, std::move(op));
}

}  // namespace dcs
