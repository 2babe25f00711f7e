#pragma once

// Brute-force ground truth for the verification suite: toy losses with known
// bounds, grid maximization, Gauss-Hermite smoothing, finite differences and
// an exhaustive binomial bound. None of these reuse the code they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "nal/error.hpp"
#include "nal/objective.hpp"
#include "nal/tensor.hpp"

namespace nal::oracle {

using Point = std::vector<double>;
using Objective = std::function<double(std::span<const double>)>;

enum class ToyKind { bounded_bump, concave_quadratic, linear };

/// bounded_bump:      M * exp(-||x - c_y||^2 / scale^2), clamped to [0, M]
/// concave_quadratic: -||x - c_y||^2 / (2 * scale)
/// linear:            w . x   (w = centers[0])
/// c_y is centers[label % centers.size()], so one center serves every label.
struct ToyLoss {
  ToyKind kind = ToyKind::bounded_bump;
  std::vector<Point> centers;
  double scale = 1.0;
  double M = 1.0;

  static ToyLoss bump(std::vector<Point> centers, double scale, double M = 1.0) {
    return {ToyKind::bounded_bump, std::move(centers), scale, M};
  }
  static ToyLoss concave_quadratic(Point center, double scale = 1.0) {
    return {ToyKind::concave_quadratic, {std::move(center)}, scale, 0.0};
  }
  static ToyLoss linear(Point w) { return {ToyKind::linear, {std::move(w)}, 1.0, 0.0}; }

  std::size_t input_dim() const { return centers.front().size(); }

  const Point& center(int label) const {
    return centers[static_cast<std::size_t>(label) % centers.size()];
  }

  double value(std::span<const double> x, int label = 0) const {
    const Point& c = center(label);
    double s = 0.0;
    switch (kind) {
      case ToyKind::bounded_bump:
        for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - c[k]) * (x[k] - c[k]);
        return std::clamp(M * std::exp(-s / (scale * scale)), 0.0, M);
      case ToyKind::concave_quadratic:
        for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - c[k]) * (x[k] - c[k]);
        return -s / (2.0 * scale);
      case ToyKind::linear:
        for (std::size_t k = 0; k < x.size(); ++k) s += c[k] * x[k];
        return s;
    }
    return 0.0;
  }

  void gradient(std::span<const double> x, int label, std::span<double> g) const {
    const Point& c = center(label);
    switch (kind) {
      case ToyKind::bounded_bump: {
        const double v = value(x, label);
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = -2.0 * (x[k] - c[k]) / (scale * scale) * v;
        return;
      }
      case ToyKind::concave_quadratic:
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = -(x[k] - c[k]) / scale;
        return;
      case ToyKind::linear:
        for (std::size_t k = 0; k < x.size(); ++k) g[k] = c[k];
        return;
    }
  }

  Point gradient(std::span<const double> x, int label = 0) const {
    Point g(x.size());
    gradient(x, label, g);
    return g;
  }

  BatchLoss evaluate(const Tensor& x, std::span<const int> labels, bool want_grad, int /*threads*/) const {
    if (x.rank() != 2 || x.cols() != input_dim()) throw DimensionError("toy loss: input dimension mismatch");
    if (labels.size() != x.rows()) throw DimensionError("toy loss: label count mismatch");
    BatchLoss out;
    out.values.resize(x.rows());
    if (want_grad) out.grad_x = Tensor({x.rows(), x.cols()});
    for (std::size_t i = 0; i < x.rows(); ++i) {
      out.values[i] = value(x.row_span(i), labels[i]);
      if (want_grad) gradient(x.row_span(i), labels[i], out.grad_x.row_span(i));
    }
    return out;
  }
};

static_assert(InputLoss<ToyLoss>);

// ---------------------------------------------------------------------------

struct GridResult {
  Point x;
  double value = -INFINITY;
};

namespace detail {

inline void check_low_dim(std::size_t d, const char* who) {
  if (d < 1 || d > 2) throw DimensionError(std::string(who) + ": only d in {1, 2} is supported");
}

/// Best point of a (2*half + 1)^d lattice of spacing h centered at c.
inline GridResult lattice_max(const Objective& f, const Point& c, double h, int half) {
  GridResult best;
  Point x = c;
  const std::size_t d = c.size();
  for (int i = -half; i <= half; ++i) {
    x[0] = c[0] + i * h;
    if (d == 1) {
      const double v = f(x);
      if (v > best.value) best = {x, v};
      continue;
    }
    for (int j = -half; j <= half; ++j) {
      x[1] = c[1] + j * h;
      const double v = f(x);
      if (v > best.value) best = {x, v};
    }
  }
  return best;
}

}  // namespace detail

/// Exhaustive maximization over the cube of half-width radius around x0 with
/// `resolution` cells per axis, then a 10x finer pass around the best cell.
inline GridResult grid_maximize(const Objective& f, const Point& x0, double radius, int resolution = 200) {
  detail::check_low_dim(x0.size(), "grid_maximize");
  if (resolution < 100) throw ParameterError("grid_maximize: resolution must be >= 100");
  if (!(radius > 0.0)) throw ParameterError("grid_maximize: radius must be > 0");
  const int half = resolution / 2;
  const double h = radius / half;
  GridResult coarse = detail::lattice_max(f, x0, h, half);
  GridResult fine = detail::lattice_max(f, coarse.x, h / 10.0, 10);
  return fine.value >= coarse.value ? fine : coarse;
}

/// Gauss-Hermite rule for weight exp(-t^2), built by Golub-Welsch.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussHermite(int order) {
    if (order < 1) throw ParameterError("Gauss-Hermite order must be >= 1");
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
    for (int k = 1; k < order; ++k) J(k - 1, k) = J(k, k - 1) = std::sqrt(k / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
    for (int k = 0; k < order; ++k) {
      nodes.push_back(es.eigenvalues()(k));
      const double v = es.eigenvectors()(0, k);
      weights.push_back(std::sqrt(std::numbers::pi) * v * v);
    }
  }
};

/// E_Z[f(x + z)], z ~ N(0, sigma^2 I), by a tensor-product Gauss-Hermite rule
/// with z = sqrt(2) * sigma * t.
inline double quadrature_smoothed(const Objective& f, const Point& x, double sigma, const GaussHermite& rule) {
  detail::check_low_dim(x.size(), "quadrature_smoothed");
  if (sigma == 0.0) return f(x);
  const double s = std::numbers::sqrt2 * sigma;
  const double norm = std::pow(std::numbers::pi, -0.5 * static_cast<double>(x.size()));
  Point p = x;
  double acc = 0.0;
  const std::size_t q = rule.nodes.size();
  for (std::size_t i = 0; i < q; ++i) {
    p[0] = x[0] + s * rule.nodes[i];
    if (x.size() == 1) {
      acc += rule.weights[i] * f(p);
      continue;
    }
    for (std::size_t j = 0; j < q; ++j) {
      p[1] = x[1] + s * rule.nodes[j];
      acc += rule.weights[i] * rule.weights[j] * f(p);
    }
  }
  return acc * norm;
}

inline double quadrature_smoothed(const Objective& f, const Point& x, double sigma, int order = 40) {
  if (order < 20) throw ParameterError("quadrature_smoothed: order must be >= 20");
  return quadrature_smoothed(f, x, sigma, GaussHermite(order));
}

inline void check_step(double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw ParameterError("finite differences need h in [1e-7, 1e-3]");
}

inline Point finite_diff_grad(const Objective& f, const Point& x, double h = 1e-5) {
  check_step(h);
  Point g(x.size()), p = x;
  for (std::size_t k = 0; k < x.size(); ++k) {
    p[k] = x[k] + h;
    const double up = f(p);
    p[k] = x[k] - h;
    const double down = f(p);
    p[k] = x[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Central-difference Hessian, symmetrized; row-major d x d.
inline std::vector<double> finite_diff_hessian(const Objective& f, const Point& x, double h = 1e-4) {
  check_step(h);
  const std::size_t d = x.size();
  std::vector<double> H(d * d);
  Point p = x;
  auto at = [&](std::size_t i, double di, std::size_t j, double dj) {
    p = x;
    p[i] += di;
    p[j] += dj;
    return f(p);
  };
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      H[i * d + j] = (at(i, h, j, h) - at(i, h, j, -h) - at(i, -h, j, h) + at(i, -h, j, -h)) / (4.0 * h * h);
    }
  }
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) H[i * d + j] = H[j * d + i] = 0.5 * (H[i * d + j] + H[j * d + i]);
  return H;
}

/// Largest eigenvalue of a symmetric 1x1 or 2x2 matrix.
inline double max_eigenvalue(const std::vector<double>& H) {
  if (H.size() == 1) return H[0];
  if (H.size() != 4) throw DimensionError("max_eigenvalue: only 1x1 and 2x2 matrices");
  const double a = H[0], b = H[1], c = H[3];
  return 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
}

/// P_p(X >= k) for X ~ Binomial(n, p) by direct summation of the pmf.
inline double binomial_upper_tail(std::int64_t k, std::int64_t n, double p) {
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return 1.0;
  double s = 0.0;
  for (std::int64_t i = k; i <= n; ++i) {
    const double log_pmf = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) - std::lgamma(n - i + 1.0) +
                           i * std::log(p) + (n - i) * std::log1p(-p);
    s += std::exp(log_pmf);
  }
  return s;
}

/// Lower confidence bound by bisection on the binomial tail sum.
inline double binomial_lower_brute(std::int64_t k, std::int64_t n, double alpha) {
  if (n > 2000) throw ParameterError("binomial_lower_brute: n must be <= 2000");
  if (n < 1 || k < 0 || k > n) throw ParameterError("binomial_lower_brute: need 0 <= k <= n");
  if (k == 0) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (binomial_upper_tail(k, n, mid) < alpha) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Standard normal CDF quantile by bisection on erfc.
inline double normal_quantile_bisect(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("normal_quantile_bisect: p must lie in (0, 1)");
  double lo = -40.0, hi = 40.0;
  const bool upper = p > 0.5;
  for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
    const double mid = 0.5 * (lo + hi);
    const bool below = upper ? 0.5 * std::erfc(mid / std::numbers::sqrt2) > 1.0 - p
                             : 0.5 * std::erfc(-mid / std::numbers::sqrt2) < p;
    if (below) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace nal::oracle
