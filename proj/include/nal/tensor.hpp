#pragma once

// Dense row-major tensors of doubles and the handful of kernels the rest of
// the library is built on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nal/error.hpp"
#include "nal/rng.hpp"

namespace nal {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
    require_finite("Tensor");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  /// Row vector [1 x n] from values.
  static Tensor row(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return rank() == 0 ? 0 : shape_[0]; }
  /// Product of all trailing dimensions.
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return std::span<double>(data_).subspan(r * cols(), cols()); }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols(), cols());
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  void require_finite(const char* op) const {
    if (!all_finite()) throw NonFiniteError(std::string(op) + ": non-finite entry in tensor " + shape_string(shape_));
  }

  bool operator==(const Tensor&) const = default;

 private:
  void validate_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

namespace kernels {

// c[m x n] = a[m x k] * b[k x n]; c is overwritten. Each output row depends
// only on the matching row of a, so row blocks can be computed independently
// with bit-identical results.
inline void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c.data() + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// t[n x m] = a[m x n]^T.
inline void transpose(std::span<const double> a, std::span<double> t, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
}

// c[k x n] += a[m x k]^T * b[m x n], accumulated in row order of a.
inline void gemm_tn_accumulate(std::span<const double> a, std::span<const double> b, std::span<double> c,
                               std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    const double* bi = b.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* cp = c.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernels

/// Standard matrix product of two rank-2 tensors.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw DimensionError("matmul expects rank-2 tensors");
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul inner dimensions differ: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor c({m, n});
  kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  c.require_finite("matmul");
  return c;
}

/// I.i.d. N(0, sigma^2) entries drawn from rng in row-major order.
inline Tensor gaussian(RngStream& rng, const Shape& shape, double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("gaussian: sigma must be finite and >= 0");
  Tensor t(shape);
  if (sigma == 0.0) return t;
  for (double& v : t.data()) v = sigma * rng.normal();
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> x) { return std::sqrt(dot(x, x)); }
inline double l2_norm(const Tensor& x) { return l2_norm(x.data()); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// alpha * x + y.
inline Tensor axpy(double alpha, const Tensor& x, const Tensor& y) {
  if (x.shape() != y.shape()) {
    throw DimensionError("axpy shape mismatch: " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  Tensor out = y;
  auto o = out.data();
  auto xs = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += alpha * xs[i];
  out.require_finite("axpy");
  return out;
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ParameterError("clamp: lo > hi");
  Tensor out = x;
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return out;
}

}  // namespace nal
