#pragma once

// Gaussian smoothing: Monte-Carlo smoothed loss and its gradient, and the
// smoothed (majority-vote) prediction used at inference time.
//
// With sigma = 0 every draw is identical, so a single evaluation is used
// regardless of r; this makes the noiseless cases exact.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "nal/error.hpp"
#include "nal/network.hpp"
#include "nal/objective.hpp"
#include "nal/rng.hpp"
#include "nal/tensor.hpp"

namespace nal {

struct NoiseSpec {
  double sigma = 0.0;
  int r = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ParameterError("noise sigma must be finite and >= 0");
    if (r < 1) throw ParameterError("noise sample count r must be >= 1");
  }
  /// Draws actually taken per estimate.
  int effective_r() const { return sigma == 0.0 ? 1 : r; }
};

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// Mean and standard error (sample std / sqrt(n)) of values; std_error is 0
/// for a single value.
inline Estimate mean_and_se(std::span<const double> v) {
  Estimate e;
  if (v.empty()) return e;
  double s = 0.0;
  for (double x : v) s += x;
  e.value = s / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - e.value) * (x - e.value);
    e.std_error = std::sqrt(ss / static_cast<double>(v.size() - 1)) / std::sqrt(static_cast<double>(v.size()));
  }
  return e;
}

/// Rows x + z_j for j < count, z_j ~ N(0, sigma^2 I) drawn from rng. x is a
/// flat point of dimension d. With sigma = 0 the rows are exact copies.
inline Tensor noisy_copies(std::span<const double> x, int count, double sigma, RngStream& rng) {
  const std::size_t d = x.size();
  Tensor rows({static_cast<std::size_t>(count), d});
  for (int j = 0; j < count; ++j) {
    auto row = rows.row_span(static_cast<std::size_t>(j));
    if (sigma == 0.0) {
      std::copy(x.begin(), x.end(), row.begin());
    } else {
      for (std::size_t k = 0; k < d; ++k) row[k] = x[k] + sigma * rng.normal();
    }
  }
  return rows;
}

/// E_Z[loss(x + z)] by r Monte-Carlo draws from the stream
/// (seed, "smoothed-loss", instance).
template <InputLoss L>
Estimate smoothed_loss(const L& loss, std::span<const double> x, int label, const NoiseSpec& ns,
                       std::uint64_t instance = 0) {
  ns.validate();
  if (x.size() != loss.input_dim()) throw DimensionError("smoothed_loss: input dimension mismatch");
  auto rng = make_stream(ns.seed, "smoothed-loss", {instance});
  const int r = ns.effective_r();
  Tensor rows = noisy_copies(x, r, ns.sigma, rng);
  std::vector<int> labels(static_cast<std::size_t>(r), label);
  auto out = loss.evaluate(rows, labels, false, 1);
  return mean_and_se(out.values);
}

inline Estimate smoothed_loss(const Network& net, std::span<const double> x, int label, const NoiseSpec& ns,
                              std::uint64_t instance = 0) {
  return smoothed_loss(NetworkLoss(net), x, label, ns, instance);
}

/// Exact gradient (parameters and input) of the r-sample average
/// (1/r) sum_j loss(x + z_j) for the given frozen noise rows z [r x d].
inline GradPair smoothed_loss_grad_frozen(const Network& net, std::span<const double> x, int label,
                                          const Tensor& noise) {
  if (noise.rank() != 2 || noise.cols() != x.size()) throw DimensionError("frozen noise must be [r x d]");
  Tensor rows = noise;
  for (std::size_t j = 0; j < rows.rows(); ++j) {
    auto row = rows.row_span(j);
    for (std::size_t k = 0; k < x.size(); ++k) row[k] += x[k];
  }
  Trace trace;
  forward(net, rows, &trace);
  std::vector<int> labels(rows.rows(), label);
  GradPair g = backward_ce(net, trace, labels, GradTarget::both);
  // d/dx of the average: sum the per-row input gradients of the mean loss
  Tensor gx({1, x.size()});
  for (std::size_t j = 0; j < rows.rows(); ++j)
    for (std::size_t k = 0; k < x.size(); ++k) gx[k] += g.grad_x(j, k);
  g.grad_x = std::move(gx);
  return g;
}

/// Gradient of the r-sample smoothed loss with noise drawn from the stream
/// (seed, "smoothed-loss", instance), i.e. the same draws smoothed_loss uses.
inline GradPair smoothed_loss_grad(const Network& net, std::span<const double> x, int label, const NoiseSpec& ns,
                                   std::uint64_t instance = 0) {
  ns.validate();
  if (x.size() != net.input_dim()) throw DimensionError("smoothed_loss_grad: input dimension mismatch");
  auto rng = make_stream(ns.seed, "smoothed-loss", {instance});
  const int r = ns.effective_r();
  Tensor noise = noisy_copies(std::vector<double>(x.size(), 0.0), r, ns.sigma, rng);
  return smoothed_loss_grad_frozen(net, x, label, noise);
}

/// Class counts of argmax f(x + z) over n draws (ties to the lowest index).
inline std::vector<int> smoothed_predict(const Network& net, std::span<const double> x, double sigma, int n,
                                         RngStream& rng, int threads = 1) {
  if (n < 1) throw ParameterError("smoothed_predict: n must be >= 1");
  if (!(sigma >= 0.0)) throw ParameterError("smoothed_predict: sigma must be >= 0");
  if (x.size() != net.input_dim()) throw DimensionError("smoothed_predict: input dimension mismatch");
  std::vector<int> counts(net.num_classes(), 0);
  constexpr int kChunk = 500;
  if (sigma == 0.0) {
    Tensor row({1, x.size()}, std::vector<double>(x.begin(), x.end()));
    counts[static_cast<std::size_t>(argmax(forward(net, row, nullptr).row_span(0)))] = n;
    return counts;
  }
  for (int done = 0; done < n; done += kChunk) {
    const int m = std::min(kChunk, n - done);
    Tensor rows = noisy_copies(x, m, sigma, rng);
    Tensor logits = forward(net, rows, nullptr, threads);
    for (std::size_t i = 0; i < logits.rows(); ++i) ++counts[static_cast<std::size_t>(argmax(logits.row_span(i)))];
  }
  return counts;
}

}  // namespace nal
