#pragma once

// Outer minimization: NAL, WRM, Gaussian-noise training, PGD adversarial
// training and natural training, all with plain minibatch SGD.
//
// Every method shares the same update path: build a set of update rows per
// instance, then take one SGD step on the mean loss of all rows. The methods
// differ only in how the rows are built, so the degenerate settings of NAL
// reproduce WRM and natural training bit for bit.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "nal/adversary.hpp"
#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/network.hpp"
#include "nal/objective.hpp"
#include "nal/rng.hpp"
#include "nal/smoothing.hpp"
#include "nal/tensor.hpp"

namespace nal {

enum class Method { nal, wrm, noise, pgd_at, natural };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::nal: return "nal";
    case Method::wrm: return "wrm";
    case Method::noise: return "noise";
    case Method::pgd_at: return "pgd_at";
    case Method::natural: return "natural";
  }
  return "?";
}

inline Method parse_method(std::string_view s) {
  if (s == "nal") return Method::nal;
  if (s == "wrm") return Method::wrm;
  if (s == "noise") return Method::noise;
  if (s == "pgd_at") return Method::pgd_at;
  if (s == "natural") return Method::natural;
  throw ParameterError("unknown training method '" + std::string(s) + "'");
}

struct TrainSpec {
  Method method = Method::natural;
  int epochs = 10;
  double eta2 = 0.1;
  std::size_t batch_size = 128;
  SurrogateSpec surrogate;       // nal, wrm
  double sigma = 0.0;            // nal, noise
  int r = 1;                     // nal, noise
  double attack_eps = 0.0;       // pgd_at
  int attack_steps = 10;         // pgd_at
  std::uint64_t seed = 0;
  int threads = 1;

  NoiseSpec noise() const { return NoiseSpec{sigma, r, derive_stream(seed, "train-noise", {})}; }

  void validate() const {
    if (epochs < 1) throw ParameterError("train.epochs must be >= 1");
    if (!(eta2 > 0.0) || !std::isfinite(eta2)) throw ParameterError("train.eta2 must be > 0");
    if (batch_size < 1) throw ParameterError("train.batch_size must be >= 1");
    if (threads < 1) throw ParameterError("threads must be >= 1");
    noise().validate();
    if (method == Method::nal || method == Method::wrm) surrogate.validate();
    if (method == Method::pgd_at) AttackSpec(attack_eps, attack_steps);
  }
};

struct EpochRecord {
  double surrogate_loss = 0.0;  // mean loss of the update rows
  double clean_loss = 0.0;      // mean loss on the clean batches, before each step
  double wall_seconds = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

struct TrainResult {
  Network net;
  TrainHistory history;
};

namespace detail {

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, "shuffle", {static_cast<std::uint64_t>(epoch)});
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

/// Rows point_i + z_ij (j < r_eff) with z from the stream (seed, tag, key_i).
inline Tensor noisy_rows(const Tensor& points, std::span<const std::uint64_t> keys, const NoiseSpec& ns,
                         std::string_view tag) {
  const std::size_t n = points.rows(), d = points.cols();
  const auto ru = static_cast<std::size_t>(ns.effective_r());
  if (ns.sigma == 0.0) return points;
  Tensor rows({n * ru, d});
  for (std::size_t i = 0; i < n; ++i) {
    auto rng = make_stream(ns.seed, tag, {keys[i]});
    auto p = points.row_span(i);
    for (std::size_t j = 0; j < ru; ++j) {
      auto row = rows.row_span(i * ru + j);
      for (std::size_t k = 0; k < d; ++k) row[k] = p[k] + ns.sigma * rng.normal();
    }
  }
  return rows;
}

}  // namespace detail

inline TrainResult train(const Network& net0, const Dataset& ds, const TrainSpec& ts) {
  ts.validate();
  ds.validate();
  if (ds.dim() != net0.input_dim()) throw DimensionError("train: dataset dimension does not match the network");
  if (ds.num_classes > static_cast<int>(net0.num_classes())) throw DimensionError("train: dataset has more classes than the network");

  TrainResult result{net0, {}};
  Network& net = result.net;
  const NoiseSpec ns = ts.noise();
  const std::size_t n = ds.size();

  for (int epoch = 0; epoch < ts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = detail::epoch_order(n, ts.seed, epoch);
    double surrogate_sum = 0.0, clean_sum = 0.0;
    int batch_index = 0;
    for (std::size_t b = 0; b < n; b += ts.batch_size, ++batch_index) {
      const std::size_t e = std::min(n, b + ts.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(e));
      const Dataset batch = ds.select(idx);
      const std::size_t nb = batch.size();
      std::vector<std::uint64_t> keys(nb);
      for (std::size_t i = 0; i < nb; ++i) keys[i] = static_cast<std::uint64_t>(epoch) * n + idx[i];

      try {
        Tensor points = batch.inputs;
        NoiseSpec update_noise{0.0, 1, ns.seed};
        switch (ts.method) {
          case Method::natural:
            break;
          case Method::noise:
            update_noise = ns;
            break;
          case Method::nal:
          case Method::wrm: {
            const NoiseSpec inner = ts.method == Method::nal ? ns : NoiseSpec{0.0, 1, ns.seed};
            if (ts.surrogate.K > 0 || ts.surrogate.start_mode != StartMode::clean) {
              auto res = inner_maximize_batch(NetworkLoss(net), batch.inputs, batch.labels, keys, ts.surrogate,
                                              inner, {.evaluate_final = false, .threads = ts.threads});
              for (std::size_t i = 0; i < nb; ++i) {
                auto dst = points.row_span(i);
                auto src = res[i].x_adv.data();
                std::copy(src.begin(), src.end(), dst.begin());
              }
            }
            update_noise = inner;
            break;
          }
          case Method::pgd_at:
            points = pgd_attack_batch(NetworkLoss(net), batch.inputs, batch.labels,
                                      AttackSpec(ts.attack_eps, ts.attack_steps), {}, {}, ts.threads);
            break;
        }

        const Tensor rows = detail::noisy_rows(points, keys, update_noise, "update");
        const auto ru = rows.rows() / nb;
        std::vector<int> row_labels(rows.rows());
        for (std::size_t i = 0; i < nb; ++i)
          for (std::size_t j = 0; j < ru; ++j) row_labels[i * ru + j] = batch.labels[i];

        Trace trace;
        Tensor logits = forward(net, rows, &trace, ts.threads);
        const auto losses = row_losses(logits, row_labels);
        double batch_loss = 0.0;
        for (double v : losses) batch_loss += v;
        batch_loss /= static_cast<double>(losses.size());

        double clean_loss = batch_loss;
        if (ts.method != Method::natural) {
          const auto clean = row_losses(forward(net, batch.inputs, nullptr, ts.threads), batch.labels);
          clean_loss = 0.0;
          for (double v : clean) clean_loss += v;
          clean_loss /= static_cast<double>(clean.size());
        }
        if (!std::isfinite(batch_loss) || !std::isfinite(clean_loss)) throw TrainingDivergenceError(epoch, batch_index);

        GradPair g = backward_ce(net, trace, row_labels, GradTarget::theta, ts.threads);
        sgd_step(net, g.grad_theta, ts.eta2);
        for (const auto& l : net.layers()) {
          if (!l.weight.all_finite() || !l.bias.all_finite()) throw TrainingDivergenceError(epoch, batch_index);
        }
        surrogate_sum += batch_loss * static_cast<double>(nb);
        clean_sum += clean_loss * static_cast<double>(nb);
      } catch (const NonFiniteError&) {
        throw TrainingDivergenceError(epoch, batch_index);
      }
    }
    EpochRecord rec;
    rec.surrogate_loss = surrogate_sum / static_cast<double>(n);
    rec.clean_loss = clean_sum / static_cast<double>(n);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
  }
  return result;
}

struct EvalResult {
  double clean_acc = 0.0;
  double robust_acc = 0.0;  // correct on both the clean and the attacked input
  std::size_t count = 0;
};

/// Predicted class of each row: the plain argmax, or with test noise the
/// majority over ns.r draws from the stream (seed, "test-noise", key, slot).
inline std::vector<int> predict_rows(const Network& net, const Tensor& x, const std::optional<NoiseSpec>& test_noise,
                                     std::span<const std::uint64_t> keys, std::uint64_t slot, int threads = 1) {
  std::vector<int> pred(x.rows());
  if (!test_noise || test_noise->sigma == 0.0) {
    Tensor logits = forward(net, x, nullptr, threads);
    for (std::size_t i = 0; i < x.rows(); ++i) pred[i] = argmax(logits.row_span(i));
    return pred;
  }
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto rng = make_stream(test_noise->seed, "test-noise", {keys[i], slot});
    auto counts = smoothed_predict(net, x.row_span(i), test_noise->sigma, test_noise->r, rng, threads);
    pred[i] = argmax(std::vector<double>(counts.begin(), counts.end()));
  }
  return pred;
}

inline EvalResult evaluate(const Network& net, const Dataset& ds, const std::optional<AttackSpec>& attack = {},
                           const std::optional<NoiseSpec>& test_noise = {}, int threads = 1) {
  ds.validate();
  if (ds.dim() != net.input_dim()) throw DimensionError("evaluate: dataset dimension mismatch");
  if (test_noise) test_noise->validate();
  constexpr std::size_t kBatch = 256;
  std::size_t clean = 0, robust = 0;
  for (std::size_t b = 0; b < ds.size(); b += kBatch) {
    const std::size_t e = std::min(ds.size(), b + kBatch);
    Tensor x0 = ds.rows(b, e);
    std::span<const int> y(ds.labels.data() + b, e - b);
    std::vector<std::uint64_t> keys(e - b);
    std::iota(keys.begin(), keys.end(), static_cast<std::uint64_t>(b));
    const auto pc = predict_rows(net, x0, test_noise, keys, 0, threads);
    std::vector<int> pa = pc;
    if (attack) {
      Tensor adv = pgd_attack_batch(NetworkLoss(net), x0, y, *attack, {}, {}, threads);
      pa = predict_rows(net, adv, test_noise, keys, 1, threads);
    }
    for (std::size_t i = 0; i < y.size(); ++i) {
      clean += pc[i] == y[i];
      robust += pc[i] == y[i] && pa[i] == y[i];
    }
  }
  EvalResult r;
  r.count = ds.size();
  r.clean_acc = static_cast<double>(clean) / static_cast<double>(ds.size());
  r.robust_acc = static_cast<double>(robust) / static_cast<double>(ds.size());
  return r;
}

}  // namespace nal
