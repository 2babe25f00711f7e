#pragma once

// Inner maximization of the noisy Lagrangian surrogate and the l2 attacks.
//
// For an instance x0 the inner problem is
//   sup_x  E_Z[ loss(x + z) - gamma * ||x + z - x0||^2 ],   z ~ N(0, sigma^2 I),
// approximated by K steps of unprojected gradient ascent with r fresh noise
// draws per step. Every instance owns the noise stream
// (seed, "inner", instance_key), so results do not depend on how instances
// are batched or threaded.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/network.hpp"
#include "nal/objective.hpp"
#include "nal/rng.hpp"
#include "nal/smoothing.hpp"
#include "nal/tensor.hpp"

namespace nal {

/// noisy: gradient of c(x + z, x0) per draw (literal reading of the ascent);
/// clean: gradient of c(x, x0). Both agree in expectation.
enum class CostMode { noisy, clean };
enum class StartMode { clean, random_ball };

inline std::string_view to_string(CostMode m) { return m == CostMode::noisy ? "noisy" : "clean"; }
inline std::string_view to_string(StartMode m) { return m == StartMode::clean ? "clean" : "random-ball"; }

struct SurrogateSpec {
  double gamma = 1.5;
  int K = 4;
  double eta1 = 0.5 / 1.5;
  CostMode cost_mode = CostMode::noisy;
  StartMode start_mode = StartMode::clean;
  double start_radius = 0.0;
  bool clamp_unit_box = false;

  /// eta1 = 0.5 / gamma, the usual step for this penalty.
  static SurrogateSpec with_default_step(double gamma, int K) {
    SurrogateSpec s;
    s.gamma = gamma;
    s.K = K;
    s.eta1 = gamma > 0.0 ? 0.5 / gamma : 0.1;
    return s;
  }

  void validate() const {
    if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ParameterError("surrogate gamma must be >= 0");
    if (K < 0) throw ParameterError("surrogate K must be >= 0");
    if (!(eta1 > 0.0) || !std::isfinite(eta1)) throw ParameterError("surrogate eta1 must be > 0");
    if (start_mode == StartMode::random_ball && !(start_radius > 0.0)) {
      throw ParameterError("random-ball start needs a positive radius");
    }
  }
};

struct AttackSpec {
  double epsilon = 0.0;
  int k_pgd = 1;
  double eta = 0.0;  // always 2 * epsilon / k_pgd

  AttackSpec() = default;
  AttackSpec(double eps, int steps) : epsilon(eps), k_pgd(steps), eta(2.0 * eps / steps) { validate(); }

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ParameterError("attack epsilon must be > 0");
    if (k_pgd < 1) throw ParameterError("attack needs k_pgd >= 1");
    if (eta != 2.0 * epsilon / k_pgd) throw ParameterError("attack step must equal 2*epsilon/k_pgd");
  }
};

struct SurrogateResult {
  Tensor x_adv;                      // [1 x d]
  double phi_estimate = 0.0;         // r-sample objective at x_K (clean mode: cost at x_K itself)
  double phi_std_error = 0.0;
  std::vector<double> ascent_trace;  // objective at x_0 .. x_K (K + 1 entries)
  double transport_cost = 0.0;       // r-sample mean of c(x_K + z, x0)
  double loss_estimate = 0.0;        // r-sample mean of loss(x_K + z)
};

struct InnerOptions {
  bool evaluate_final = true;  // draw fresh noise at x_K and fill phi/cost/loss
  int threads = 1;
};

namespace detail {

inline void random_ball_start(std::span<double> x, double radius, RngStream& rng) {
  std::vector<double> dir(x.size());
  for (double& v : dir) v = rng.normal();
  const double norm = l2_norm(dir);
  const double scale = norm > 0.0 ? radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(x.size())) / norm : 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) x[k] += scale * dir[k];
}

}  // namespace detail

/// Inner maximization for a batch of instances x0 [n x d]. instance_keys
/// selects each instance's noise stream.
template <InputLoss L>
std::vector<SurrogateResult> inner_maximize_batch(const L& loss, const Tensor& x0, std::span<const int> labels,
                                                  std::span<const std::uint64_t> instance_keys,
                                                  const SurrogateSpec& ss, const NoiseSpec& ns,
                                                  InnerOptions opt = {}) {
  ss.validate();
  ns.validate();
  if (x0.rank() != 2 || x0.cols() != loss.input_dim()) throw DimensionError("inner_maximize: input dimension mismatch");
  const std::size_t n = x0.rows(), d = x0.cols();
  if (labels.size() != n || instance_keys.size() != n) throw DimensionError("inner_maximize: label/key count mismatch");
  const int r = ns.effective_r();
  const auto ru = static_cast<std::size_t>(r);

  std::vector<RngStream> streams;
  streams.reserve(n);
  for (std::size_t i = 0; i < n; ++i) streams.push_back(make_stream(ns.seed, "inner", {instance_keys[i]}));

  Tensor x = x0;
  if (ss.start_mode == StartMode::random_ball) {
    for (std::size_t i = 0; i < n; ++i) {
      auto start_rng = make_stream(ns.seed, "inner-start", {instance_keys[i]});
      detail::random_ball_start(x.row_span(i), ss.start_radius, start_rng);
    }
  }

  std::vector<int> row_labels(n * ru);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < ru; ++j) row_labels[i * ru + j] = labels[i];

  std::vector<SurrogateResult> results(n);
  for (auto& res : results) res.ascent_trace.reserve(static_cast<std::size_t>(ss.K) + 1);

  // Rows x_k^i + z_kij for all instances, instance-major.
  auto draw_rows = [&](Tensor& rows) {
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row_span(i);
      for (std::size_t j = 0; j < ru; ++j) {
        auto row = rows.row_span(i * ru + j);
        if (ns.sigma == 0.0) {
          std::copy(xi.begin(), xi.end(), row.begin());
        } else {
          for (std::size_t k = 0; k < d; ++k) row[k] = xi[k] + ns.sigma * streams[i].normal();
        }
      }
    }
  };

  Tensor rows({n * ru, d});
  for (int k = 0; k < ss.K; ++k) {
    draw_rows(rows);
    BatchLoss out = loss.evaluate(rows, row_labels, true, opt.threads);
    for (std::size_t i = 0; i < n; ++i) {
      auto xi = x.row_span(i);
      auto x0i = x0.row_span(i);
      std::vector<double> step(d, 0.0);
      const double clean_cost = squared_distance(xi, x0i);
      double objective = 0.0;
      for (std::size_t j = 0; j < ru; ++j) {
        const std::size_t row = i * ru + j;
        auto s = rows.row_span(row);
        auto g = out.grad_x.row_span(row);
        objective += out.values[row] - ss.gamma * (ss.cost_mode == CostMode::noisy ? squared_distance(s, x0i) : clean_cost);
        if (ss.cost_mode == CostMode::noisy) {
          for (std::size_t c = 0; c < d; ++c) step[c] += g[c] - ss.gamma * 2.0 * (s[c] - x0i[c]);
        } else {
          for (std::size_t c = 0; c < d; ++c) step[c] += g[c];
        }
      }
      results[i].ascent_trace.push_back(objective / static_cast<double>(r));
      for (std::size_t c = 0; c < d; ++c) {
        double delta = step[c] / static_cast<double>(r);
        if (ss.cost_mode == CostMode::clean) delta -= ss.gamma * 2.0 * (xi[c] - x0i[c]);
        double next = xi[c] + ss.eta1 * delta;
        if (ss.clamp_unit_box) next = std::clamp(next, 0.0, 1.0);
        if (!std::isfinite(next)) throw AscentDivergenceError(k, "non-finite iterate");
        xi[c] = next;
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) results[i].x_adv = Tensor({1, d}, std::vector<double>(x.row_span(i).begin(), x.row_span(i).end()));

  if (opt.evaluate_final) {
    draw_rows(rows);
    BatchLoss out = loss.evaluate(rows, row_labels, false, opt.threads);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> phi(ru), cost(ru), lv(ru);
      const double clean_cost = squared_distance(x.row_span(i), x0.row_span(i));
      for (std::size_t j = 0; j < ru; ++j) {
        const std::size_t row = i * ru + j;
        cost[j] = squared_distance(rows.row_span(row), x0.row_span(i));
        lv[j] = out.values[row];
        phi[j] = lv[j] - ss.gamma * (ss.cost_mode == CostMode::noisy ? cost[j] : clean_cost);
      }
      const Estimate p = mean_and_se(phi);
      results[i].phi_estimate = p.value;
      results[i].phi_std_error = p.std_error;
      results[i].transport_cost = mean_and_se(cost).value;
      results[i].loss_estimate = mean_and_se(lv).value;
      results[i].ascent_trace.push_back(p.value);
    }
  }
  return results;
}

/// Single-instance inner maximization; x0 is a flat point.
template <InputLoss L>
SurrogateResult inner_maximize(const L& loss, std::span<const double> x0, int label, const SurrogateSpec& ss,
                               const NoiseSpec& ns, std::uint64_t instance_key = 0) {
  Tensor batch({1, x0.size()}, std::vector<double>(x0.begin(), x0.end()));
  const int labels[1] = {label};
  const std::uint64_t keys[1] = {instance_key};
  return inner_maximize_batch(loss, batch, labels, keys, ss, ns).front();
}

inline SurrogateResult inner_maximize(const Network& net, std::span<const double> x0, int label,
                                      const SurrogateSpec& ss, const NoiseSpec& ns, std::uint64_t instance_key = 0) {
  return inner_maximize(NetworkLoss(net), x0, label, ss, ns, instance_key);
}

/// The noiseless ascent: inner_maximize with z = 0 and r = 1.
template <InputLoss L>
SurrogateResult wrm_inner(const L& loss, std::span<const double> x0, int label, double gamma, int K, double eta1,
                          std::uint64_t instance_key = 0) {
  SurrogateSpec ss;
  ss.gamma = gamma;
  ss.K = K;
  ss.eta1 = eta1;
  return inner_maximize(loss, x0, label, ss, NoiseSpec{0.0, 1, 0}, instance_key);
}

inline SurrogateResult wrm_inner(const Network& net, std::span<const double> x0, int label, double gamma, int K,
                                 double eta1, std::uint64_t instance_key = 0) {
  return wrm_inner(NetworkLoss(net), x0, label, gamma, K, eta1, instance_key);
}

// ---------------------------------------------------------------------------
// l2 PGD

/// K steps of normalized-gradient ascent, each followed by projection onto
/// the l2 ball of radius epsilon around x0. With a noise spec of sigma > 0
/// the gradient is averaged over r fresh draws per step (stream
/// (seed, "pgd", key)). A zero gradient skips the step.
template <InputLoss L>
Tensor pgd_attack_batch(const L& loss, const Tensor& x0, std::span<const int> labels, const AttackSpec& as,
                        const NoiseSpec& ns = {}, std::span<const std::uint64_t> keys = {}, int threads = 1) {
  as.validate();
  ns.validate();
  if (x0.rank() != 2 || x0.cols() != loss.input_dim()) throw DimensionError("pgd_attack: input dimension mismatch");
  const std::size_t n = x0.rows(), d = x0.cols();
  if (labels.size() != n) throw DimensionError("pgd_attack: label count mismatch");
  const int r = ns.effective_r();
  const auto ru = static_cast<std::size_t>(r);
  std::vector<RngStream> streams;
  if (ns.sigma > 0.0) {
    if (keys.size() != n) throw DimensionError("pgd_attack: noisy attack needs one key per instance");
    for (std::size_t i = 0; i < n; ++i) streams.push_back(make_stream(ns.seed, "pgd", {keys[i]}));
  }
  std::vector<int> row_labels(n * ru);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < ru; ++j) row_labels[i * ru + j] = labels[i];

  Tensor x = x0;
  Tensor rows({n * ru, d});
  for (int step = 0; step < as.k_pgd; ++step) {
    const Tensor* eval = &x;
    if (ns.sigma > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        auto xi = x.row_span(i);
        for (std::size_t j = 0; j < ru; ++j) {
          auto row = rows.row_span(i * ru + j);
          for (std::size_t k = 0; k < d; ++k) row[k] = xi[k] + ns.sigma * streams[i].normal();
        }
      }
      eval = &rows;
    }
    BatchLoss out = loss.evaluate(*eval, ns.sigma > 0.0 ? std::span<const int>(row_labels) : labels, true, threads);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> g(d, 0.0);
      for (std::size_t j = 0; j < (ns.sigma > 0.0 ? ru : 1); ++j) {
        auto gr = out.grad_x.row_span(ns.sigma > 0.0 ? i * ru + j : i);
        for (std::size_t k = 0; k < d; ++k) g[k] += gr[k];
      }
      const double gn = l2_norm(g);
      if (!(gn > 0.0) || !std::isfinite(gn)) continue;
      auto xi = x.row_span(i);
      auto x0i = x0.row_span(i);
      std::vector<double> delta(d);
      for (std::size_t k = 0; k < d; ++k) delta[k] = xi[k] + as.eta * g[k] / gn - x0i[k];
      const double dn = l2_norm(delta);
      const double scale = dn > as.epsilon ? as.epsilon / dn : 1.0;
      for (std::size_t k = 0; k < d; ++k) xi[k] = x0i[k] + scale * delta[k];
    }
  }
  return x;
}

inline Tensor pgd_attack(const Network& net, std::span<const double> x0, int label, const AttackSpec& as) {
  Tensor batch({1, x0.size()}, std::vector<double>(x0.begin(), x0.end()));
  const int labels[1] = {label};
  return pgd_attack_batch(NetworkLoss(net), batch, labels, as);
}

/// Accuracy of target on adversarial examples crafted against source; a point
/// counts when target is right on both the clean and the transferred input.
inline double transfer_eval(const Network& source, const Network& target, const Dataset& ds, const AttackSpec& as,
                            int threads = 1) {
  if (source.input_dim() != target.input_dim() || source.num_classes() != target.num_classes()) {
    throw DimensionError("transfer_eval: source and target disagree on input dimension or class count");
  }
  if (ds.dim() != source.input_dim()) throw DimensionError("transfer_eval: dataset dimension mismatch");
  constexpr std::size_t kBatch = 256;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < ds.size(); b += kBatch) {
    const std::size_t e = std::min(ds.size(), b + kBatch);
    Tensor x0 = ds.rows(b, e);
    std::span<const int> y(ds.labels.data() + b, e - b);
    Tensor adv = pgd_attack_batch(NetworkLoss(source), x0, y, as, {}, {}, threads);
    Tensor clean = forward(target, x0, nullptr, threads);
    Tensor logits = forward(target, adv, nullptr, threads);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
      correct += argmax(clean.row_span(i)) == y[i] && argmax(logits.row_span(i)) == y[i];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace nal
