#pragma once

// The distributional robustness certificate gamma * rho + E[phi_gamma], the
// empirical worst-case point (rho_test, worst-case loss), the epsilon/gamma
// equivalence and the necessary-condition check for additive-noise attacks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "nal/adversary.hpp"
#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/objective.hpp"
#include "nal/oracles.hpp"
#include "nal/rng.hpp"
#include "nal/smoothing.hpp"

namespace nal {

/// Per-instance ingredients of the certificate for one gamma.
struct BoundSamples {
  std::vector<double> phi;         // r-sample objective at x* (inner stream)
  std::vector<double> cost;        // r-sample E_Z c(x* + z, x0), independent draws
  std::vector<double> worst_loss;  // r-sample E_Z loss(x* + z), same independent draws
};

struct BoundPoint {
  double gamma = 0.0;
  double mean_phi = 0.0;
  double phi_se = 0.0;
  double rho_test = 0.0;
  double worst_case_loss = 0.0;
  double combined_se = 0.0;  // std error of (gamma * rho_test + mean_phi - worst_case_loss)
};

namespace detail {
constexpr std::size_t kBoundChunk = 256;
}

/// Runs the inner maximization over ds (instance key = row index) and
/// evaluates phi at x* with the inner stream and cost/loss at x* with the
/// independent stream (seed, "worst-case", key).
template <InputLoss L>
BoundSamples bound_samples(const L& loss, const Dataset& ds, const SurrogateSpec& ss, const NoiseSpec& ns,
                           int threads = 1) {
  ds.validate();
  const std::size_t n = ds.size(), d = ds.dim();
  const auto ru = static_cast<std::size_t>(ns.effective_r());
  BoundSamples out;
  out.phi.resize(n);
  out.cost.resize(n);
  out.worst_loss.resize(n);
  for (std::size_t b = 0; b < n; b += detail::kBoundChunk) {
    const std::size_t e = std::min(n, b + detail::kBoundChunk);
    const Tensor x0 = ds.rows(b, e);
    std::span<const int> y(ds.labels.data() + b, e - b);
    std::vector<std::uint64_t> keys(e - b);
    std::iota(keys.begin(), keys.end(), static_cast<std::uint64_t>(b));
    const auto res = inner_maximize_batch(loss, x0, y, keys, ss, ns, {.evaluate_final = true, .threads = threads});
    Tensor rows({(e - b) * ru, d});
    std::vector<int> row_labels(rows.rows());
    for (std::size_t i = 0; i < e - b; ++i) {
      out.phi[b + i] = res[i].phi_estimate;
      auto rng = make_stream(ns.seed, "worst-case", {keys[i]});
      const Tensor noisy = noisy_copies(res[i].x_adv.data(), static_cast<int>(ru), ns.sigma, rng);
      for (std::size_t j = 0; j < ru; ++j) {
        auto src = noisy.row_span(j);
        std::copy(src.begin(), src.end(), rows.row_span(i * ru + j).begin());
        row_labels[i * ru + j] = y[i];
      }
    }
    const BatchLoss lv = loss.evaluate(rows, row_labels, false, threads);
    for (std::size_t i = 0; i < e - b; ++i) {
      double c = 0.0, l = 0.0;
      for (std::size_t j = 0; j < ru; ++j) {
        c += squared_distance(rows.row_span(i * ru + j), x0.row_span(i));
        l += lv.values[i * ru + j];
      }
      out.cost[b + i] = c / static_cast<double>(ru);
      out.worst_loss[b + i] = l / static_cast<double>(ru);
    }
  }
  return out;
}

inline BoundPoint summarize_bound(const BoundSamples& s, double gamma) {
  BoundPoint p;
  p.gamma = gamma;
  const Estimate phi = mean_and_se(s.phi);
  p.mean_phi = phi.value;
  p.phi_se = phi.std_error;
  p.rho_test = mean_and_se(s.cost).value;
  p.worst_case_loss = mean_and_se(s.worst_loss).value;
  std::vector<double> gap(s.phi.size());
  for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = gamma * s.cost[i] + s.phi[i] - s.worst_loss[i];
  p.combined_se = mean_and_se(gap).std_error;
  return p;
}

/// worst_case_loss <= gamma * rho_test + mean_phi + 3 * combined_se
inline bool bound_holds(const BoundPoint& p) {
  return p.worst_case_loss <= p.gamma * p.rho_test + p.mean_phi + 3.0 * p.combined_se;
}

template <InputLoss L>
BoundPoint bound_point(const L& loss, const Dataset& ds, const SurrogateSpec& ss, const NoiseSpec& ns,
                       int threads = 1) {
  return summarize_bound(bound_samples(loss, ds, ss, ns, threads), ss.gamma);
}

/// Mean over ds of the inner phi estimate and its std error over instances.
template <InputLoss L>
Estimate surrogate_population(const L& loss, const Dataset& ds, const SurrogateSpec& ss, const NoiseSpec& ns,
                              int threads = 1) {
  const auto s = bound_samples(loss, ds, ss, ns, threads);
  return mean_and_se(s.phi);
}

struct RhoWorstCase {
  double rho_test = 0.0;
  double worst_case_loss = 0.0;
};

template <InputLoss L>
RhoWorstCase rho_and_worst_case(const L& loss, const Dataset& ds, const SurrogateSpec& ss, const NoiseSpec& ns,
                                int threads = 1) {
  const auto p = bound_point(loss, ds, ss, ns, threads);
  return {p.rho_test, p.worst_case_loss};
}

struct BoundReport {
  BoundPoint point;
  std::vector<double> rho_grid;
  std::vector<double> bound_values;  // gamma * rho + mean_phi
  double epsilon_equiv = 0.0;        // sqrt(rho_test)
};

/// `count` evenly spaced points from 0 to hi inclusive.
inline std::vector<double> linear_grid(double hi, int count = 20) {
  std::vector<double> g(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) g[static_cast<std::size_t>(i)] = count == 1 ? 0.0 : hi * i / (count - 1);
  return g;
}

/// One report per gamma. Each gamma uses `base` with its own gamma and the
/// step 0.5 / gamma. An empty rho_grid selects 20 points from 0 to twice the
/// largest rho_test.
template <InputLoss L>
std::vector<BoundReport> certificate_curve(const L& loss, const Dataset& ds, std::span<const double> gammas,
                                           std::vector<double> rho_grid, const NoiseSpec& ns,
                                           const SurrogateSpec& base, int threads = 1) {
  std::vector<BoundReport> reports;
  for (double g : gammas) {
    SurrogateSpec ss = base;
    ss.gamma = g;
    ss.eta1 = g > 0.0 ? 0.5 / g : base.eta1;
    BoundReport rep;
    rep.point = bound_point(loss, ds, ss, ns, threads);
    rep.epsilon_equiv = std::sqrt(rep.point.rho_test);
    reports.push_back(std::move(rep));
  }
  if (rho_grid.empty()) {
    double hi = 0.0;
    for (const auto& r : reports) hi = std::max(hi, r.point.rho_test);
    rho_grid = linear_grid(2.0 * hi);
  }
  for (auto& r : reports) {
    r.rho_grid = rho_grid;
    for (double rho : rho_grid) r.bound_values.push_back(r.point.gamma * rho + r.point.mean_phi);
  }
  return reports;
}

/// Pointwise minimum over gamma of the bound curves (all must share a grid).
inline std::vector<double> lower_envelope(std::span<const BoundReport> reports) {
  if (reports.empty()) return {};
  std::vector<double> env = reports.front().bound_values;
  for (const auto& r : reports) {
    if (r.bound_values.size() != env.size()) throw DimensionError("lower_envelope: reports use different grids");
    for (std::size_t i = 0; i < env.size(); ++i) env[i] = std::min(env[i], r.bound_values[i]);
  }
  return env;
}

/// sqrt of the mean transport cost of the K-step inner maximizer.
template <InputLoss L>
double epsilon_equivalence(const L& loss, const Dataset& ds, double gamma, const NoiseSpec& ns, int K = 15,
                           int threads = 1) {
  if (!(gamma > 0.0)) throw ParameterError("epsilon_equivalence: gamma must be > 0");
  auto ss = SurrogateSpec::with_default_step(gamma, K);
  const auto s = bound_samples(loss, ds, ss, ns, threads);
  return std::sqrt(mean_and_se(s.cost).value);
}

// ---------------------------------------------------------------------------

struct Theorem1Report {
  double noisy_loss = 0.0;       // E E_Z loss(x* + z) of the noisy attack
  double noisy_loss_se = 0.0;
  double noisy_cost = 0.0;       // E E_Z c(x* + z, x0)
  double noisy_cost_se = 0.0;
  double noiseless_loss = 0.0;   // deterministic attack at matched cost
  double noiseless_cost = 0.0;
  double noiseless_gamma = 0.0;  // multiplier of the matched deterministic attack
  bool saturated = false;        // matching hit the loss upper bound instead of the cost
  bool holds = false;            // noisy_loss <= noiseless_loss + 3 * noisy_loss_se
};

struct Theorem1Options {
  int K = 30;                              // noisy inner ascent steps
  int grid_resolution = 100;               // deterministic side, per axis
  double gamma_lo = 1e-2;                  // bracket for the deterministic multiplier
  double gamma_hi = 1e4;
  int bisection_steps = 30;
  std::optional<double> loss_upper = {};   // sup of the loss, if known
};

/// Necessary-condition check for additive-noise attacks (d <= 2): the noisy
/// worst case at transport cost rho must not exceed the deterministic worst
/// case at cost >= rho. The noisy attack is the inner maximizer at
/// attack_budget (a penalty); the deterministic attack maximizes
/// loss - gamma' * c exactly on a grid, with gamma' found by bisection so that
/// its mean cost is at least rho + 3 std errors. attack_budget = 0 compares
/// the unattacked smoothed loss with the clean loss.
template <InputLoss L>
Theorem1Report theorem1_check(const L& loss, const Dataset& ds, double attack_budget, const NoiseSpec& ns,
                              const Theorem1Options& opt = {}) {
  ds.validate();
  const std::size_t n = ds.size(), d = ds.dim();
  if (d > 2) throw DimensionError("theorem1_check: the deterministic side needs d <= 2");
  if (!(attack_budget >= 0.0)) throw ParameterError("theorem1_check: attack budget must be >= 0");
  Theorem1Report rep;

  auto loss_at = [&](std::span<const double> x, int label) -> double {
    if constexpr (requires { loss.value(x, label); }) return loss.value(x, label);
    Tensor row({1, d}, std::vector<double>(x.begin(), x.end()));
    const int lab[1] = {label};
    return loss.evaluate(row, lab, false, 1).values[0];
  };

  // noisy side
  SurrogateSpec ss = attack_budget > 0.0 ? SurrogateSpec::with_default_step(attack_budget, opt.K)
                                         : SurrogateSpec::with_default_step(1.0, 0);
  const auto s = bound_samples(loss, ds, ss, ns);
  const Estimate nl = mean_and_se(s.worst_loss);
  const Estimate nc = mean_and_se(s.cost);
  rep.noisy_loss = nl.value;
  rep.noisy_loss_se = nl.std_error;
  rep.noisy_cost = nc.value;
  rep.noisy_cost_se = nc.std_error;

  if (attack_budget == 0.0) {
    double clean = 0.0;
    for (std::size_t i = 0; i < n; ++i) clean += loss_at(ds.inputs.row_span(i), ds.labels[i]);
    rep.noiseless_loss = clean / static_cast<double>(n);
    rep.holds = rep.noisy_loss <= rep.noiseless_loss + 3.0 * rep.noisy_loss_se;
    return rep;
  }

  // deterministic side: exact per-point maximizers of loss - g * c
  struct Side {
    double cost = 0.0, loss = 0.0;
  };
  auto deterministic = [&](double g) {
    Side side;
    for (std::size_t i = 0; i < n; ++i) {
      const oracle::Point x0(ds.inputs.row_span(i).begin(), ds.inputs.row_span(i).end());
      const int label = ds.labels[i];
      const double reach = opt.loss_upper ? std::sqrt(*opt.loss_upper / g) * 1.01 + 1e-6 : 2.0;
      auto f = [&](std::span<const double> x) { return loss_at(x, label) - g * squared_distance(x, x0); };
      const auto best = oracle::grid_maximize(f, x0, std::min(reach, 2.0), opt.grid_resolution);
      side.cost += squared_distance(best.x, x0);
      side.loss += loss_at(best.x, label);
    }
    side.cost /= static_cast<double>(n);
    side.loss /= static_cast<double>(n);
    return side;
  };

  const double target = rep.noisy_cost + 3.0 * rep.noisy_cost_se;
  double lo = opt.gamma_lo, hi = opt.gamma_hi;
  Side at_lo = deterministic(lo);
  if (at_lo.cost < target) {
    if (opt.loss_upper) {
      rep.saturated = true;
      rep.noiseless_gamma = 0.0;
      rep.noiseless_cost = at_lo.cost;
      rep.noiseless_loss = *opt.loss_upper;
      rep.holds = rep.noisy_loss <= rep.noiseless_loss + 3.0 * rep.noisy_loss_se;
      return rep;
    }
    throw MatchingError("theorem1_check: deterministic attack cannot reach transport cost " + std::to_string(target));
  }
  if (deterministic(hi).cost >= target) {
    throw MatchingError("theorem1_check: deterministic attack exceeds transport cost at the largest multiplier");
  }
  for (int it = 0; it < opt.bisection_steps; ++it) {
    const double mid = std::sqrt(lo * hi);
    const Side m = deterministic(mid);
    if (m.cost >= target) {
      lo = mid;
      at_lo = m;
    } else {
      hi = mid;
    }
  }
  rep.noiseless_gamma = lo;
  rep.noiseless_cost = at_lo.cost;
  rep.noiseless_loss = at_lo.loss;
  rep.holds = rep.noisy_loss <= rep.noiseless_loss + 3.0 * rep.noisy_loss_se;
  return rep;
}

}  // namespace nal
