#pragma once

// Oracle-backed property checks shared by the `verify` command and the
// acceptance suite. Each check returns a pass flag and a one-line summary.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "nal/adversary.hpp"
#include "nal/bound_eval.hpp"
#include "nal/certifier.hpp"
#include "nal/dataset.hpp"
#include "nal/network.hpp"
#include "nal/oracles.hpp"
#include "nal/rng.hpp"
#include "nal/smoothing.hpp"
#include "nal/trainers.hpp"

namespace nal::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs body, timing it and turning exceptions into failures.
inline CheckResult timed(const std::string& name, const std::function<CheckResult()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = body();
  } catch (const std::exception& e) {
    r.pass = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.name = name;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

inline std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

// ---------------------------------------------------------------------------
// gradient fidelity

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

/// Analytic vs central-difference gradients (h = 1e-5) on random small nets.
inline CheckResult gradient_fidelity(int nets = 20, std::uint64_t seed = 7) {
  double worst = 0.0;
  for (int t = 0; t < nets; ++t) {
    auto rng = make_stream(seed, "gradcheck", {static_cast<std::uint64_t>(t)});
    const std::size_t d = 1 + rng.below(6);
    const std::size_t C = 2 + rng.below(3);
    const std::size_t depth = 1 + rng.below(3);
    std::vector<LayerSpec> specs;
    std::size_t in = d;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t out = 1 + rng.below(8);
      specs.push_back({in, out, rng.below(2) ? Activation::elu : Activation::relu});
      in = out;
    }
    specs.push_back({in, C, Activation::none});
    Network net = init_network(specs, rng);
    for (auto& layer : net.layers())
      for (double& b : layer.bias.data()) b = 0.3 * rng.normal();

    const std::size_t m = 3;
    Tensor x({m, d});
    std::vector<int> labels(m);
    Trace trace;
    // resample inputs until no ReLU pre-activation sits near its kink
    for (int attempt = 0;; ++attempt) {
      for (double& v : x.data()) v = rng.normal();
      for (int& y : labels) y = static_cast<int>(rng.below(C));
      forward(net, x, &trace);
      bool near_kink = false;
      for (std::size_t l = 0; l + 1 < net.layers().size(); ++l) {
        if (net.layers()[l].spec.activation != Activation::relu) continue;
        for (double z : trace.preactivations[l].data()) near_kink |= std::abs(z) < 1e-3;
      }
      if (!near_kink || attempt > 100) break;
    }
    const GradPair g = backward_ce(net, trace, labels, GradTarget::both);

    auto mean_loss = [&](const Network& n, const Tensor& input) {
      const auto losses = row_losses(forward(n, input), labels);
      double s = 0.0;
      for (double v : losses) s += v;
      return s / static_cast<double>(losses.size());
    };
    const double h = 1e-5;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
      for (int which = 0; which < 2; ++which) {
        const std::size_t count = which == 0 ? net.layers()[l].weight.size() : net.layers()[l].bias.size();
        for (std::size_t k = 0; k < count; ++k) {
          Network up = net, down = net;
          (which == 0 ? up.layers()[l].weight : up.layers()[l].bias)[k] += h;
          (which == 0 ? down.layers()[l].weight : down.layers()[l].bias)[k] -= h;
          const double fd = (mean_loss(up, x) - mean_loss(down, x)) / (2.0 * h);
          const double an = which == 0 ? g.grad_theta.weights[l][k] : g.grad_theta.biases[l][k];
          worst = std::max(worst, relative_error(an, fd));
        }
      }
    }
    for (std::size_t k = 0; k < x.size(); ++k) {
      Tensor up = x, down = x;
      up[k] += h;
      down[k] -= h;
      const double fd = (mean_loss(net, up) - mean_loss(net, down)) / (2.0 * h);
      worst = std::max(worst, relative_error(g.grad_x[k], fd));
    }
  }
  return {"", worst <= 1e-4, std::to_string(nets) + " nets, max relative error " + fmt(worst) + " (limit 1e-4)", 0.0};
}

// ---------------------------------------------------------------------------
// smoothness and concavity on the bounded toy loss

/// Gradient of the smoothed toy loss by quadrature of its analytic gradient.
inline oracle::Point smoothed_toy_gradient(const oracle::ToyLoss& loss, const oracle::Point& x, double sigma,
                                           const oracle::GaussHermite& rule) {
  oracle::Point g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    g[k] = oracle::quadrature_smoothed([&](std::span<const double> p) { return loss.gradient(p)[k]; }, x, sigma, rule);
  }
  return g;
}

/// ||grad l^(x) - grad l^(x')|| / ||x - x'|| <= 2M / sigma^2 on random pairs.
inline CheckResult lemma1_smoothness(int pairs = 500, std::uint64_t seed = 11) {
  const double M = 1.0;
  const oracle::GaussHermite rule(60);
  int violations = 0;
  std::string detail;
  for (double sigma : {0.5, 1.0}) {
    // a bump of width sigma has the steepest smoothed curvature among bumps
    const auto loss = oracle::ToyLoss::bump({{0.0}}, sigma, M);
    const double bound = 2.0 * M / (sigma * sigma);
    auto rng = make_stream(seed, "lemma1", {static_cast<std::uint64_t>(sigma * 1000)});
    double worst = 0.0;
    for (int i = 0; i < pairs; ++i) {
      const oracle::Point x{-4.0 + 8.0 * rng.uniform()}, y{-4.0 + 8.0 * rng.uniform()};
      if (x[0] == y[0]) continue;
      const auto gx = smoothed_toy_gradient(loss, x, sigma, rule);
      const auto gy = smoothed_toy_gradient(loss, y, sigma, rule);
      const double ratio = std::abs(gx[0] - gy[0]) / std::abs(x[0] - y[0]);
      worst = std::max(worst, ratio);
      violations += ratio > bound;
    }
    detail += "sigma=" + fmt(sigma) + ": max ratio " + fmt(worst) + " vs bound " + fmt(bound) + "; ";
  }
  return {"", violations == 0, detail + std::to_string(violations) + " violations", 0.0};
}

/// Max eigenvalue of the finite-difference Hessian of E_Z[l - gamma c] at
/// gamma = 2M/sigma^2 + 1 must be <= -1 + 0.05.
inline CheckResult strong_concavity(int points = 50, std::uint64_t seed = 13) {
  const double M = 1.0;
  double worst = -INFINITY;
  int configs = 0;
  for (double sigma : {0.5, 1.0}) {
    const double gamma = 2.0 * M / (sigma * sigma) + 1.0;
    const std::vector<oracle::ToyLoss> toys = {
        oracle::ToyLoss::bump({{0.0}}, sigma, M),
        oracle::ToyLoss::bump({{0.0, 0.0}}, sigma, M),
        oracle::ToyLoss::bump({{0.2, -0.1}}, 2.0 * sigma, M),
        oracle::ToyLoss::concave_quadratic({0.0, 0.0}, 1.0),
    };
    for (const auto& toy : toys) {
      const std::size_t d = toy.input_dim();
      const oracle::GaussHermite rule(d == 1 ? 60 : 30);
      auto rng = make_stream(seed, "concavity", {static_cast<std::uint64_t>(configs++)});
      for (int i = 0; i < points; ++i) {
        oracle::Point x0(d), x(d);
        for (std::size_t k = 0; k < d; ++k) {
          x0[k] = -1.0 + 2.0 * rng.uniform();
          x[k] = x0[k] + 0.5 * rng.normal();
        }
        auto objective = [&](std::span<const double> p) {
          return oracle::quadrature_smoothed(
              [&](std::span<const double> s) { return toy.value(s) - gamma * squared_distance(s, x0); },
              oracle::Point(p.begin(), p.end()), sigma, rule);
        };
        worst = std::max(worst, oracle::max_eigenvalue(oracle::finite_diff_hessian(objective, x, 1e-3)));
      }
    }
  }
  return {"", worst <= -1.0 + 0.05,
          std::to_string(configs) + " toy configurations x " + std::to_string(points) + " points, max eigenvalue " +
              fmt(worst) + " (limit -0.95)",
          0.0};
}

// ---------------------------------------------------------------------------
// surrogate orderings and oracle agreement

struct SurrogateArena {
  oracle::ToyLoss loss = oracle::ToyLoss::bump({{0.0, 0.0}}, 0.5, 1.0);
  double sigma = 0.5;
  double gamma = 2.0 * 1.0 / (0.5 * 0.5) + 1.0;  // above 2M/sigma^2
  double radius = 0.6;                           // maximizer lies within sqrt(M / gamma) of x0
};

/// sup_x E_Z[l(x + z) - gamma c(x + z, x0)] on the grid with quadrature.
inline oracle::GridResult smoothed_surrogate_oracle(const SurrogateArena& a, const oracle::Point& x0,
                                                    const oracle::GaussHermite& rule) {
  auto objective = [&](std::span<const double> x) {
    return oracle::quadrature_smoothed(
        [&](std::span<const double> s) { return a.loss.value(s) - a.gamma * squared_distance(s, x0); },
        oracle::Point(x.begin(), x.end()), a.sigma, rule);
  };
  return oracle::grid_maximize(objective, x0, a.radius, 100);
}

/// sup_x [l(x) - gamma c(x, x0)] on the grid.
inline oracle::GridResult wrm_surrogate_oracle(const SurrogateArena& a, const oracle::Point& x0) {
  auto objective = [&](std::span<const double> x) { return a.loss.value(x) - a.gamma * squared_distance(x, x0); };
  return oracle::grid_maximize(objective, x0, a.radius, 200);
}

/// The smoothed surrogate never exceeds the noiseless one.
inline CheckResult corollary1_ordering(int instances = 50, std::uint64_t seed = 17) {
  const SurrogateArena a;
  const oracle::GaussHermite rule(20);
  auto rng = make_stream(seed, "corollary1");
  int violations = 0;
  double smooth_sum = 0.0, wrm_sum = 0.0;
  for (int i = 0; i < instances; ++i) {
    const oracle::Point x0{-1.0 + 2.0 * rng.uniform(), -1.0 + 2.0 * rng.uniform()};
    const double s = smoothed_surrogate_oracle(a, x0, rule).value;
    const double w = wrm_surrogate_oracle(a, x0).value;
    violations += s > w;
    smooth_sum += s;
    wrm_sum += w;
  }
  const double ms = smooth_sum / instances, mw = wrm_sum / instances;
  return {"", violations == 0 && ms <= mw,
          "mean smoothed " + fmt(ms) + " <= mean noiseless " + fmt(mw) + ", " + std::to_string(violations) +
              " instance violations",
          0.0};
}

/// Inner maximizer phi estimate within 5% relative of the grid oracle.
inline CheckResult inner_oracle_agreement(int instances = 50, std::uint64_t seed = 19) {
  const SurrogateArena a;
  const oracle::GaussHermite rule(20);
  auto rng = make_stream(seed, "inner-oracle");
  SurrogateSpec ss = SurrogateSpec::with_default_step(a.gamma, 30);
  const NoiseSpec ns{a.sigma, 16384, derive_stream(seed, "inner-oracle-noise", {})};
  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    const oracle::Point x0{-1.0 + 2.0 * rng.uniform(), -1.0 + 2.0 * rng.uniform()};
    const double truth = smoothed_surrogate_oracle(a, x0, rule).value;
    const auto res = inner_maximize(a.loss, x0, 0, ss, ns, static_cast<std::uint64_t>(i));
    worst = std::max(worst, std::abs(res.phi_estimate - truth) / std::abs(truth));
  }
  return {"", worst <= 0.05, std::to_string(instances) + " instances, max relative gap " + fmt(worst) + " (limit 0.05)", 0.0};
}

// ---------------------------------------------------------------------------
// necessary condition for additive-noise attacks

struct Theorem1Arena {
  std::size_t n = 200;
  double separation = 4.0;
  double sigma = 0.1;
  int r = 64;
  double attack_gamma = 2.0;
};

/// Bump loss of width 0.3 centred on the other class's centroid.
inline oracle::ToyLoss confusion_bump(int d, int C) {
  const auto centroids = blob_centroids(d, C);
  std::vector<oracle::Point> centers;
  for (int c = 0; c < C; ++c) centers.push_back(centroids[static_cast<std::size_t>((c + 1) % C)]);
  return oracle::ToyLoss::bump(centers, 0.3, 1.0);
}

inline Theorem1Report theorem1_on_blobs(std::uint64_t seed, const Theorem1Arena& a = {}) {
  auto rng = make_stream(seed, "thm1-blobs");
  const Dataset ds = make_blobs(a.n, 2, 2, a.separation, rng);
  const auto loss = confusion_bump(2, 2);
  Theorem1Options opt;
  opt.loss_upper = loss.M;
  return theorem1_check(loss, ds, a.attack_gamma, NoiseSpec{a.sigma, a.r, derive_stream(seed, "thm1-noise", {})}, opt);
}

inline CheckResult theorem1_seeds(int seeds = 20) {
  int passed = 0;
  double worst_gap = -INFINITY;
  for (int s = 0; s < seeds; ++s) {
    const auto rep = theorem1_on_blobs(static_cast<std::uint64_t>(1000 + s));
    passed += rep.holds;
    worst_gap = std::max(worst_gap, rep.noisy_loss - rep.noiseless_loss);
  }
  return {"", passed == seeds,
          std::to_string(passed) + "/" + std::to_string(seeds) + " seeds hold; max (noisy - noiseless) loss " +
              fmt(worst_gap),
          0.0};
}

// ---------------------------------------------------------------------------
// certification numerics

inline CheckResult certification_numerics(std::uint64_t seed = 23) {
  double cp_worst = 0.0;
  for (double alpha : {0.05, 0.001}) {
    for (int n = 1; n <= 50; ++n) {
      for (int k = 0; k <= n; ++k) {
        cp_worst = std::max(cp_worst, std::abs(clopper_pearson_lower(k, n, alpha) - oracle::binomial_lower_brute(k, n, alpha)));
      }
    }
  }
  auto rng = make_stream(seed, "inv-phi");
  double q_worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    // half uniform on (0,1), half log-uniform into both tails down to 1e-12
    double p = rng.uniform();
    if (i % 2) {
      const double tail = std::pow(10.0, -1.0 - 11.0 * rng.uniform());
      p = (i % 4 == 1) ? tail : 1.0 - tail;
    }
    if (p <= 0.0 || p >= 1.0) continue;
    q_worst = std::max(q_worst, std::abs(inv_phi(p) - oracle::normal_quantile_bisect(p)));
  }
  const double r1 = certified_radius(0.999, 0.001, 0.1);
  const double r2 = certified_radius(0.75, 0.25, 0.5);
  const double r_err = std::max(std::abs(r1 - 0.3090232), std::abs(r2 - 0.3372449));
  const bool pass = cp_worst <= 1e-9 && q_worst <= 1e-9 && r_err <= 1e-6;
  return {"", pass,
          "Clopper-Pearson max gap " + fmt(cp_worst) + ", inv_phi max gap " + fmt(q_worst) + ", radius examples gap " +
              fmt(r_err),
          0.0};
}

// ---------------------------------------------------------------------------
// degeneracy chain

inline bool same_parameters(const Network& a, const Network& b) {
  return serialize_network(a) == serialize_network(b);
}

inline bool same_history(const TrainHistory& a, const TrainHistory& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].surrogate_loss != b[i].surrogate_loss || a[i].clean_loss != b[i].clean_loss) return false;
  }
  return true;
}

inline CheckResult degeneracy_chain(std::uint64_t seed = 29) {
  auto drng = make_stream(seed, "degeneracy-data");
  const Dataset ds = make_blobs(96, 2, 3, 3.0, drng);
  auto irng = make_stream(seed, "degeneracy-init");
  const Network net0 = init_network(mlp_specs(2, {16, 16}, 3, Activation::elu), irng);

  TrainSpec base;
  base.epochs = 2;
  base.batch_size = 16;
  base.eta2 = 0.2;
  base.seed = seed;
  base.surrogate = SurrogateSpec::with_default_step(1.5, 3);

  TrainSpec nal_nonoise = base;
  nal_nonoise.method = Method::nal;
  nal_nonoise.sigma = 0.0;
  nal_nonoise.r = 4;
  TrainSpec wrm = base;
  wrm.method = Method::wrm;
  const auto a = train(net0, ds, nal_nonoise);
  const auto b = train(net0, ds, wrm);
  const bool nal_is_wrm = same_parameters(a.net, b.net) && same_history(a.history, b.history);

  TrainSpec nal_still = base;
  nal_still.method = Method::nal;
  nal_still.sigma = 0.0;
  nal_still.surrogate.K = 0;
  TrainSpec natural = base;
  natural.method = Method::natural;
  const auto c = train(net0, ds, nal_still);
  const auto d = train(net0, ds, natural);
  const bool nal_is_natural = same_parameters(c.net, d.net);

  bool inner_is_wrm = true;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto x0 = ds.inputs.row_span(i);
    const auto p = inner_maximize(net0, x0, ds.labels[i], base.surrogate, NoiseSpec{0.0, 1, 5});
    const auto q = wrm_inner(net0, x0, ds.labels[i], base.surrogate.gamma, base.surrogate.K, base.surrogate.eta1);
    inner_is_wrm &= p.x_adv == q.x_adv && p.phi_estimate == q.phi_estimate && p.ascent_trace == q.ascent_trace;
  }

  bool pgd_shrinks = true;
  double prev = INFINITY;
  for (double eps : {1e-2, 1e-4, 1e-6, 1e-9, 1e-12}) {
    double worst = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const auto x0 = ds.inputs.row_span(i);
      const Tensor adv = pgd_attack(net0, x0, ds.labels[i], AttackSpec(eps, 20));
      worst = std::max(worst, std::sqrt(squared_distance(adv.data(), x0)));
    }
    pgd_shrinks &= worst <= eps + 1e-14 && worst <= prev + 1e-14;
    prev = worst;
  }
  const bool pass = nal_is_wrm && nal_is_natural && inner_is_wrm && pgd_shrinks;
  return {"", pass,
          std::string("nal(sigma=0)==wrm ") + (nal_is_wrm ? "yes" : "NO") + ", nal(K=0,sigma=0)==natural " +
              (nal_is_natural ? "yes" : "NO") + ", inner(sigma=0,r=1)==wrm_inner " + (inner_is_wrm ? "yes" : "NO") +
              ", pgd eps->0 returns x0 " + (pgd_shrinks ? "yes" : "NO"),
          0.0};
}

/// The library-level checks; `full` runs the complete seed counts.
inline std::vector<CheckResult> run_property_suite(bool full) {
  std::vector<CheckResult> out;
  out.push_back(timed("gradient fidelity", [] { return gradient_fidelity(); }));
  out.push_back(timed("smoothness of the smoothed loss", [] { return lemma1_smoothness(); }));
  out.push_back(timed("strong concavity above the threshold", [] { return strong_concavity(); }));
  out.push_back(timed("smoothed surrogate below noiseless surrogate", [] { return corollary1_ordering(); }));
  out.push_back(timed("noisy worst case below matched deterministic worst case",
                      [full] { return theorem1_seeds(full ? 20 : 3); }));
  out.push_back(timed("inner maximizer vs grid oracle", [] { return inner_oracle_agreement(); }));
  out.push_back(timed("certification numerics", [] { return certification_numerics(); }));
  out.push_back(timed("degeneracy chain", [] { return degeneracy_chain(); }));
  return out;
}

}  // namespace nal::verify
