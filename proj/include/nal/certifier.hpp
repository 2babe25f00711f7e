#pragma once

// Randomized-smoothing certification: normal quantiles, exact binomial
// bounds, certified radii and certified-accuracy curves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "nal/dataset.hpp"
#include "nal/error.hpp"
#include "nal/network.hpp"
#include "nal/parallel.hpp"
#include "nal/rng.hpp"
#include "nal/smoothing.hpp"
#include "nal/tensor.hpp"

namespace nal {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Standard normal quantile: Wichura's AS241 (PPND16) followed by one Newton
/// step on the erfc-based CDF.
inline double inv_phi(double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("inv_phi: p must lie in (0, 1)");
  const double q = p - 0.5;
  double x;
  if (std::abs(q) < 0.425) {
    const double r = 0.180625 - q * q;
    x = q *
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r + 6.7265770927008700853e4) * r +
             4.5921953931549871457e4) * r + 1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0) /
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r + 3.9307895800092710610e4) * r +
             2.1213794301586595867e4) * r + 5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
  } else {
    double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
    if (r < 5.0) {
      r -= 1.6;
      r = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r + 2.41780725177450611770e-1) * r +
              1.27045825245236838258e0) * r + 3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0) /
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r + 1.51986665636164571966e-2) * r +
              1.48103976427480074590e-1) * r + 6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
    } else {
      r -= 5.0;
      r = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 1.24266094738807843860e-3) * r +
              2.65321895265761230930e-2) * r + 2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0) /
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r + 1.84631831751005468180e-5) * r +
              7.86869131145613259100e-4) * r + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
    }
    x = std::copysign(r, q);
  }
  const double pdf = normal_pdf(x);
  if (pdf > 0.0) {
    // upper tail through the complement so the residual keeps its digits
    const double residual = q > 0.0 ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2) : normal_cdf(x) - p;
    x -= residual / pdf;
  }
  return x;
}

namespace detail {

inline void check_binomial(std::int64_t k, std::int64_t n, double alpha) {
  if (n < 1 || k < 0 || k > n) throw ParameterError("binomial bound needs 0 <= k <= n, n >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("binomial bound needs alpha in (0, 1)");
}

/// Bisection for the p in [0, 1] where a monotone function crosses zero;
/// f(lo) and f(hi) must have opposite signs.
template <class F>
double bisect_unit(F&& f, bool increasing, double tol = 1e-13) {
  double lo = 0.0, hi = 1.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double v = f(mid);
    if ((v < 0.0) == increasing) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// One-sided (1 - alpha) Clopper-Pearson lower bound: the p at which
/// P_p(X >= k) = alpha, where P_p(X >= k) = I_p(k, n - k + 1).
inline double clopper_pearson_lower(std::int64_t k, std::int64_t n, double alpha) {
  detail::check_binomial(k, n, alpha);
  if (k == 0) return 0.0;
  const double a = static_cast<double>(k), b = static_cast<double>(n - k + 1);
  return detail::bisect_unit([&](double p) { return boost::math::ibeta(a, b, p) - alpha; }, true);
}

/// One-sided (1 - alpha) Clopper-Pearson upper bound: the p at which
/// P_p(X <= k) = alpha.
inline double clopper_pearson_upper(std::int64_t k, std::int64_t n, double alpha) {
  detail::check_binomial(k, n, alpha);
  if (k == n) return 1.0;
  const double a = static_cast<double>(k + 1), b = static_cast<double>(n - k);
  return detail::bisect_unit([&](double p) { return boost::math::ibetac(a, b, p) - alpha; }, false);
}

/// sigma/2 * (inv_phi(pA) - inv_phi(pB)), floored at 0.
inline double certified_radius(double pA_lower, double pB_upper, double sigma) {
  if (!(pA_lower > 0.0 && pA_lower < 1.0) || !(pB_upper > 0.0 && pB_upper < 1.0)) {
    throw ParameterError("certified_radius: probabilities must lie in (0, 1)");
  }
  if (!(sigma >= 0.0)) throw ParameterError("certified_radius: sigma must be >= 0");
  return std::max(0.0, 0.5 * sigma * (inv_phi(pA_lower) - inv_phi(pB_upper)));
}

enum class CertMode { one_sided, two_class };

inline std::string_view to_string(CertMode m) { return m == CertMode::one_sided ? "one-sided" : "two-class"; }

inline CertMode parse_cert_mode(std::string_view s) {
  if (s == "one-sided") return CertMode::one_sided;
  if (s == "two-class") return CertMode::two_class;
  throw ParameterError("unknown certification mode '" + std::string(s) + "'");
}

struct CertifySpec {
  double sigma = 0.25;
  int n0 = 100;
  int n = 1000;
  double alpha = 0.001;
  CertMode mode = CertMode::one_sided;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ParameterError("certify.sigma must be > 0");
    if (n0 < 1 || n < 1) throw ParameterError("certify.n0 and certify.n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("certify.alpha must lie in (0, 1)");
  }
};

struct CertResult {
  int c_hat = 0;
  double pA_lower = 0.0;
  double pB_upper = 1.0;
  double radius = 0.0;
  bool abstain = true;
};

/// Selection with n0 draws from `select`, estimation with n fresh draws
/// from `estimate`.
inline CertResult certify(const Network& net, std::span<const double> x, const CertifySpec& cs, RngStream& select,
                          RngStream& estimate, int threads = 1) {
  cs.validate();
  const auto sel = smoothed_predict(net, x, cs.sigma, cs.n0, select, threads);
  CertResult res;
  res.c_hat = static_cast<int>(std::max_element(sel.begin(), sel.end()) - sel.begin());
  const auto counts = smoothed_predict(net, x, cs.sigma, cs.n, estimate, threads);
  const auto nA = counts[static_cast<std::size_t>(res.c_hat)];
  if (cs.mode == CertMode::one_sided) {
    res.pA_lower = clopper_pearson_lower(nA, cs.n, cs.alpha);
    res.pB_upper = 1.0 - res.pA_lower;
    res.abstain = !(res.pA_lower > 0.5);
  } else {
    int nB = 0;
    for (std::size_t c = 0; c < counts.size(); ++c)
      if (static_cast<int>(c) != res.c_hat) nB = std::max(nB, counts[c]);
    res.pA_lower = clopper_pearson_lower(nA, cs.n, cs.alpha / 2.0);
    res.pB_upper = clopper_pearson_upper(nB, cs.n, cs.alpha / 2.0);
    res.abstain = !(res.pA_lower > res.pB_upper);
  }
  if (!res.abstain) {
    res.radius = certified_radius(res.pA_lower, res.pB_upper, cs.sigma);
    if (!(res.radius > 0.0)) res.abstain = true;
  }
  if (res.abstain) res.radius = 0.0;
  return res;
}

/// Per-point streams (seed, "cert-select", key) and (seed, "cert-estimate", key).
inline CertResult certify(const Network& net, std::span<const double> x, const CertifySpec& cs, std::uint64_t key,
                          int threads = 1) {
  auto select = make_stream(cs.seed, "cert-select", {key});
  auto estimate = make_stream(cs.seed, "cert-estimate", {key});
  return certify(net, x, cs, select, estimate, threads);
}

/// Certifies every point of ds, keyed by row index; parallel over points.
inline std::vector<CertResult> certify_dataset(const Network& net, const Dataset& ds, const CertifySpec& cs,
                                               int threads = 1) {
  cs.validate();
  if (ds.dim() != net.input_dim()) throw DimensionError("certify: dataset dimension mismatch");
  std::vector<CertResult> out(ds.size());
  parallel_for(ds.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) out[i] = certify(net, ds.inputs.row_span(i), cs, i);
  });
  return out;
}

struct CurvePoint {
  double radius = 0.0;
  double certified_accuracy = 0.0;
};

/// Fraction of points that are certified, correct and have radius >= rho.
inline std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertResult> results,
                                                        std::span<const int> labels, std::span<const double> radii) {
  if (results.size() != labels.size()) throw DimensionError("certified_accuracy_curve: label count mismatch");
  std::vector<CurvePoint> curve;
  for (double rho : radii) {
    std::size_t hit = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      hit += !r.abstain && r.c_hat == labels[i] && r.radius >= rho;
    }
    curve.push_back({rho, results.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(results.size())});
  }
  return curve;
}

inline std::vector<CurvePoint> certified_accuracy_curve(const Network& net, const Dataset& ds, const CertifySpec& cs,
                                                        std::span<const double> radii, int threads = 1) {
  const auto results = certify_dataset(net, ds, cs, threads);
  return certified_accuracy_curve(results, ds.labels, radii);
}

/// -log Phi(inv_phi(pB_upper) + distance / sigma).
inline double proposition1_threshold(double distance, double sigma, double pB_upper) {
  if (!(pB_upper > 0.0 && pB_upper < 1.0)) throw ParameterError("proposition check: pB_upper must lie in (0, 1)");
  if (!(sigma > 0.0)) throw ParameterError("proposition check: sigma must be > 0");
  if (!(distance >= 0.0) || !std::isfinite(distance)) throw ParameterError("proposition check: distance must be finite");
  return -std::log(normal_cdf(inv_phi(pB_upper) + distance / sigma));
}

struct Proposition1Report {
  double threshold = 0.0;
  Estimate smoothed_loss;
  bool holds = false;  // estimate + 3 standard errors <= threshold
};

inline Proposition1Report proposition1_check(const Network& net, std::span<const double> x,
                                             std::span<const double> x0, double sigma, double pB_upper, int label,
                                             int r = 1000, std::uint64_t seed = 0, std::uint64_t key = 0) {
  if (x.size() != x0.size()) throw DimensionError("proposition check: x and x0 differ in dimension");
  Proposition1Report rep;
  rep.threshold = proposition1_threshold(std::sqrt(squared_distance(x, x0)), sigma, pB_upper);
  rep.smoothed_loss = smoothed_loss(net, x, label, NoiseSpec{sigma, r, seed}, key);
  rep.holds = rep.smoothed_loss.value + 3.0 * rep.smoothed_loss.std_error <= rep.threshold;
  return rep;
}

}  // namespace nal
