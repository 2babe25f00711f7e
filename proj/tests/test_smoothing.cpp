#include <gtest/gtest.h>

#include <cmath>

#include "nal/oracles.hpp"
#include "nal/smoothing.hpp"
#include "nal/verify.hpp"

using namespace nal;

namespace {

Network small_net(std::uint64_t seed, Activation act = Activation::relu) {
  auto rng = make_stream(seed, "init");
  Network net = init_network(mlp_specs(3, {6}, 3, act), rng);
  for (auto& l : net.layers())
    for (double& b : l.bias.data()) b = 0.2 * rng.normal();
  return net;
}

}  // namespace

TEST(SmoothedLoss, ZeroSigmaIsExactLoss) {
  const Network net = small_net(1);
  const std::vector<double> x = {0.3, -0.2, 0.9};
  const Estimate e = smoothed_loss(net, x, 1, NoiseSpec{0.0, 16, 5});
  const Tensor logits = forward(net, Tensor({1, 3}, x));
  EXPECT_EQ(e.value, loss_ce(logits.row_span(0), 1));
  EXPECT_EQ(e.std_error, 0.0);
}

TEST(SmoothedLoss, ToyEstimateAgreesWithQuadrature) {
  const auto toy = oracle::ToyLoss::bump({{0.0}}, 0.7, 1.0);
  for (double x : {-1.0, 0.0, 0.4, 1.5}) {
    const std::vector<double> p = {x};
    const Estimate e = smoothed_loss(toy, p, 0, NoiseSpec{0.5, 4000, 11}, 3);
    const double q = oracle::quadrature_smoothed([&](std::span<const double> s) { return toy.value(s); }, p, 0.5, 40);
    EXPECT_LE(std::abs(e.value - q), 3.0 * e.std_error) << x;
  }
}

TEST(SmoothedLoss, StandardErrorScalesWithSqrtR) {
  const auto toy = oracle::ToyLoss::bump({{0.0}}, 0.7, 1.0);
  const std::vector<double> p = {0.3};
  auto mean_se = [&](int r) {
    double s = 0.0;
    for (std::uint64_t t = 0; t < 200; ++t) s += smoothed_loss(toy, p, 0, NoiseSpec{0.5, r, 7}, t).std_error;
    return s / 200.0;
  };
  const double a = mean_se(256), b = mean_se(512), c = mean_se(1024);
  EXPECT_NEAR(a / b, std::sqrt(2.0), 0.2 * std::sqrt(2.0));
  EXPECT_NEAR(a / c, 2.0, 0.2 * 2.0);
}

TEST(SmoothedLoss, InvalidSpecThrows) {
  const Network net = small_net(1);
  const std::vector<double> x = {0.0, 0.0, 0.0};
  EXPECT_THROW(smoothed_loss(net, x, 0, NoiseSpec{-0.1, 4, 0}), ParameterError);
  EXPECT_THROW(smoothed_loss(net, x, 0, NoiseSpec{0.1, 0, 0}), ParameterError);
  const std::vector<double> bad = {0.0, 0.0};
  EXPECT_THROW(smoothed_loss(net, bad, 0, NoiseSpec{0.1, 4, 0}), DimensionError);
}

TEST(SmoothedGrad, ZeroSigmaEqualsBackward) {
  const Network net = small_net(2);
  const std::vector<double> x = {0.1, 0.5, -0.3};
  const GradPair s = smoothed_loss_grad(net, x, 2, NoiseSpec{0.0, 8, 1});
  Trace trace;
  forward(net, Tensor({1, 3}, x), &trace);
  const int label[1] = {2};
  const GradPair g = backward_ce(net, trace, label, GradTarget::both);
  EXPECT_EQ(s.grad_x.values(), g.grad_x.values());
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    EXPECT_EQ(s.grad_theta.weights[l], g.grad_theta.weights[l]);
    EXPECT_EQ(s.grad_theta.biases[l], g.grad_theta.biases[l]);
  }
}

TEST(SmoothedGrad, FrozenNoiseFiniteDifferences) {
  const Network net = small_net(3, Activation::elu);
  const std::vector<double> x = {0.2, -0.4, 0.8};
  auto rng = make_stream(4, "frozen");
  const Tensor noise = gaussian(rng, {5, 3}, 0.3);
  const GradPair g = smoothed_loss_grad_frozen(net, x, 0, noise);
  auto objective = [&](const Network& n, const std::vector<double>& p) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      Tensor row({1, 3});
      for (std::size_t k = 0; k < 3; ++k) row[k] = p[k] + noise(j, k);
      s += loss_ce(forward(n, row).row_span(0), 0);
    }
    return s / 5.0;
  };
  const double h = 1e-5;
  for (std::size_t k = 0; k < 3; ++k) {
    auto up = x, dn = x;
    up[k] += h;
    dn[k] -= h;
    const double fd = (objective(net, up) - objective(net, dn)) / (2 * h);
    EXPECT_LE(verify::relative_error(g.grad_x[k], fd), 1e-4);
  }
  for (std::size_t l = 0; l < net.layers().size(); ++l)
    for (std::size_t k = 0; k < net.layers()[l].weight.size(); ++k) {
      Network up = net, dn = net;
      up.layers()[l].weight[k] += h;
      dn.layers()[l].weight[k] -= h;
      const double fd = (objective(up, x) - objective(dn, x)) / (2 * h);
      EXPECT_LE(verify::relative_error(g.grad_theta.weights[l][k], fd), 1e-4);
    }
}

TEST(SmoothedGrad, LinearModelMatchesClosedForm) {
  auto rng = make_stream(6, "linear");
  const Network net({Layer{{2, 3, Activation::none}, gaussian(rng, {2, 3}, 1.0), gaussian(rng, {3}, 0.5)}});
  const std::vector<double> x = {0.4, -0.1};
  const Tensor noise = gaussian(rng, {7, 2}, 0.25);
  const GradPair g = smoothed_loss_grad_frozen(net, x, 1, noise);
  // d/dx of (1/r) sum_j CE(W^T (x + z_j) + b) = W (mean_j softmax_j - e_y)
  std::vector<double> mean_p(3, 0.0);
  for (std::size_t j = 0; j < 7; ++j) {
    std::vector<double> logits(3);
    for (std::size_t c = 0; c < 3; ++c) {
      logits[c] = net.layers()[0].bias[c];
      for (std::size_t k = 0; k < 2; ++k) logits[c] += (x[k] + noise(j, k)) * net.layers()[0].weight(k, c);
    }
    const auto p = softmax(logits);
    for (std::size_t c = 0; c < 3; ++c) mean_p[c] += p[c] / 7.0;
  }
  mean_p[1] -= 1.0;
  for (std::size_t k = 0; k < 2; ++k) {
    double expect = 0.0;
    for (std::size_t c = 0; c < 3; ++c) expect += net.layers()[0].weight(k, c) * mean_p[c];
    EXPECT_NEAR(g.grad_x[k], expect, 1e-14);
  }
}

TEST(SmoothedPredict, ZeroSigmaPutsAllCountsOnArgmax) {
  const Network net = small_net(7);
  const std::vector<double> x = {0.5, 0.1, -0.6};
  auto rng = make_stream(1, "p");
  const auto counts = smoothed_predict(net, x, 0.0, 50, rng);
  const int top = argmax(forward(net, Tensor({1, 3}, x)).row_span(0));
  EXPECT_EQ(counts[static_cast<std::size_t>(top)], 50);
}

TEST(SmoothedPredict, ConstantLogitsTieBreakToClassZero) {
  const Network net({Layer{{2, 4, Activation::none}, Tensor({2, 4}), Tensor({4}, {1, 1, 1, 1})}});
  auto rng = make_stream(1, "p");
  const std::vector<double> x = {0.3, 0.3};
  const auto counts = smoothed_predict(net, x, 0.5, 300, rng);
  EXPECT_EQ(counts, (std::vector<int>{300, 0, 0, 0}));
}

TEST(SmoothedPredict, MajorityStableAcrossSeeds) {
  auto drng = make_stream(2, "blobs");
  const Dataset ds = make_blobs(200, 2, 2, 6.0, drng);
  auto irng = make_stream(2, "init");
  Network net = init_network(mlp_specs(2, {8}, 2, Activation::relu), irng);
  TrainSpec ts;
  ts.method = Method::natural;
  ts.epochs = 40;
  ts.batch_size = 16;
  net = train(net, ds, ts).net;
  for (std::size_t i = 0; i < 10; ++i) {
    auto a = make_stream(100, "p", {i}), b = make_stream(200, "p", {i});
    const auto ca = smoothed_predict(net, ds.inputs.row_span(i), 0.1, 1000, a);
    const auto cb = smoothed_predict(net, ds.inputs.row_span(i), 0.1, 1000, b);
    EXPECT_EQ(argmax(std::vector<double>(ca.begin(), ca.end())), argmax(std::vector<double>(cb.begin(), cb.end())));
    EXPECT_EQ(ca[0] + ca[1], 1000);
  }
}

TEST(NoiseCost, ExpectedCostIdentity) {
  const std::vector<double> x = {0.3, -0.2, 0.5}, x0 = {0.0, 0.1, 0.2};
  const double sigma = 0.4;
  auto rng = make_stream(3, "cost");
  const Tensor rows = noisy_copies(x, 200000, sigma, rng);
  std::vector<double> c(rows.rows());
  for (std::size_t j = 0; j < rows.rows(); ++j) c[j] = squared_distance(rows.row_span(j), x0);
  const Estimate e = mean_and_se(c);
  EXPECT_LE(std::abs(e.value - (squared_distance(x, x0) + 3 * sigma * sigma)), 3.0 * e.std_error);
}

TEST(Lemma1, SmoothedToyGradientIsLipschitz) {
  const auto r = verify::lemma1_smoothness();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Lemma1, QuadratureGradientMatchesClosedForm) {
  // Gaussian bump M exp(-x^2/s^2) smoothed by N(0, sigma^2):
  // M s / sqrt(s^2 + 2 sigma^2) exp(-x^2 / (s^2 + 2 sigma^2))
  const double s = 0.5, sigma = 0.5, M = 1.0;
  const auto toy = oracle::ToyLoss::bump({{0.0}}, s, M);
  const oracle::GaussHermite rule(60);
  const double v = s * s + 2 * sigma * sigma;
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    const double closed = -2.0 * x / v * M * s / std::sqrt(v) * std::exp(-x * x / v);
    EXPECT_NEAR(verify::smoothed_toy_gradient(toy, {x}, sigma, rule)[0], closed, 1e-10);
  }
}
