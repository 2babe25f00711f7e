#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "nal/network.hpp"
#include "nal/verify.hpp"

using namespace nal;

namespace {

// Independent forward pass written with plain loops.
std::vector<double> oracle_forward(const Network& net, std::span<const double> x) {
  std::vector<double> a(x.begin(), x.end());
  for (const auto& l : net.layers()) {
    std::vector<double> z(l.spec.out_dim);
    for (std::size_t j = 0; j < l.spec.out_dim; ++j) {
      double s = l.bias[j];
      for (std::size_t i = 0; i < l.spec.in_dim; ++i) s += a[i] * l.weight(i, j);
      switch (l.spec.activation) {
        case Activation::relu: z[j] = s > 0 ? s : 0; break;
        case Activation::elu: z[j] = s > 0 ? s : std::exp(s) - 1; break;
        case Activation::none: z[j] = s; break;
      }
    }
    a = z;
  }
  return a;
}

}  // namespace

TEST(Init, ShapesAndZeroBiases) {
  auto rng = make_stream(1, "init");
  const Network net = init_network({{2, 3, Activation::relu}, {3, 2, Activation::none}}, rng);
  EXPECT_EQ(net.layers()[0].weight.shape(), (Shape{2, 3}));
  EXPECT_EQ(net.layers()[1].weight.shape(), (Shape{3, 2}));
  EXPECT_EQ(net.layers()[0].bias, Tensor({3}));
  EXPECT_EQ(net.layers()[1].bias, Tensor({2}));
}

TEST(Init, SameSeedSameParameters) {
  auto a = make_stream(7, "init"), b = make_stream(7, "init");
  const auto specs = mlp_specs(5, {4}, 3, Activation::relu);
  EXPECT_EQ(serialize_network(init_network(specs, a)), serialize_network(init_network(specs, b)));
}

TEST(Init, FanInScaleAt784) {
  auto rng = make_stream(2, "init");
  const Network net = init_network(mlp_specs(784, {256}, 10, Activation::relu), rng);
  double ss = 0.0;
  for (double w : net.layers()[0].weight.data()) ss += w * w;
  const double sd = std::sqrt(ss / net.layers()[0].weight.size());
  EXPECT_NEAR(sd, std::sqrt(2.0 / 784.0), 0.1 * std::sqrt(2.0 / 784.0));
}

TEST(Init, IncompatibleChainThrows) {
  auto rng = make_stream(1, "init");
  EXPECT_THROW(init_network({{2, 3, Activation::relu}, {4, 2, Activation::none}}, rng), DimensionError);
  EXPECT_THROW(init_network({{2, 3, Activation::relu}}, rng), DimensionError);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  auto rng = make_stream(1, "init");
  Network net = init_network(mlp_specs(3, {4}, 2, Activation::relu), rng);
  for (auto& l : net.layers())
    for (double& w : l.weight.data()) w = 0.0;
  const Tensor out = forward(net, Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(out, Tensor({2, 2}));
}

TEST(Forward, IdentityLayer) {
  const Network net({Layer{{3, 3, Activation::none}, Tensor::identity(3), Tensor({3})}});
  const Tensor x({1, 3}, {0.5, -2, 7});
  EXPECT_EQ(forward(net, x), x);
}

TEST(Forward, MatchesIndependentOracle) {
  auto rng = make_stream(4, "init");
  for (auto act : {Activation::relu, Activation::elu}) {
    Network net = init_network(mlp_specs(6, {5}, 4, act), rng);
    for (auto& l : net.layers())
      for (double& b : l.bias.data()) b = rng.normal();
    const Tensor x = gaussian(rng, {3, 6}, 1.0);
    const Tensor out = forward(net, x);
    for (std::size_t i = 0; i < 3; ++i) {
      const auto o = oracle_forward(net, x.row_span(i));
      for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(out(i, c), o[c], 1e-12);
    }
  }
}

TEST(Forward, DimensionMismatchThrows) {
  auto rng = make_stream(1, "init");
  const Network net = init_network(mlp_specs(3, {4}, 2, Activation::relu), rng);
  EXPECT_THROW(forward(net, Tensor({1, 4})), DimensionError);
}

TEST(Forward, RepeatedCallsAreIdentical) {
  auto rng = make_stream(8, "init");
  const Network net = init_network(mlp_specs(4, {8, 8}, 3, Activation::elu), rng);
  const Tensor x = gaussian(rng, {5, 4}, 1.0);
  EXPECT_EQ(forward(net, x), forward(net, x));
}

TEST(Loss, UniformLogitsGiveLogC) {
  const std::vector<double> logits(10, 0.3);
  EXPECT_NEAR(loss_ce(logits, 4), std::log(10.0), 1e-12);
  EXPECT_NEAR(loss_ce(logits, 4), 2.302585, 1e-6);
}

TEST(Loss, LabelOutOfRangeThrows) {
  const std::vector<double> logits(3, 0.0);
  EXPECT_THROW(loss_ce(logits, 3), ParameterError);
  EXPECT_THROW(loss_ce(logits, -1), ParameterError);
}

TEST(Loss, StableForLargeLogits) {
  const std::vector<double> logits = {1000.0, -1000.0, 999.0};
  EXPECT_TRUE(std::isfinite(loss_ce(logits, 1)));
  EXPECT_NEAR(loss_ce(logits, 1), 2000.0 + std::log1p(std::exp(-1.0)), 1e-9);
}

TEST(Backward, LogitGradientIsSoftmaxMinusOneHot) {
  const Network net({Layer{{3, 3, Activation::none}, Tensor::identity(3), Tensor({3})}});
  const Tensor x({1, 3}, {0.2, -1.0, 0.7});
  Trace trace;
  forward(net, x, &trace);
  const int label[1] = {2};
  const GradPair g = backward_ce(net, trace, label, GradTarget::input);
  const auto p = softmax(x.data());
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(g.grad_x[c], p[c] - (c == 2 ? 1.0 : 0.0), 1e-15);
}

TEST(Backward, FiniteDifferenceFidelity) {
  const auto r = verify::gradient_fidelity(20, 99);
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Activation, Values) {
  const auto e0 = activation_eval(Activation::elu, 0.0);
  EXPECT_EQ(e0.value, 0.0);
  EXPECT_EQ(e0.derivative, 1.0);
  EXPECT_EQ(activation_eval(Activation::elu, 1e-300).derivative, 1.0);
  const auto r = activation_eval(Activation::relu, -2.0);
  EXPECT_EQ(r.value, 0.0);
  EXPECT_EQ(r.derivative, 0.0);
  EXPECT_EQ(activation_eval(Activation::relu, 0.0).derivative, 0.0);
  const auto e1 = activation_eval(Activation::elu, -1.0);
  EXPECT_NEAR(e1.value, -0.632121, 1e-6);
  EXPECT_NEAR(e1.derivative, 0.367879, 1e-6);
}

TEST(Persistence, RoundTripIsBitwise) {
  auto rng = make_stream(3, "init");
  const Network net = init_network(mlp_specs(7, {5, 4}, 3, Activation::elu), rng);
  const auto path = std::filesystem::temp_directory_path() / "nal_roundtrip.nalnet";
  save_network(net, path.string());
  const Network back = load_network(path.string());
  EXPECT_EQ(serialize_network(back), serialize_network(net));
  EXPECT_TRUE(back.layers() == net.layers());
  std::filesystem::remove(path);
}

TEST(Persistence, CorruptionIsDetected) {
  auto rng = make_stream(3, "init");
  std::string bytes = serialize_network(init_network(mlp_specs(3, {2}, 2, Activation::relu), rng));
  std::string flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(deserialize_network(flipped), FormatError);
  EXPECT_THROW(deserialize_network(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(deserialize_network("not a model"), FormatError);
}
