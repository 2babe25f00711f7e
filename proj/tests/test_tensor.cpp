#include <gtest/gtest.h>

#include <cmath>

#include "nal/error.hpp"
#include "nal/rng.hpp"
#include "nal/tensor.hpp"

using namespace nal;

namespace {

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
  return c;
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor a({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(matmul(Tensor::identity(2), a), a);
}

TEST(Matmul, RowTimesColumnIsDot) {
  const Tensor c = matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4}));
  ASSERT_EQ(c.shape(), (Shape{1, 1}));
  EXPECT_EQ(c[0], 11.0);
}

TEST(Matmul, MatchesTripleLoop) {
  auto rng = make_stream(5, "matmul-test");
  for (auto [m, k, n] : {std::tuple{5, 7, 3}, std::tuple{64, 64, 64}, std::tuple{1, 33, 17}}) {
    const Tensor a = gaussian(rng, {std::size_t(m), std::size_t(k)}, 1.0);
    const Tensor b = gaussian(rng, {std::size_t(k), std::size_t(n)}, 1.0);
    const Tensor c = matmul(a, b), o = naive_matmul(a, b);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_LE(std::abs(c[i] - o[i]), 1e-12 * std::max(1.0, std::abs(o[i])));
    }
  }
}

TEST(Matmul, ShapeMismatchThrows) {
  EXPECT_THROW(matmul(Tensor({2, 3}), Tensor({2, 3})), DimensionError);
}

TEST(TensorCtor, RejectsBadShapesAndNonFinite) {
  EXPECT_THROW(Tensor({2, 0}), DimensionError);
  EXPECT_THROW(Tensor({3}, {1.0, 2.0}), DimensionError);
  EXPECT_THROW(Tensor({2}, {1.0, NAN}), NonFiniteError);
}

TEST(Gaussian, ZeroSigmaGivesZeros) {
  auto rng = make_stream(1, "g");
  const Tensor z = gaussian(rng, {3}, 0.0);
  EXPECT_EQ(z, Tensor({3}, {0, 0, 0}));
}

TEST(Gaussian, NegativeSigmaThrows) {
  auto rng = make_stream(1, "g");
  EXPECT_THROW(gaussian(rng, {3}, -0.1), ParameterError);
}

TEST(Gaussian, MomentsAtOneMillion) {
  auto rng = make_stream(42, "moments");
  const std::size_t n = 1000000;
  const Tensor t = gaussian(rng, {n}, 1.0);
  double s = 0.0, ss = 0.0;
  for (double v : t.data()) {
    s += v;
    ss += v * v;
  }
  const double mean = s / n;
  const double sd = std::sqrt(ss / n - mean * mean);
  EXPECT_LT(std::abs(mean), 0.005);
  EXPECT_LT(std::abs(sd - 1.0), 0.005);
}

TEST(Rng, SameSeedAndStreamReproduce) {
  RngStream a(42, 0), b(42, 0);
  for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  RngStream c(42, 0), d(42, 0);
  EXPECT_EQ(gaussian(c, {50}, 1.0), gaussian(d, {50}, 1.0));
}

TEST(Rng, DistinctStreamsDiffer) {
  RngStream a(42, derive_stream(42, "x", {0})), b(42, derive_stream(42, "x", {1}));
  int equal = 0;
  for (int i = 0; i < 100; ++i) equal += a.next_u64() == b.next_u64();
  EXPECT_EQ(equal, 0);
  EXPECT_NE(derive_stream(1, "inner", {}), derive_stream(1, "update", {}));
}

TEST(Rng, BelowIsInRangeAndCoversIt) {
  auto rng = make_stream(3, "below");
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = rng.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

TEST(Rng, UniformInUnitInterval) {
  auto rng = make_stream(9, "u");
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Elementwise, NormAxpyClamp) {
  EXPECT_EQ(l2_norm(Tensor({2}, {3, 4})), 5.0);
  EXPECT_EQ(l2_norm(Tensor({3})), 0.0);
  EXPECT_EQ(axpy(2.0, Tensor({2}, {1, 1}), Tensor({2}, {0, 1})), Tensor({2}, {2, 3}));
  EXPECT_EQ(clamp(Tensor({3}, {-1, 0.5, 2}), 0.0, 1.0), Tensor({3}, {0, 0.5, 1}));
}

TEST(Elementwise, AxpyShapeMismatchThrows) {
  EXPECT_THROW(axpy(1.0, Tensor({2}), Tensor({3})), DimensionError);
}
