#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "nal/dataset.hpp"

using namespace nal;

namespace {

Dataset two_image_fixture() {
  // 2 images of 2x2 pixels with known bytes
  std::vector<double> px = {0.0, 1.0, 51.0 / 255.0, 204.0 / 255.0, 1.0, 0.0, 128.0 / 255.0, 3.0 / 255.0};
  return Dataset{Tensor({2, 4}, px), {7, 2}, "fixture", 10};
}

std::string be32(std::uint32_t v) {
  std::string s;
  for (int shift = 24; shift >= 0; shift -= 8) s.push_back(static_cast<char>((v >> shift) & 0xFF));
  return s;
}

Dataset balanced(std::size_t per_class, int C) {
  std::vector<double> x;
  std::vector<int> y;
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      x.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(per_class));
      y.push_back(c);
    }
  return Dataset{Tensor({x.size(), 1}, x), y, "balanced", C};
}

}  // namespace

TEST(Idx, FixtureRoundTrip) {
  const Dataset ds = two_image_fixture();
  const auto [img, lab] = encode_idx(ds, 2, 2);
  EXPECT_EQ(img.substr(0, 4), be32(2051));
  EXPECT_EQ(lab.substr(0, 4), be32(2049));
  const Dataset back = parse_idx(img, lab);
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.dim(), 4u);
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) EXPECT_DOUBLE_EQ(back.inputs[i], ds.inputs[i]);
  EXPECT_EQ(back.inputs[2], 51.0 / 255.0);
}

TEST(Idx, WrongMagicRejected) {
  auto [img, lab] = encode_idx(two_image_fixture(), 2, 2);
  EXPECT_THROW(parse_idx(lab, lab), FormatError);
  EXPECT_THROW(parse_idx(img, img), FormatError);
  std::string bad = img;
  bad.replace(0, 4, be32(2052));
  EXPECT_THROW(parse_idx(bad, lab), FormatError);
}

TEST(Idx, TruncationAndCountMismatchRejected) {
  auto [img, lab] = encode_idx(two_image_fixture(), 2, 2);
  EXPECT_THROW(parse_idx(img.substr(0, img.size() - 1), lab), FormatError);
  EXPECT_THROW(parse_idx(img, lab.substr(0, lab.size() - 1)), FormatError);
  EXPECT_THROW(parse_idx(img.substr(0, 10), lab), FormatError);
  std::string lab3 = lab;
  lab3.replace(4, 4, be32(3));
  lab3.push_back(1);
  EXPECT_THROW(parse_idx(img, lab3), FormatError);
}

TEST(Idx, CorruptedHeadersNeverCrash) {
  auto [img, lab] = encode_idx(two_image_fixture(), 2, 2);
  auto rng = make_stream(1, "fuzz");
  for (int t = 0; t < 500; ++t) {
    std::string i2 = img, l2 = lab;
    std::string& target = rng.below(2) ? i2 : l2;
    target[rng.below(std::min<std::size_t>(16, target.size()))] = static_cast<char>(rng.below(256));
    try {
      const Dataset ds = parse_idx(i2, l2);
      ds.validate();
    } catch (const Error&) {
    }
  }
}

TEST(Idx, ShippedMnistFiles) {
  const std::filesystem::path dir = std::filesystem::path(NAL_SOURCE_DIR) / "data" / "mnist";
  const Dataset train = load_idx((dir / "train-images-idx3-ubyte").string(), (dir / "train-labels-idx1-ubyte").string());
  const Dataset test = load_idx((dir / "t10k-images-idx3-ubyte").string(), (dir / "t10k-labels-idx1-ubyte").string());
  EXPECT_EQ(train.dim(), 784u);
  EXPECT_EQ(train.num_classes, 10);
  EXPECT_EQ(train.size() + test.size(), 10000u);
  EXPECT_NO_THROW(train.validate());
}

TEST(Subset, FullSizeIsPermutation) {
  const Dataset ds = balanced(5, 3);
  auto rng = make_stream(1, "s");
  auto idx = stratified_indices(ds, ds.size(), rng);
  std::sort(idx.begin(), idx.end());
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(Subset, ExactlyTenPerClass) {
  const Dataset ds = balanced(30, 10);
  auto rng = make_stream(2, "s");
  const Dataset s = subset(ds, 100, rng);
  std::map<int, int> counts;
  for (int y : s.labels) ++counts[y];
  for (int c = 0; c < 10; ++c) EXPECT_EQ(counts[c], 10);
}

TEST(Subset, StratificationBoundForManySizes) {
  const Dataset ds = balanced(20, 7);
  for (std::size_t n = 7; n <= ds.size(); n += 9) {
    auto rng = make_stream(3, "s", {n});
    const Dataset s = subset(ds, n, rng);
    std::map<int, double> counts;
    for (int y : s.labels) ++counts[y];
    for (int c = 0; c < 7; ++c) EXPECT_LE(std::abs(counts[c] - static_cast<double>(n) / 7.0), 1.0) << n;
  }
}

TEST(Subset, DeterministicAndBounded) {
  const Dataset ds = balanced(10, 4);
  auto a = make_stream(9, "s"), b = make_stream(9, "s");
  EXPECT_EQ(stratified_indices(ds, 13, a), stratified_indices(ds, 13, b));
  auto c = make_stream(9, "s");
  EXPECT_THROW(stratified_indices(ds, 41, c), ParameterError);
}

TEST(Blobs, BalancedInUnitBox) {
  auto rng = make_stream(1, "b");
  const Dataset ds = make_blobs(200, 2, 2, 4.0, rng);
  EXPECT_EQ(std::count(ds.labels.begin(), ds.labels.end(), 0), 100);
  EXPECT_NO_THROW(ds.validate());
}

TEST(Blobs, InvalidDimensionThrows) {
  auto rng = make_stream(1, "b");
  EXPECT_THROW(make_blobs(10, 3, 2, 4.0, rng), DimensionError);
}

TEST(Blobs, LargeSeparationIsCentroidSeparable) {
  for (int d : {1, 2}) {
    auto rng = make_stream(2, "b");
    const Dataset ds = make_blobs(300, d, 3, 40.0, rng);
    const auto cent = blob_centroids(d, 3);
    int correct = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      int best = 0;
      for (int c = 1; c < 3; ++c)
        if (squared_distance(ds.inputs.row_span(i), cent[c]) < squared_distance(ds.inputs.row_span(i), cent[best])) best = c;
      correct += best == ds.labels[i];
    }
    EXPECT_EQ(correct, 300);
  }
}

TEST(Blobs, ClassMeansNearCentroids) {
  auto rng = make_stream(4, "b");
  const int C = 2, d = 2;
  const std::size_t n = 2000;
  const Dataset ds = make_blobs(n, d, C, 4.0, rng);
  const double sigma = blob_sigma(d, C, 4.0);
  const auto cent = blob_centroids(d, C);
  for (int c = 0; c < C; ++c)
    for (int k = 0; k < d; ++k) {
      double s = 0.0;
      for (std::size_t i = c; i < n; i += C) s += ds.inputs(i, k);
      EXPECT_LE(std::abs(s / (n / C) - cent[c][k]), 3.0 * sigma / std::sqrt(n / C));
    }
}

TEST(Csv, RoundTripIsExact) {
  auto rng = make_stream(5, "b");
  const Dataset ds = make_blobs(37, 2, 3, 4.0, rng);
  const std::string text = dataset_to_csv(ds);
  EXPECT_EQ(text.substr(0, text.find('\n')), "x0,x1,label");
  const Dataset back = dataset_from_csv(text, 3);
  EXPECT_EQ(back.inputs, ds.inputs);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(Csv, MalformedInputRejected) {
  EXPECT_THROW(dataset_from_csv("", 2), FormatError);
  EXPECT_THROW(dataset_from_csv("a,b\n1,0\n", 2), FormatError);
  EXPECT_THROW(dataset_from_csv("x0,label\nfoo,1\n", 2), FormatError);
  EXPECT_THROW(dataset_from_csv("x0,label\n0.5,7\n", 2), FormatError);
  EXPECT_THROW(dataset_from_csv("x0,label\n1.5,1\n", 2), FormatError);
}
