#pragma once

// Datasets: MNIST IDX ingestion, stratified subsets, low-dimensional
// Gaussian blobs, and CSV persistence.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "nal/error.hpp"
#include "nal/rng.hpp"
#include "nal/tensor.hpp"

namespace nal {

struct Dataset {
  Tensor inputs;            // [n x d], entries in [0, 1]
  std::vector<int> labels;  // n entries in [0, num_classes)
  std::string name;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return inputs.cols(); }

  void validate() const {
    if (inputs.rank() != 2 || inputs.rows() != labels.size()) {
      throw DimensionError("dataset '" + name + "': input rows do not match label count");
    }
    if (num_classes <= 0) throw ParameterError("dataset '" + name + "': num_classes must be positive");
    for (int y : labels) {
      if (y < 0 || y >= num_classes) throw FormatError("dataset '" + name + "': label out of range");
    }
    for (double v : inputs.data()) {
      if (!(v >= 0.0 && v <= 1.0)) throw FormatError("dataset '" + name + "': input outside [0,1]");
    }
  }

  /// Rows [begin, end) as a batch tensor.
  Tensor rows(std::size_t begin, std::size_t end) const {
    const std::size_t d = dim();
    std::vector<double> v(inputs.data().begin() + static_cast<std::ptrdiff_t>(begin * d),
                          inputs.data().begin() + static_cast<std::ptrdiff_t>(end * d));
    return Tensor({end - begin, d}, std::move(v));
  }

  /// Rows at the given indices, in order.
  Dataset select(const std::vector<std::size_t>& idx) const {
    const std::size_t d = dim();
    std::vector<double> v;
    v.reserve(idx.size() * d);
    std::vector<int> y;
    y.reserve(idx.size());
    for (std::size_t i : idx) {
      auto r = inputs.row_span(i);
      v.insert(v.end(), r.begin(), r.end());
      y.push_back(labels[i]);
    }
    return Dataset{Tensor({idx.size(), d}, std::move(v)), std::move(y), name, num_classes};
  }
};

/// FNV-1a over the raw input bytes and labels; recorded in manifests.
inline std::uint64_t dataset_checksum(const Dataset& ds) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001B3ULL;
    }
  };
  feed(ds.inputs.data().data(), ds.inputs.size() * sizeof(double));
  feed(ds.labels.data(), ds.labels.size() * sizeof(int));
  return h;
}

// ---------------------------------------------------------------------------
// IDX

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& what) {
  if (offset + 4 > bytes.size()) throw FormatError(what + ": truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + static_cast<std::size_t>(i)]);
  return v;
}

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xFF));
}

}  // namespace detail

/// Parses in-memory IDX image and label files. Pixels are scaled by 1/255.
inline Dataset parse_idx(const std::string& image_bytes, const std::string& label_bytes, std::string name = "idx") {
  if (const auto magic = detail::read_be32(image_bytes, 0, "image file"); magic != kIdxImageMagic) {
    throw FormatError("image file: bad magic " + std::to_string(magic) + " (expected 2051)");
  }
  if (const auto magic = detail::read_be32(label_bytes, 0, "label file"); magic != kIdxLabelMagic) {
    throw FormatError("label file: bad magic " + std::to_string(magic) + " (expected 2049)");
  }
  const std::size_t n = detail::read_be32(image_bytes, 4, "image file");
  const std::size_t rows = detail::read_be32(image_bytes, 8, "image file");
  const std::size_t cols = detail::read_be32(image_bytes, 12, "image file");
  const std::size_t n_labels = detail::read_be32(label_bytes, 4, "label file");
  if (n != n_labels) {
    throw FormatError("image count " + std::to_string(n) + " != label count " + std::to_string(n_labels));
  }
  if (n == 0 || rows == 0 || cols == 0) throw FormatError("image file: empty dimensions");
  const std::size_t d = rows * cols;
  if (image_bytes.size() < 16 + n * d) throw FormatError("image file truncated");
  if (label_bytes.size() < 8 + n) throw FormatError("label file truncated");

  std::vector<double> pixels(n * d);
  for (std::size_t i = 0; i < n * d; ++i) pixels[i] = static_cast<unsigned char>(image_bytes[16 + i]) / 255.0;
  std::vector<int> labels(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<unsigned char>(label_bytes[8 + i]);
    max_label = std::max(max_label, labels[i]);
  }
  // MNIST-style files always carry ten classes
  Dataset ds{Tensor({n, d}, std::move(pixels)), std::move(labels), std::move(name), std::max(10, max_label + 1)};
  ds.validate();
  return ds;
}

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  return parse_idx(detail::read_file(images_path), detail::read_file(labels_path), images_path);
}

/// Encodes a dataset with square images as IDX bytes (pixels rounded to
/// bytes). Returns {image_bytes, label_bytes}.
inline std::pair<std::string, std::string> encode_idx(const Dataset& ds, std::uint32_t rows, std::uint32_t cols) {
  if (static_cast<std::size_t>(rows) * cols != ds.dim()) throw DimensionError("encode_idx: rows*cols != dim");
  std::string img, lab;
  detail::put_be32(img, kIdxImageMagic);
  detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
  detail::put_be32(img, rows);
  detail::put_be32(img, cols);
  for (double v : ds.inputs.data()) img.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  detail::put_be32(lab, kIdxLabelMagic);
  detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.push_back(static_cast<char>(y));
  return {img, lab};
}

// ---------------------------------------------------------------------------
// Sampling

/// Class-stratified sample of n indices without replacement. Every class
/// gets floor(n/C) or ceil(n/C) rows when it has enough of them; a shortfall
/// in one class is filled from the others. Returned in shuffled order.
inline std::vector<std::size_t> stratified_indices(const Dataset& ds, std::size_t n, RngStream& rng) {
  if (n > ds.size()) {
    throw ParameterError("subset of " + std::to_string(n) + " requested from " + std::to_string(ds.size()) + " rows");
  }
  const auto C = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::vector<std::size_t>> by_class(C);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  for (auto& members : by_class) {
    for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
  }
  std::vector<std::size_t> quota(C, n / C);
  for (std::size_t c = 0; c < n % C; ++c) ++quota[c];
  std::size_t deficit = 0;
  for (std::size_t c = 0; c < C; ++c) {
    if (quota[c] > by_class[c].size()) {
      deficit += quota[c] - by_class[c].size();
      quota[c] = by_class[c].size();
    }
  }
  while (deficit > 0) {
    bool moved = false;
    for (std::size_t c = 0; c < C && deficit > 0; ++c) {
      if (quota[c] < by_class[c].size()) {
        ++quota[c];
        --deficit;
        moved = true;
      }
    }
    if (!moved) break;
  }
  std::vector<std::size_t> out;
  out.reserve(n);
  for (std::size_t c = 0; c < C; ++c) out.insert(out.end(), by_class[c].begin(), by_class[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  return out;
}

inline Dataset subset(const Dataset& ds, std::size_t n, RngStream& rng) {
  Dataset out = ds.select(stratified_indices(ds, n, rng));
  out.name = ds.name + "[subset " + std::to_string(n) + "]";
  return out;
}

/// Centroids used by make_blobs: evenly spaced on [0.2, 0.8] for d = 1, on
/// a circle of radius 0.3 around (0.5, 0.5) for d = 2.
inline std::vector<std::vector<double>> blob_centroids(int d, int C) {
  std::vector<std::vector<double>> c(static_cast<std::size_t>(C));
  for (int k = 0; k < C; ++k) {
    if (d == 1) {
      c[static_cast<std::size_t>(k)] = {C == 1 ? 0.5 : 0.2 + 0.6 * k / (C - 1)};
    } else {
      const double angle = 2.0 * std::numbers::pi * k / C;
      c[static_cast<std::size_t>(k)] = {0.5 + 0.3 * std::cos(angle), 0.5 + 0.3 * std::sin(angle)};
    }
  }
  return c;
}

/// Per-coordinate standard deviation of the blob clusters: the smallest
/// centroid spacing divided by `separation`.
inline double blob_sigma(int d, int C, double separation) {
  const auto c = blob_centroids(d, C);
  double best = 1.0;
  for (std::size_t i = 0; i < c.size(); ++i)
    for (std::size_t j = i + 1; j < c.size(); ++j) best = std::min(best, std::sqrt(squared_distance(c[i], c[j])));
  return best / separation;
}

/// Class-conditional Gaussian clusters clipped to [0,1]^d, labels balanced
/// (row i has label i mod C).
inline Dataset make_blobs(std::size_t n, int d, int C, double separation, RngStream& rng) {
  if (d != 1 && d != 2) throw DimensionError("make_blobs supports d in {1, 2}, got " + std::to_string(d));
  if (C < 2) throw ParameterError("make_blobs needs at least two classes");
  if (!(separation > 0.0)) throw ParameterError("make_blobs: separation must be > 0");
  if (n == 0) throw ParameterError("make_blobs: n must be positive");
  const auto centroids = blob_centroids(d, C);
  const double sigma = blob_sigma(d, C, separation);
  std::vector<double> x(n * static_cast<std::size_t>(d));
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % static_cast<std::size_t>(C));
    y[i] = label;
    for (int k = 0; k < d; ++k) {
      const double v = centroids[static_cast<std::size_t>(label)][static_cast<std::size_t>(k)] + sigma * rng.normal();
      x[i * static_cast<std::size_t>(d) + static_cast<std::size_t>(k)] = std::clamp(v, 0.0, 1.0);
    }
  }
  return Dataset{Tensor({n, static_cast<std::size_t>(d)}, std::move(x)), std::move(y),
                 "blobs-d" + std::to_string(d) + "-c" + std::to_string(C), C};
}

// ---------------------------------------------------------------------------
// CSV: header x0,...,x{d-1},label

inline std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

inline std::string dataset_to_csv(const Dataset& ds) {
  std::string out;
  for (std::size_t k = 0; k < ds.dim(); ++k) out += "x" + std::to_string(k) + ",";
  out += "label\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.inputs.row_span(i)) out += format_double(v) + ",";
    out += std::to_string(ds.labels[i]) + "\n";
  }
  return out;
}

inline Dataset dataset_from_csv(const std::string& text, int num_classes, std::string name = "csv") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw FormatError("csv: empty input");
  std::size_t d = 0;
  {
    std::istringstream h(line);
    std::string col;
    std::vector<std::string> cols;
    while (std::getline(h, col, ',')) cols.push_back(col);
    if (cols.size() < 2 || cols.back() != "label") throw FormatError("csv: header must be x0,...,label");
    d = cols.size() - 1;
    for (std::size_t k = 0; k < d; ++k)
      if (cols[k] != "x" + std::to_string(k)) throw FormatError("csv: unexpected column '" + cols[k] + "'");
  }
  std::vector<double> x;
  std::vector<int> y;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::size_t k = 0;
    while (std::getline(row, cell, ',')) {
      const char* b = cell.data();
      const char* e = cell.data() + cell.size();
      if (k < d) {
        double v = 0;
        if (std::from_chars(b, e, v).ec != std::errc{}) throw FormatError("csv line " + std::to_string(line_no) + ": bad number");
        x.push_back(v);
      } else if (k == d) {
        int v = 0;
        if (std::from_chars(b, e, v).ec != std::errc{}) throw FormatError("csv line " + std::to_string(line_no) + ": bad label");
        y.push_back(v);
      }
      ++k;
    }
    if (k != d + 1) throw FormatError("csv line " + std::to_string(line_no) + ": wrong column count");
  }
  if (y.empty()) throw FormatError("csv: no rows");
  Dataset ds{Tensor({y.size(), d}, std::move(x)), std::move(y), std::move(name), num_classes};
  ds.validate();
  return ds;
}

}  // namespace nal
