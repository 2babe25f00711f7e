#pragma once

// Dense feed-forward classifiers with exact gradients of the softmax
// cross-entropy with respect to both parameters and inputs.
//
// Weights of a layer are stored as [in_dim x out_dim] so that a batch
// forward pass is X[m x in] * W[in x out] + b. The ReLU derivative at exactly
// 0 is taken as 0.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nal/error.hpp"
#include "nal/parallel.hpp"
#include "nal/rng.hpp"
#include "nal/tensor.hpp"

namespace nal {

enum class Activation : std::uint8_t { relu = 0, elu = 1, none = 2 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::elu: return "elu";
    case Activation::none: return "none";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  if (s == "none") return Activation::none;
  throw ParameterError("unknown activation '" + std::string(s) + "'");
}

struct ActivationValue {
  double value;
  double derivative;
};

inline ActivationValue activation_eval(Activation kind, double v) {
  switch (kind) {
    case Activation::relu: return v > 0.0 ? ActivationValue{v, 1.0} : ActivationValue{0.0, 0.0};
    case Activation::elu: {
      if (v > 0.0) return {v, 1.0};
      const double e = std::exp(v);
      return {std::expm1(v), e};
    }
    case Activation::none: return {v, 1.0};
  }
  return {v, 1.0};
}

struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  Activation activation = Activation::none;

  bool operator==(const LayerSpec&) const = default;
};

struct Layer {
  LayerSpec spec;
  Tensor weight;  // [in_dim x out_dim]
  Tensor bias;    // [out_dim]

  bool operator==(const Layer&) const = default;
};

inline void validate_chain(const std::vector<LayerSpec>& specs) {
  if (specs.empty()) throw DimensionError("network needs at least one layer");
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].in_dim == 0 || specs[i].out_dim == 0) throw DimensionError("layer dimensions must be positive");
    if (i + 1 < specs.size() && specs[i].out_dim != specs[i + 1].in_dim) {
      throw DimensionError("layer " + std::to_string(i) + " out_dim " + std::to_string(specs[i].out_dim) +
                           " != layer " + std::to_string(i + 1) + " in_dim " + std::to_string(specs[i + 1].in_dim));
    }
  }
  if (specs.back().activation != Activation::none) throw DimensionError("last layer must produce raw logits");
}

class Network {
 public:
  Network() = default;

  explicit Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
    std::vector<LayerSpec> specs;
    for (const auto& l : layers_) {
      specs.push_back(l.spec);
      if (l.weight.shape() != Shape{l.spec.in_dim, l.spec.out_dim} || l.bias.shape() != Shape{l.spec.out_dim}) {
        throw DimensionError("layer parameter shapes do not match its spec");
      }
      l.weight.require_finite("Network");
      l.bias.require_finite("Network");
    }
    validate_chain(specs);
  }

  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::size_t input_dim() const { return layers_.front().spec.in_dim; }
  std::size_t num_classes() const { return layers_.back().spec.out_dim; }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> s;
    for (const auto& l : layers_) s.push_back(l.spec);
    return s;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
  }

  bool operator==(const Network&) const = default;

 private:
  std::vector<Layer> layers_;
};

/// Scaled-Gaussian fan-in initialization (std sqrt(2 / in_dim)), zero biases.
inline Network init_network(const std::vector<LayerSpec>& specs, RngStream& rng) {
  validate_chain(specs);
  std::vector<Layer> layers;
  for (const auto& s : specs) {
    Layer l{s, gaussian(rng, {s.in_dim, s.out_dim}, std::sqrt(2.0 / static_cast<double>(s.in_dim))),
            Tensor({s.out_dim})};
    layers.push_back(std::move(l));
  }
  return Network(std::move(layers));
}

/// Hidden widths plus output layer; e.g. mlp(784, {256, 256}, 10, relu).
inline std::vector<LayerSpec> mlp_specs(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                                        std::size_t num_classes, Activation hidden_activation) {
  std::vector<LayerSpec> specs;
  std::size_t in = input_dim;
  for (std::size_t h : hidden) {
    specs.push_back({in, h, hidden_activation});
    in = h;
  }
  specs.push_back({in, num_classes, Activation::none});
  return specs;
}

/// Layer inputs and pre-activations of a batch forward pass.
struct Trace {
  std::vector<Tensor> inputs;          // inputs[l] feeds layer l; inputs[0] is the batch
  std::vector<Tensor> preactivations;  // z_l = inputs[l] * W_l + b_l
};

struct ParamGrad {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;

  static ParamGrad zeros_like(const Network& net) {
    ParamGrad g;
    for (const auto& l : net.layers()) {
      g.weights.emplace_back(l.weight.shape());
      g.biases.emplace_back(l.bias.shape());
    }
    return g;
  }
};

struct GradPair {
  ParamGrad grad_theta;
  Tensor grad_x;
};

namespace detail {

inline void check_input(const Network& net, const Tensor& x) {
  if (x.rank() != 2 || x.shape()[1] != net.input_dim()) {
    throw DimensionError("network expects [batch x " + std::to_string(net.input_dim()) + "] input, got " +
                         shape_string(x.shape()));
  }
}

inline void check_labels(const Network& net, std::span<const int> labels, std::size_t rows) {
  if (labels.size() != rows) throw DimensionError("label count does not match batch rows");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= net.num_classes()) {
      throw ParameterError("label " + std::to_string(y) + " outside [0, " + std::to_string(net.num_classes()) + ")");
    }
  }
}

}  // namespace detail

/// Logits for a batch x[m x d]. When trace is given it receives everything
/// backward needs.
inline Tensor forward(const Network& net, const Tensor& x, Trace* trace = nullptr, int threads = 1) {
  detail::check_input(net, x);
  const std::size_t m = x.rows();
  Tensor current = x;
  if (trace) {
    trace->inputs.clear();
    trace->preactivations.clear();
  }
  for (const auto& layer : net.layers()) {
    const std::size_t in = layer.spec.in_dim, out = layer.spec.out_dim;
    Tensor z({m, out});
    Tensor a({m, out});
    parallel_for(m, threads, [&](std::size_t b, std::size_t e) {
      kernels::gemm_nn(current.data().subspan(b * in, (e - b) * in), layer.weight.data(),
                       z.data().subspan(b * out, (e - b) * out), e - b, in, out);
      for (std::size_t i = b; i < e; ++i) {
        for (std::size_t j = 0; j < out; ++j) {
          z(i, j) += layer.bias[j];
          a(i, j) = activation_eval(layer.spec.activation, z(i, j)).value;
        }
      }
    });
    if (trace) {
      trace->inputs.push_back(std::move(current));
      trace->preactivations.push_back(std::move(z));
    }
    current = std::move(a);
  }
  current.require_finite("forward");
  return current;
}

/// log(sum(exp(v))) with the max shift.
inline double log_sum_exp(std::span<const double> v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

/// -log softmax(logits)[label].
inline double loss_ce(std::span<const double> logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ParameterError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
  return log_sum_exp(logits) - logits[static_cast<std::size_t>(label)];
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logits[i] - lse);
  return p;
}

/// Per-row cross-entropy of a logits batch.
inline std::vector<double> row_losses(const Tensor& logits, std::span<const int> labels) {
  std::vector<double> out(logits.rows());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = loss_ce(logits.row_span(i), labels[i]);
  return out;
}

/// Lowest index among the maxima.
inline int argmax(std::span<const double> v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

enum class GradTarget { theta, input, both };

/// Backpropagates dL/dlogits = row_weight[i] * (softmax - onehot) through
/// the traced pass. With row_weight = 1/m this is the gradient of the mean
/// batch loss; with row_weight = 1 grad_x holds per-row gradients of each
/// row's own loss.
inline GradPair backward_weighted(const Network& net, const Trace& trace, std::span<const int> labels,
                                  std::span<const double> row_weight, GradTarget target, int threads = 1) {
  const std::size_t L = net.layers().size();
  if (trace.inputs.size() != L) throw DimensionError("trace does not belong to this network");
  const std::size_t m = trace.inputs[0].rows();
  detail::check_labels(net, labels, m);
  const std::size_t C = net.num_classes();

  // delta at the logits
  Tensor delta({m, C});
  parallel_for(m, threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      auto p = softmax(trace.preactivations[L - 1].row_span(i));
      for (std::size_t c = 0; c < C; ++c) {
        const double onehot = static_cast<int>(c) == labels[i] ? 1.0 : 0.0;
        delta(i, c) = row_weight[i] * (p[c] - onehot);
      }
    }
  });

  const bool want_theta = target != GradTarget::input;
  const bool want_x = target != GradTarget::theta;
  GradPair out;
  if (want_theta) out.grad_theta = ParamGrad::zeros_like(net);

  for (std::size_t l = L; l-- > 0;) {
    const auto& layer = net.layers()[l];
    const std::size_t in = layer.spec.in_dim, out_dim = layer.spec.out_dim;
    if (want_theta) {
      auto& gw = out.grad_theta.weights[l];
      auto& gb = out.grad_theta.biases[l];
      const auto& a = trace.inputs[l];
      // partition over weight rows; each entry sums batch rows in order
      parallel_for(in, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = 0; i < m; ++i) {
          const double* di = delta.data().data() + i * out_dim;
          for (std::size_t p = b; p < e; ++p) {
            const double av = a(i, p);
            if (av == 0.0) continue;
            double* g = gw.data().data() + p * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) g[j] += av * di[j];
          }
        }
      });
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < out_dim; ++j) gb[j] += delta(i, j);
    }
    if (l == 0 && !want_x) break;
    Tensor wt({out_dim, in});
    kernels::transpose(layer.weight.data(), wt.data(), in, out_dim);
    Tensor next({m, in});
    parallel_for(m, threads, [&](std::size_t b, std::size_t e) {
      kernels::gemm_nn(delta.data().subspan(b * out_dim, (e - b) * out_dim), wt.data(),
                       next.data().subspan(b * in, (e - b) * in), e - b, out_dim, in);
      if (l > 0) {
        const auto& z = trace.preactivations[l - 1];
        const Activation act = net.layers()[l - 1].spec.activation;
        for (std::size_t i = b; i < e; ++i)
          for (std::size_t j = 0; j < in; ++j) next(i, j) *= activation_eval(act, z(i, j)).derivative;
      }
    });
    delta = std::move(next);
  }
  if (want_x) {
    out.grad_x = std::move(delta);
    out.grad_x.require_finite("backward");
  }
  return out;
}

/// Exact gradient of the mean cross-entropy of the traced batch.
inline GradPair backward_ce(const Network& net, const Trace& trace, std::span<const int> labels,
                            GradTarget target = GradTarget::both, int threads = 1) {
  const std::size_t m = trace.inputs.empty() ? 0 : trace.inputs[0].rows();
  std::vector<double> w(m, 1.0 / static_cast<double>(m));
  return backward_weighted(net, trace, labels, w, target, threads);
}

/// Per-row losses and per-row input gradients (each row differentiated
/// against its own loss).
struct RowLossGrad {
  std::vector<double> losses;
  Tensor grad_x;
};

inline RowLossGrad loss_and_input_grad(const Network& net, const Tensor& x, std::span<const int> labels,
                                       int threads = 1) {
  Trace trace;
  Tensor logits = forward(net, x, &trace, threads);
  detail::check_labels(net, labels, x.rows());
  RowLossGrad r;
  r.losses = row_losses(logits, labels);
  std::vector<double> ones(x.rows(), 1.0);
  r.grad_x = backward_weighted(net, trace, labels, ones, GradTarget::input, threads).grad_x;
  return r;
}

/// theta <- theta - step * grad.
inline void sgd_step(Network& net, const ParamGrad& g, double step) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto w = net.layers()[l].weight.data();
    auto b = net.layers()[l].bias.data();
    auto gw = g.weights[l].data();
    auto gb = g.biases[l].data();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= step * gw[i];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= step * gb[i];
  }
}

// ---------------------------------------------------------------------------
// Persistence
//
// Binary layout, all integers little-endian:
//   bytes 0..7   magic "NALNET\0\0"
//   u32          format version (1)
//   u32          layer count L
//   L times:     u64 in_dim, u64 out_dim, u8 activation (0 relu, 1 elu, 2 none)
//   L times:     in_dim*out_dim f64 weights (row-major [in x out]), out_dim f64 biases
//   u64          FNV-1a 64 checksum of every preceding byte

inline constexpr char kModelMagic[8] = {'N', 'A', 'L', 'N', 'E', 'T', 0, 0};
inline constexpr std::uint32_t kModelVersion = 1;

namespace detail {

struct ByteWriter {
  std::string bytes;
  template <class T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    bytes.append(buf, sizeof(T));
  }
};

struct ByteReader {
  std::string_view bytes;
  std::size_t pos = 0;
  template <class T>
  T get() {
    if (pos + sizeof(T) > bytes.size()) throw FormatError("model file truncated");
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace detail

inline std::string serialize_network(const Network& net) {
  static_assert(std::endian::native == std::endian::little, "model format assumes a little-endian host");
  detail::ByteWriter w;
  w.bytes.append(kModelMagic, sizeof(kModelMagic));
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    w.put<std::uint64_t>(l.spec.in_dim);
    w.put<std::uint64_t>(l.spec.out_dim);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(l.spec.activation));
  }
  for (const auto& l : net.layers()) {
    for (double v : l.weight.data()) w.put<double>(v);
    for (double v : l.bias.data()) w.put<double>(v);
  }
  w.put<std::uint64_t>(detail::fnv1a(w.bytes));
  return w.bytes;
}

inline Network deserialize_network(std::string_view bytes) {
  if (bytes.size() < sizeof(kModelMagic) + 8 || std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0) {
    throw FormatError("not a model file (bad magic)");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail{bytes.substr(bytes.size() - 8)};
  if (tail.get<std::uint64_t>() != detail::fnv1a(body)) throw FormatError("model checksum mismatch");
  detail::ByteReader r{body, sizeof(kModelMagic)};
  if (const auto version = r.get<std::uint32_t>(); version != kModelVersion) {
    throw FormatError("unsupported model version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>();
  if (count == 0 || count > 1024) throw FormatError("implausible layer count");
  std::vector<LayerSpec> specs(count);
  for (auto& s : specs) {
    s.in_dim = r.get<std::uint64_t>();
    s.out_dim = r.get<std::uint64_t>();
    const auto act = r.get<std::uint8_t>();
    if (act > 2) throw FormatError("bad activation code");
    s.activation = static_cast<Activation>(act);
    if (s.in_dim == 0 || s.out_dim == 0 || s.in_dim * s.out_dim > (body.size() / 8)) {
      throw FormatError("implausible layer dimensions");
    }
  }
  std::vector<Layer> layers;
  for (const auto& s : specs) {
    std::vector<double> w(s.in_dim * s.out_dim), b(s.out_dim);
    for (double& v : w) v = r.get<double>();
    for (double& v : b) v = r.get<double>();
    layers.push_back({s, Tensor({s.in_dim, s.out_dim}, std::move(w)), Tensor({s.out_dim}, std::move(b))});
  }
  if (r.pos != body.size()) throw FormatError("trailing bytes in model file");
  try {
    return Network(std::move(layers));
  } catch (const DimensionError& e) {
    throw FormatError(std::string("invalid model: ") + e.what());
  }
}

inline void save_network(const Network& net, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  const std::string bytes = serialize_network(net);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing '" + path + "'");
}

inline Network load_network(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open model '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_network(bytes);
}

}  // namespace nal
