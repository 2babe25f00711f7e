#pragma once

// The input-space loss interface shared by smoothing, the inner maximizer and
// the attacks. A network with cross-entropy is one model of it; the toy
// losses used by the verification suite are another.

#include <concepts>
#include <cstddef>
#include <span>
#include <vector>

#include "nal/network.hpp"
#include "nal/tensor.hpp"

namespace nal {

/// Per-row loss values and, when requested, per-row input gradients
/// (row i differentiated against its own loss).
struct BatchLoss {
  std::vector<double> values;
  Tensor grad_x;
};

template <class L>
concept InputLoss = requires(const L& loss, const Tensor& x, std::span<const int> labels, bool want_grad,
                             int threads) {
  { loss.evaluate(x, labels, want_grad, threads) } -> std::same_as<BatchLoss>;
  { loss.input_dim() } -> std::convertible_to<std::size_t>;
};

/// Cross-entropy of a network as an InputLoss.
class NetworkLoss {
 public:
  explicit NetworkLoss(const Network& net) : net_(&net) {}

  std::size_t input_dim() const { return net_->input_dim(); }
  const Network& network() const { return *net_; }

  BatchLoss evaluate(const Tensor& x, std::span<const int> labels, bool want_grad, int threads) const {
    if (want_grad) {
      auto r = loss_and_input_grad(*net_, x, labels, threads);
      return {std::move(r.losses), std::move(r.grad_x)};
    }
    Tensor logits = forward(*net_, x, nullptr, threads);
    detail::check_labels(*net_, labels, x.rows());
    return {row_losses(logits, labels), Tensor{}};
  }

 private:
  const Network* net_;
};

static_assert(InputLoss<NetworkLoss>);

}  // namespace nal
