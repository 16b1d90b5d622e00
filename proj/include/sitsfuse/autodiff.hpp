#pragma once

// Tensor-level reverse-mode automatic differentiation.
//
// A Var is a node of a dynamically built graph. Ops record their parents and a
// backward closure; `backward(root)` walks the graph in reverse topological
// order. Parameters are leaves whose gradients accumulate across calls until
// zeroed; intermediate gradients are reset on every call, so one graph may be
// differentiated from several roots (the gradient-flow probe relies on this).

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sitsfuse/tensor.hpp"

namespace sitsfuse::ad {

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape(); }
  /// Gradient storage, allocated as zeros on first use.
  Tensor& grad_buffer();
};

Var constant(Tensor value);
Var parameter(Tensor value);

/// While alive, newly created nodes record no graph (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Seeds d(root)/d(root) = 1 and propagates. `root` must hold one element.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var relu(const Var& a);
Var log(const Var& a);
Var sum(const Var& a);

/// Adds bias[n] along the last axis.
Var add_bias(const Var& x, const Var& bias);
/// 2-D product a[n×k] · b[k×m].
Var matmul(const Var& a, const Var& b);
/// x[..., in] · w[in×out] + b[out].
Var linear(const Var& x, const Var& w, const Var& b);

Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& axes);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Selects rows along axis 0.
Var gather_rows(const Var& a, std::vector<std::size_t> rows);
/// Places row i of `a` at position rows[i] of a zero tensor with `total` rows.
Var scatter_rows(const Var& a, std::vector<std::size_t> rows, std::size_t total);

/// Order-statistic pooling of a pixel set: x[N×S×D] -> [N×2D] = [mean | std].
Var set_mean_std(const Var& x);

/// Softmax along the last axis.
Var softmax(const Var& x);

/// Key-query compatibilities: keys[N×T×(G·dk)], query[G×dk] -> [N×G×T] / sqrt(dk).
Var head_scores(const Var& keys, const Var& query);
/// Softmax over T of scores[N×G×T] restricted to mask[N×T]; masked weights are exactly 0.
/// Throws if a row has no unmasked position.
Var masked_softmax(const Var& scores, std::span<const std::uint8_t> mask);
/// Head g averages channel group g: weights[N×G×T], values[N×T×E] -> [N×E].
Var attend(const Var& weights, const Var& values);
/// Per-pixel version of attend: weights[B×G×T×H×W], frames[B×T×C×H×W] -> [B×C×H×W].
Var temporal_weighted_mean(const Var& weights, const Var& frames);
/// Bilinear resize (half-pixel centers) of the two trailing axes.
Var upsample_bilinear(const Var& x, std::size_t out_h, std::size_t out_w);

/// x[N×C×H×W], w[O×C×k×k], b[O].
Var conv2d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t padding);
/// x[N×C×H×W], w[C×O×2×2], b[O] -> [N×O×2H×2W].
Var conv_transpose2x2(const Var& x, const Var& w, const Var& b);

/// Mean cross-entropy of logits[N×K] over targets != ignore_index (0 if none).
Var cross_entropy(const Var& logits, std::span<const int> targets, int ignore_index);

}  // namespace sitsfuse::ad
