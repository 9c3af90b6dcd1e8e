// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "fedsim/nn/param.hpp"
#include "fedsim/nn/tensor.hpp"

namespace fedsim::nn {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

/// Tape for one forward pass. Nodes are appended in evaluation order and
/// backward() walks them in strict reverse insertion order. A graph is built
/// per batch and discarded; it is never reused across optimizer steps.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`. Binding the same Param twice returns the same node,
  /// so every use contributes to one gradient.
  Var param(Param& p);

  /// Reverse sweep from a scalar loss. Parameter gradients are added to
  /// Param::grad (callers zero them between steps).
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient that reached node `v` during backward(); zeros if none did.
  Tensor grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Interface used by op implementations.
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Accumulation buffer for node `id`, zero-initialized on first touch.
  Tensor& grad_slot(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Param* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

// ---- differentiable ops ---------------------------------------------------

/// [.., m, k] x [k, n] -> [.., m, n], or batched [b, m, k] x [b, k, n].
Var matmul(Var a, Var b);
/// a + b where b's shape equals a trailing suffix of a's shape (broadcast over
/// the leading axes, e.g. bias rows or position tables).
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
/// Learnable scalar times tensor (gates).
Var scalar_mul(Var scalar, Var a);
/// Swap the last two axes.
Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var concat(std::span<const Var> parts, std::size_t axis);
Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length);
Var softmax(Var a, std::size_t axis);
/// Normalizes over the last axis.
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
/// tanh approximation.
Var gelu(Var a);
/// Rows of `table` ([vocab, dim]) picked by ids -> [ids.size(), dim].
Var embedding(Var table, std::span<const int> ids);
Var sum(Var a);
Var sum(Var a, std::size_t axis);
Var mean(Var a);
Var mean(Var a, std::size_t axis);
/// Mean softmax cross-entropy of logits [n, c] against class targets.
Var cross_entropy(Var logits, std::span<const int> targets);
/// Rows scaled to unit L2 norm along the last axis.
Var l2_normalize(Var a, double eps = 1e-12);

/// Throws NumericError if the node value is not finite.
Var check_finite(Var a, const char* what);

}  // namespace fedsim::nn
