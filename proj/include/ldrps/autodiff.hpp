#pragma once

// Tape-free reverse-mode differentiation over Tensor values. Each op records
// its inputs and a backward closure only when at least one input requires a
// gradient, so inference on frozen models builds no graph.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ldrps/tensor.hpp"

namespace ldrps::ad {

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor& grad() const { return node_->grad; }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf without gradient.
Var constant(Tensor value);
/// Leaf that accumulates gradient (parameters, or z_t under guidance).
Var leaf(Tensor value, bool requires_grad = true);
/// Same value, cut from the graph.
Var detach(const Var& x);

/// Seeds d(root)/d(root) = 1 for a one-element root and propagates.
void backward(const Var& root);

// Elementwise / broadcasting
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);
/// x (N,C,H,W) + v (N,C,1,1) broadcast over space.
Var add_spatial_broadcast(const Var& x, const Var& v);
/// x (N,C,H,W) * p (1,C,1,1) broadcast over batch and space.
Var channel_scale(const Var& x, const Var& p);

Var silu(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var log(const Var& x);
Var abs(const Var& x);
/// Clamp with pass-through gradient strictly inside [lo, hi].
Var clamp(const Var& x, double lo, double hi);

// Layers
/// x (N,Cin,H,W), w (Cout,Cin,k,k), b (1,Cout,1,1) or empty Var.
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
/// x (N,In,1,1), w (Out,In,1,1), b (1,Out,1,1).
Var linear(const Var& x, const Var& w, const Var& b);
Var upsample_nearest2x(const Var& x);
/// table (V,D,1,1) rows selected per sample -> (N,D,1,1)
Var embedding(const Var& table, const std::vector<int>& ids);

// Shape ops
Var concat_channels(const Var& a, const Var& b);
Var concat_batch(const Var& a, const Var& b);
Var slice_batch(const Var& x, int begin, int count);

// Reductions
Var sum(const Var& x);
Var mean(const Var& x);
/// mean((a-b)^2) over all elements
Var mse(const Var& a, const Var& b);
/// (N,C,H,W) -> (N,1,H,W) channel mean
Var channel_mean(const Var& x);
/// (N,C,H,W) -> (N,C,1,1) spatial mean
Var spatial_mean(const Var& x);
/// Non-overlapping k x k average pooling.
Var avg_pool(const Var& x, int k);

}  // namespace ldrps::ad
