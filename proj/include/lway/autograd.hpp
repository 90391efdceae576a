#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "lway/tensor.hpp"

namespace lway::ag {

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.size() != value.size()) grad = Tensor<T>(value.shape);
    return grad;
  }
};

// Handle onto a node of the computation graph. Copies share the node.
template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad; }
  const std::vector<int>& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  T item() const { return node_->value.data.at(0); }

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Graph construction is skipped while a NoGradGuard is alive on this thread.
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

template <class T>
Var<T> constant(Tensor<T> value);
template <class T>
Var<T> leaf(Tensor<T> value, bool requires_grad);

// Accumulates d(root)/d(node) into every reachable node that requires grad.
// root must be a single-element tensor.
template <class T>
void backward(const Var<T>& root);

// --- operations ----------------------------------------------------------

// Zero-padded 2-D convolution. x [N,Cin,H,W], w [Cout,Cin,k,k], bias [Cout] or empty.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& bias, int stride, int pad);

// Fused modulate -> demodulate -> convolve. style [N,Cin] scales input channel
// i of w for sample n; weights are then renormalised per output channel:
//   w'' = s_i w / sqrt(sum_{i,k} (s_i w)^2 + eps).
template <class T>
Var<T> modulated_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& style, int stride, int pad, T eps);

// Per-sample demodulated weights [N,Cout,Cin,k,k], value only.
template <class T>
Tensor<T> demodulated_weights(const Tensor<T>& w, const Tensor<T>& style, T eps);

// x [N,D], w [O,D], bias [O] or empty -> [N,O].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& bias);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);
// x [N,C,H,W] + bias [C] broadcast over samples and pixels.
template <class T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);
template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T>
Var<T> scale(const Var<T>& a, T factor);
// a * m elementwise, where m is a constant broadcast over the channel axis
// ([N,1,H,W] against [N,C,H,W]) or of identical shape.
template <class T>
Var<T> mul_constant(const Var<T>& a, const Tensor<T>& m);
template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope);
template <class T>
Var<T> clamp(const Var<T>& x, T lo, T hi);
template <class T>
Var<T> global_avg_pool(const Var<T>& x);  // [N,C,H,W] -> [N,C]
template <class T>
Var<T> upsample_nearest(const Var<T>& x, int factor);
template <class T>
Var<T> avg_pool(const Var<T>& x, int factor);
// Divides each pixel's channel vector by its L2 norm (plus eps). [N,C] inputs
// are treated as 1x1 images.
template <class T>
Var<T> channel_normalize(const Var<T>& x, T eps);
template <class T>
Var<T> l1_mean(const Var<T>& a, const Var<T>& b);   // scalar
template <class T>
Var<T> mse_mean(const Var<T>& a, const Var<T>& b);  // scalar

}  // namespace lway::ag
