#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "atv/tensor.hpp"

namespace atv {

/// One value in the reverse-mode graph. `backward` reads `grad` and
/// accumulates into the inputs' gradients.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  /// Lazily allocates the gradient buffer.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool defined() const { return static_cast<bool>(node_); }

  /// Clears the accumulated gradient (parameters between steps).
  void zero_grad();

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// Scalar value; throws unless the tensor has exactly one element.
  double item() const;

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Leaf that accumulates gradients.
Var parameter(Tensor value);

/// Builds an interior node. The node requires grad iff any input does; when
/// none does, `backward` is dropped and the inputs are not retained.
Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// While alive on this thread, make_node records no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

/// Cuts the graph: same value, no history.
Var detach(const Var& v);

/// Seeds d(root)/d(root) = 1 and runs reverse accumulation. `root` must be a
/// scalar.
void backward(const Var& root);

}  // namespace atv
