// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ifam::nc {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Masked attention logits are pushed below this value before exponentiation.
inline constexpr double kMaskSentinel = -1e30;

struct Node;

/// Handle to a node of the recorded computation graph.
///
/// Tensors are immutable once created. A tensor that requires a gradient
/// keeps its parents alive; anything built only from constants is detached
/// and carries no graph.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int dim(int axis) const;
  int rank() const { return static_cast<int>(shape().size()); }
  std::size_t size() const;

  std::span<const double> values() const;
  double operator[](std::size_t i) const { return values()[i]; }
  double at(int r, int c) const;
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;

  // Gradient of a leaf after backward(); zeros if never reached.
  std::span<const double> grad() const;
  void zero_grad();

  // Mutates a leaf in place. Only valid on leaves (parameters, inputs).
  std::span<double> mutable_values();
  std::span<double> mutable_grad();
  void set_requires_grad(bool on);

  // Same values, no graph.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool backward_done = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

/// While alive, ops on this thread record no graph (inference mode).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;
  static bool active();

 private:
  bool previous_;
};

/// Builds an op result. Parents that do not require grad are dropped; if no
/// parent requires grad, the result is detached and `fn` is discarded.
Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> fn);

/// Reverse-mode sweep from a scalar loss.
///
/// Throws if the loss is not a scalar, does not require grad, or has already
/// been back-propagated. Leaf gradients accumulate across calls on distinct
/// losses until zero_grad().
void backward(const Tensor& loss);

}  // namespace ifam::nc
