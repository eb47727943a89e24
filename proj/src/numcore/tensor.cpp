// SPDX-License-Identifier: Apache-2.0
#include "ifam/numcore/tensor.hpp"

#include <stdexcept>
#include <unordered_set>

namespace ifam::nc {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values,
                    bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                " does not match " +
                                std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

int Tensor::dim(int axis) const {
  const auto& s = node_->shape;
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size())) {
    throw std::out_of_range("Tensor::dim: axis out of range");
  }
  return s[static_cast<std::size_t>(axis)];
}

std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

double Tensor::at(int r, int c) const {
  return node_->value[static_cast<std::size_t>(r) *
                          static_cast<std::size_t>(dim(-1)) +
                      static_cast<std::size_t>(c)];
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() on non-scalar tensor");
  return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::is_leaf() const { return node_->leaf; }

std::span<const double> Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->value.size(), 0.0);
  node_->backward_done = false;
}

std::span<double> Tensor::mutable_values() {
  if (!node_->leaf) throw std::logic_error("mutating a non-leaf tensor");
  return node_->value;
}

std::span<double> Tensor::mutable_grad() { return node_->ensure_grad(); }

void Tensor::set_requires_grad(bool on) {
  if (!node_->leaf) throw std::logic_error("requires_grad on a non-leaf");
  node_->requires_grad = on;
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  return Tensor(std::move(n));
}

namespace {
thread_local bool g_no_grad = false;
}

NoGradScope::NoGradScope() : previous_(g_no_grad) { g_no_grad = true; }
NoGradScope::~NoGradScope() { g_no_grad = previous_; }
bool NoGradScope::active() { return g_no_grad; }

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<Tensor> parents,
                   std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->leaf = false;
  if (g_no_grad) return Tensor(std::move(n));
  for (auto& p : parents) {
    if (p.requires_grad()) n->parents.push_back(p.handle());
  }
  if (!n->parents.empty()) {
    n->requires_grad = true;
    n->backward_fn = std::move(fn);
  }
  return Tensor(std::move(n));
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward: undefined loss");
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss is detached from any parameter");
  }
  Node* root = loss.node();
  if (root->backward_done) {
    throw std::logic_error("backward: graph already consumed; reset first");
  }

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->leaf && seen.insert(p).second) stack.emplace_back(p, 0);
      if (p->leaf) p->ensure_grad();
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
  // Interior grads are no longer needed.
  for (Node* n : order) {
    if (n != root) std::vector<double>().swap(n->grad);
  }
  root->backward_done = true;
}

}  // namespace ifam::nc
