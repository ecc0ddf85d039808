/*
 * Copyright 2026 The lonseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include "lonseg/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

namespace lonseg {

namespace {

#ifdef NDEBUG
bool g_finite_checks = false;
#else
bool g_finite_checks = true;
#endif

thread_local bool t_grad_mode = true;

}  // namespace

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index extent : shape) n *= extent;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

void set_finite_checks(bool enabled) { g_finite_checks = enabled; }
bool finite_checks_enabled() { return g_finite_checks; }

NoGradGuard::NoGradGuard() : previous_(t_grad_mode) { t_grad_mode = false; }
NoGradGuard::~NoGradGuard() { t_grad_mode = previous_; }
bool grad_mode_enabled() { return t_grad_mode; }

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Values values, bool requires_grad) {
  for (Index extent : shape) {
    if (extent < 1) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  }
  if (lonseg::numel(shape) != values.size()) {
    throw ShapeError("shape " + to_string(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  node_ = std::make_shared<detail::Node<Scalar>>();
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::zeros(Shape shape, bool requires_grad) {
  return constant(std::move(shape), Scalar(0), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::constant(Shape shape, Scalar value, bool requires_grad) {
  const Index n = lonseg::numel(shape);
  return Tensor(std::move(shape), Values::Constant(n, value), requires_grad);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value, bool requires_grad) {
  return constant(Shape{1}, value, requires_grad);
}

template <typename Scalar>
typename Tensor<Scalar>::Values& Tensor<Scalar>::data() {
  if (!is_leaf() || node_->consumed) throw GraphError("in-place modification of non-leaf tensor '" + node_->op + "'");
  return node_->value;
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return node_->value[0];
}

template <typename Scalar>
Tensor<Scalar>& Tensor<Scalar>::set_requires_grad(bool flag) {
  if (!is_leaf()) throw GraphError("requires_grad can only be changed on leaves");
  node_->requires_grad = flag;
  return *this;
}

template <typename Scalar>
const typename Tensor<Scalar>::Values& Tensor<Scalar>::grad() const {
  if (!has_grad()) throw GraphError("tensor has no gradient; call backward() first");
  return node_->grad;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::detach() const {
  return Tensor(node_->shape, node_->value, false);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::record(std::string_view op, Shape shape, Values value,
                                      const std::vector<Tensor>& inputs,
                                      BackwardFn<Scalar> backward) {
  if (g_finite_checks && !value.allFinite()) {
    throw NonFiniteError("non-finite value produced by '" + std::string(op) + "'");
  }
  auto node = std::make_shared<detail::Node<Scalar>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = std::string(op);
  bool needs_grad = false;
  if (t_grad_mode) {
    for (const auto& input : inputs) needs_grad = needs_grad || input.requires_grad();
  }
  if (needs_grad && backward) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->inputs.reserve(inputs.size());
    for (const auto& input : inputs) node->inputs.push_back(input.node_);
  }
  return Tensor(std::move(node));
}

template <typename Scalar>
void Tensor<Scalar>::backward() {
  using NodeT = detail::Node<Scalar>;
  if (numel() != 1) {
    throw GraphError("backward() needs a scalar loss, got shape " + to_string(shape()));
  }
  if (node_->consumed) throw GraphError("graph already consumed by a previous backward()");
  if (!node_->requires_grad) throw GraphError("loss does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      NodeT* child = node->inputs[next++].get();
      if (child->consumed) throw GraphError("graph already consumed by a previous backward()");
      if (visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->grad_buffer() += Scalar(1);
  std::vector<Buffer<Scalar>*> grad_in;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (!node->backward || node->grad.size() == 0) continue;
    grad_in.clear();
    for (const auto& input : node->inputs) {
      grad_in.push_back(input->requires_grad ? &input->grad_buffer() : nullptr);
    }
    node->backward(node->grad, grad_in);
  }

  // Release intermediate buffers and closures; leaves keep their gradients.
  const bool loss_is_leaf = !node_->backward;
  for (NodeT* node : order) {
    if (!node->backward) continue;
    node->backward = nullptr;
    node->inputs.clear();
    node->consumed = true;
    if (node != node_.get()) node->grad.resize(0);
  }
  if (!loss_is_leaf) node_->consumed = true;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace lonseg
