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
#pragma once

#include <Eigen/Core>

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "lonseg/errors.hpp"

namespace lonseg {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Enables NaN/Inf checks on every recorded forward result. Defaults to on in
/// debug builds and off otherwise.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

template <typename Scalar>
class Tensor;

/// Receives the output gradient and writes into the gradient buffers of the
/// inputs. A null entry means that input does not require a gradient.
template <typename Scalar>
using BackwardFn = std::function<void(const Buffer<Scalar>& grad_out,
                                      const std::vector<Buffer<Scalar>*>& grad_in)>;

namespace detail {

template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> value;
  Buffer<Scalar> grad;
  bool requires_grad = false;
  bool consumed = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<Scalar> backward;

  Buffer<Scalar>& grad_buffer() {
    if (grad.size() != value.size()) grad = Buffer<Scalar>::Zero(value.size());
    return grad;
  }
};

}  // namespace detail

/// Dense C-order array with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
/// Operations on tensors that require gradients record a node carrying the
/// backward closure; `backward()` on a scalar result walks that graph once.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using Values = Buffer<Scalar>;

  Tensor() = default;
  Tensor(Shape shape, Values values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(std::size_t axis) const { return node_->shape.at(axis); }
  Index numel() const { return node_->value.size(); }

  const Values& value() const { return node_->value; }
  /// Mutable storage; only leaves may be modified in place.
  Values& data();
  Scalar item() const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool is_leaf() const { return !node_->backward; }
  const std::string& op_name() const { return node_->op; }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Values& grad() const;
  void zero_grad() { node_->grad.resize(0); }

  /// Accumulates d(this)/d(leaf) into every reachable leaf that requires
  /// gradients. The graph is released afterwards; a second call throws.
  void backward();

  /// Copy of the values without graph history.
  Tensor detach() const;

  /// Records an operation result. `backward` may be empty when no input
  /// requires gradients.
  static Tensor record(std::string_view op, Shape shape, Values value,
                       const std::vector<Tensor>& inputs, BackwardFn<Scalar> backward);

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node<Scalar>> node) : node_(std::move(node)) {}

  std::shared_ptr<detail::Node<Scalar>> node_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace lonseg
