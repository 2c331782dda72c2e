/**
 * Copyright 2026 The fedmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef FEDMOE_AUTODIFF_H_
#define FEDMOE_AUTODIFF_H_

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "fedmoe/tensor.h"

namespace fedmoe {

/*
 * Dynamic reverse-mode graph. Every forward op allocates a Node holding its
 * value, a gradient buffer of the same shape, strong references to its
 * inputs, and a closure that pushes its gradient into the inputs. Leaves
 * owned by a Parameter survive across graphs and accumulate gradients until
 * ZeroGrad; intermediate nodes die with the last Var that refers to them.
 */
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  /// Constant leaf: no gradient flows into it.
  static Var Constant(Tensor value);

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool valid() const { return static_cast<bool>(node_); }

  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Builds an interior node. `backward` runs only if some input needs grads.
Var MakeNode(Tensor value, std::vector<Var> inputs,
             std::function<void(Node&)> backward);

/// Seeds d(root)/d(root) = 1 and propagates in reverse topological order.
/// Root must hold exactly one element. Throws if a non-finite value or
/// gradient is produced.
void Backward(const Var& root);

/// Trainable tensor with a persistent gradient accumulator. Copying a
/// Parameter deep-copies value and gradient under a fresh node, so copies
/// never alias.
class Parameter {
 public:
  Parameter() = default;
  Parameter(std::string name, Tensor value, bool trainable = true);
  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  const std::string& name() const { return name_; }
  std::uint64_t id() const { return id_; }
  bool trainable() const { return node_->requires_grad; }
  void set_trainable(bool t) { node_->requires_grad = t; }

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  Tensor& mutable_grad() { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }

  void ZeroGrad() { node_->grad.Fill(0.0); }

  /// Graph handle for this leaf.
  Var var() const { return Var(node_); }

 private:
  static std::uint64_t NextId();

  std::string name_;
  std::uint64_t id_ = 0;
  std::shared_ptr<Node> node_;
};

}  // namespace fedmoe

#endif  // FEDMOE_AUTODIFF_H_
