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

#include "fedmoe/autodiff.h"

#include <atomic>
#include <unordered_set>

namespace fedmoe {

Var Var::Constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape(), 0.0);
  node->value = std::move(value);
  node->requires_grad = false;
  return Var(std::move(node));
}

Var MakeNode(Tensor value, std::vector<Var> inputs,
             std::function<void(Node&)> backward) {
  if (!value.AllFinite()) {
    throw ContractViolation("non-finite value produced in forward pass");
  }
  auto node = std::make_shared<Node>();
  node->grad = Tensor(value.shape(), 0.0);
  node->value = std::move(value);
  for (auto& in : inputs) {
    node->requires_grad = node->requires_grad || in.requires_grad();
    node->inputs.push_back(in.ptr());
  }
  if (node->requires_grad) node->backward = std::move(backward);
  return Var(std::move(node));
}

void Backward(const Var& root) {
  if (root.value().size() != 1) {
    throw ContractViolation("Backward: root must be a scalar, got " +
                            ShapeToString(root.shape()));
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; `order` ends up with inputs before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(&root.node(), 0);
  seen.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node().grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->backward(*node);
      for (auto& in : node->inputs) {
        if (in->requires_grad && !in->grad.AllFinite()) {
          throw ContractViolation("non-finite gradient in backward pass");
        }
      }
    }
  }
}

std::uint64_t Parameter::NextId() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Parameter::Parameter(std::string name, Tensor value, bool trainable)
    : name_(std::move(name)), id_(NextId()), node_(std::make_shared<Node>()) {
  node_->grad = Tensor(value.shape(), 0.0);
  node_->value = std::move(value);
  node_->requires_grad = trainable;
}

Parameter::Parameter(const Parameter& other)
    : name_(other.name_), id_(NextId()), node_(std::make_shared<Node>()) {
  node_->value = other.node_->value;
  node_->grad = other.node_->grad;
  node_->requires_grad = other.node_->requires_grad;
}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    Parameter copy(other);
    *this = std::move(copy);
  }
  return *this;
}

}  // namespace fedmoe
