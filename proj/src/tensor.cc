// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "maskdesk/tensor.h"

#include <algorithm>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace maskdesk {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool on) { grad_mode_enabled = on; }

template <typename T>
BasicTensor<T>::BasicTensor() : node_(std::make_shared<TensorNode<T>>()) {
  node_->data.assign(1, T(0));
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data,
                            bool requires_grad)
    : node_(std::make_shared<TensorNode<T>>()) {
  const std::int64_t n = maskdesk::numel(shape);
  if (n != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("shape " + to_string(shape) + " holds " +
                     std::to_string(n) + " elements, got " +
                     std::to_string(data.size()));
  }
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value) {
  const auto n = static_cast<std::size_t>(maskdesk::numel(shape));
  return BasicTensor(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value) {
  return BasicTensor(Shape{}, std::vector<T>{value});
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_node(std::shared_ptr<TensorNode<T>> node) {
  BasicTensor t;
  t.node_ = std::move(node);
  return t;
}

template <typename T>
std::int64_t BasicTensor<T>::dim(std::int64_t axis) const {
  const std::int64_t r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape()));
  }
  return node_->shape[static_cast<std::size_t>(axis)];
}

template <typename T>
T BasicTensor<T>::item() const {
  if (node_->data.size() != 1) {
    throw ContractError("item() on tensor of shape " + to_string(shape()));
  }
  return node_->data[0];
}

template <typename T>
void BasicTensor<T>::set_requires_grad(bool on) {
  if (!is_leaf()) throw ContractError("set_requires_grad on non-leaf tensor");
  node_->requires_grad = on;
}

template <typename T>
std::span<const T> BasicTensor<T>::grad() const {
  if (!node_->grad) throw ContractError("tensor has no grad buffer");
  return *node_->grad;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  node_->grad.emplace(node_->data.size(), T(0));
}

template <typename T>
std::span<T> BasicTensor<T>::mutable_data() {
  if (!is_leaf()) throw ContractError("mutable_data on non-leaf tensor");
  return node_->data;
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data);
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, const char* name,
                           std::vector<BasicTensor<T>> inputs,
                           std::function<void(const TensorNode<T>&)> backward) {
  BasicTensor<T> out(std::move(shape), std::move(data));
  if (!GradMode::enabled()) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const auto& t) { return t.requires_grad(); });
  if (!any) return out;
  auto fn = std::make_shared<GradFn<T>>();
  fn->name = name;
  fn->inputs.reserve(inputs.size());
  for (const auto& t : inputs) fn->inputs.push_back(t.node());
  fn->apply = std::move(backward);
  out.node()->requires_grad = true;
  out.node()->grad_fn = std::move(fn);
  return out;
}

template <typename T>
Tape<T>::Tape(const BasicTensor<T>& root) : root_(root.node()) {
  // Iterative post-order DFS gives a valid execution order.
  std::unordered_set<const TensorNode<T>*> seen;
  std::vector<std::pair<std::shared_ptr<TensorNode<T>>, std::size_t>> stack;
  stack.emplace_back(root_, 0);
  seen.insert(root_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    const auto* fn = node->grad_fn.get();
    if (fn && next < fn->inputs.size()) {
      auto child = fn->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) {
        stack.emplace_back(std::move(child), 0);
      }
      continue;
    }
    order_.push_back(node);
    stack.pop_back();
  }
}

template <typename T>
std::vector<std::string> Tape<T>::op_names() const {
  std::vector<std::string> names;
  for (const auto& n : order_) {
    if (n->grad_fn) names.push_back(n->grad_fn->name);
  }
  return names;
}

template <typename T>
void Tape<T>::replay() {
  for (const auto& n : order_) {
    if (n->requires_grad) n->grad.emplace(n->data.size(), T(0));
  }
  root_->grad_buffer()[0] = T(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    TensorNode<T>& n = **it;
    if (!n.grad_fn) continue;
    n.grad_fn->apply(n);
    // Intermediate gradients are not needed once propagated.
    if (&n != root_.get()) n.grad.reset();
  }
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        to_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw ContractError("backward() on a loss with no recorded history");
  }
  Tape<T>(loss).replay();
}

template <typename T>
void backward(const BasicTensor<T>& loss,
              std::span<const BasicTensor<T>> leaves) {
  for (const auto& leaf : leaves) leaf.node()->grad.emplace(leaf.numel(), T(0));
  if (loss.requires_grad()) backward(loss);
  else if (loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        to_string(loss.shape()));
  }
}

template <typename T>
void write_csv(std::ostream& out, const BasicTensor<T>& tensor) {
  out << "# shape " << to_string(tensor.shape()) << '\n';
  out.precision(9);
  for (T v : tensor.data()) out << v << '\n';
}

#define MASKDESK_INSTANTIATE(T)                                              \
  template class BasicTensor<T>;                                             \
  template class Tape<T>;                                                    \
  template BasicTensor<T> make_result<T>(                                    \
      Shape, std::vector<T>, const char*, std::vector<BasicTensor<T>>,       \
      std::function<void(const TensorNode<T>&)>);                            \
  template void backward<T>(const BasicTensor<T>&);                          \
  template void backward<T>(const BasicTensor<T>&,                           \
                            std::span<const BasicTensor<T>>);                \
  template void write_csv<T>(std::ostream&, const BasicTensor<T>&);

MASKDESK_INSTANTIATE(float)
MASKDESK_INSTANTIATE(double)

#undef MASKDESK_INSTANTIATE

}  // namespace maskdesk
