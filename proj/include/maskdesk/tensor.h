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

#pragma once

// Dense n-dimensional tensors with reverse-mode differentiation.
//
// A tensor is a cheap handle onto an immutable node. Ops create new nodes
// and, when any input requires a gradient, attach a GradFn that knows how to
// push the output gradient back into its inputs. backward() orders the
// reachable nodes into a Tape and replays it in reverse.
//
// Image-like tensors are NHWC: [batch, height, width, channels].

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "maskdesk/error.h"

namespace maskdesk {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct TensorNode;

template <typename T>
struct GradFn {
  std::string name;
  std::vector<std::shared_ptr<TensorNode<T>>> inputs;
  // Reads out.grad and accumulates into the inputs' grad buffers.
  std::function<void(const TensorNode<T>& out)> apply;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::optional<std::vector<T>> grad;
  bool requires_grad = false;
  std::shared_ptr<GradFn<T>> grad_fn;

  // Returns the grad buffer, allocating zeros on first use.
  std::vector<T>& grad_buffer() {
    if (!grad) grad.emplace(data.size(), T(0));
    return *grad;
  }
  // Destination for gradient accumulation, or nullptr when this node does
  // not participate in differentiation.
  T* grad_target() { return requires_grad ? grad_buffer().data() : nullptr; }
};

// Thread-local switch for recording. Disabled inside a NoGradGuard.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(previous_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  // Rank-0 tensor holding 0.
  BasicTensor();
  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static BasicTensor zeros(Shape shape);
  static BasicTensor full(Shape shape, T value);
  static BasicTensor scalar(T value);

  const Shape& shape() const { return node_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(node_->shape.size()); }
  // Negative axes count from the end.
  std::int64_t dim(std::int64_t axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }

  std::span<const T> data() const { return node_->data; }
  T item() const;

  bool requires_grad() const { return node_->requires_grad; }
  // Only valid on leaves.
  void set_requires_grad(bool on);
  bool is_leaf() const { return node_->grad_fn == nullptr; }

  bool has_grad() const { return node_->grad.has_value(); }
  std::span<const T> grad() const;
  void zero_grad();

  // Parameter updates are the one sanctioned in-place write; leaves only.
  std::span<T> mutable_data();

  // Same values, no history.
  BasicTensor detach() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(node_->data.begin(), node_->data.end());
    return BasicTensor<U>(node_->shape, std::move(out));
  }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  static BasicTensor from_node(std::shared_ptr<TensorNode<T>> node);

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

// Builds the output of an op. History is recorded only when grad mode is on
// and at least one input requires a gradient.
template <typename T>
BasicTensor<T> make_result(
    Shape shape, std::vector<T> data, const char* name,
    std::vector<BasicTensor<T>> inputs,
    std::function<void(const TensorNode<T>&)> backward);

// Ordered list of recorded ops reachable from a root, in execution order.
template <typename T>
class Tape {
 public:
  explicit Tape(const BasicTensor<T>& root);

  std::size_t size() const { return order_.size(); }
  const std::vector<std::shared_ptr<TensorNode<T>>>& nodes() const {
    return order_;
  }
  // Op names in execution order.
  std::vector<std::string> op_names() const;

  // Seeds the root with d(root)=1 and runs every GradFn in reverse order.
  // Grad buffers of reachable requires_grad leaves are reset first, so each
  // replay populates them exactly once.
  void replay();

 private:
  std::shared_ptr<TensorNode<T>> root_;
  std::vector<std::shared_ptr<TensorNode<T>>> order_;
};

// Populates grad on every requires_grad leaf reachable from `loss`.
// Throws ContractError unless loss holds exactly one element.
template <typename T>
void backward(const BasicTensor<T>& loss);

// As above; `leaves` not reachable from the loss end with a zero grad.
template <typename T>
void backward(const BasicTensor<T>& loss,
              std::span<const BasicTensor<T>> leaves);

// Debug dump: first line is the shape, then one value per line.
template <typename T>
void write_csv(std::ostream& out, const BasicTensor<T>& tensor);

}  // namespace maskdesk
