/* Copyright 2026 The gwap Authors.
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

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "gwap/tensor.hpp"

namespace gwap {

template <typename Scalar>
class Tape;

/// Handle to a tensor recorded on a tape. Cheap to copy; the tensor value
/// lives on the tape for the lifetime of the recording.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<Scalar>& value() const;
};

/// Reverse-mode gradient tape. Primitive operations append one node each in
/// execution order; backward() replays the record in reverse, accumulating
/// exactly one gradient tensor per node that needs one.
///
/// A tape with recording disabled still materializes forward values (so
/// composite graphs evaluate normally) but stores no backward closures;
/// that is the inference mode used by evaluation.
template <typename Scalar>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  std::size_t node_count() const { return nodes_.size(); }

  /// Register a leaf tensor. Leaves with requires_grad receive an
  /// accumulated gradient in backward(); all others are constants.
  Var<Scalar> leaf(Tensor<Scalar> value, bool requires_grad = false) {
    return append(std::move(value), requires_grad && recording_, {});
  }

  /// Register an operation result. `parents` are the operand nodes; `fn`
  /// reads grad_at(self) and accumulates into grad_buffer(parent). The fn is
  /// dropped (never called) when no parent needs a gradient.
  Var<Scalar> op(Tensor<Scalar> value, std::vector<std::int32_t> parents,
                 BackwardFn fn) {
    if (!value.all_finite()) {
      throw NumericError("operation produced non-finite values");
    }
    bool needs = false;
    if (recording_) {
      for (std::int32_t p : parents) {
        needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
      }
    }
    Var<Scalar> v = append(std::move(value), needs, std::move(parents));
    if (needs) {
      nodes_.back().backward = std::move(fn);
    }
    return v;
  }

  const Tensor<Scalar>& value(const Var<Scalar>& v) const {
    return nodes_[check(v)].value;
  }

  bool needs_grad(const Var<Scalar>& v) const {
    return nodes_[check(v)].needs_grad;
  }

  /// Accumulated gradient of `v` after backward(). Nodes the loss never
  /// reached (unused parameters included) report an all-zero gradient of the
  /// node's shape.
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    const std::size_t i = check(v);
    if (i < grads_.size() && !grads_[i].empty()) return grads_[i];
    return Tensor<Scalar>(nodes_[i].value.shape());
  }

  /// Gradient accumulator for a node, allocated to the node's shape on first
  /// use. Backward closures add into this.
  Tensor<Scalar>& grad_buffer(std::int32_t id) {
    auto i = static_cast<std::size_t>(id);
    if (grads_[i].empty()) {
      grads_[i] = Tensor<Scalar>(nodes_[i].value.shape());
    }
    return grads_[i];
  }

  const Tensor<Scalar>& grad_at(std::int32_t id) const {
    return grads_[static_cast<std::size_t>(id)];
  }

  /// Reverse sweep from a scalar loss node.
  void backward(const Var<Scalar>& loss) {
    const std::size_t root = check(loss);
    if (nodes_[root].value.size() != 1) {
      throw ShapeError("backward: loss must be scalar, got " +
                       nodes_[root].value.shape_string());
    }
    grads_.assign(nodes_.size(), Tensor<Scalar>());
    grad_buffer(static_cast<std::int32_t>(root))[0] = Scalar(1);
    for (std::size_t i = root + 1; i-- > 0;) {
      if (grads_[i].empty() || !nodes_[i].backward) continue;
      if (!grads_[i].all_finite()) {
        throw NumericError("backward produced non-finite gradient");
      }
      nodes_[i].backward(*this);
    }
  }

  /// Drop every node and gradient; capacity is retained.
  void clear() {
    nodes_.clear();
    grads_.clear();
  }

 private:
  struct Node {
    Tensor<Scalar> value;
    std::vector<std::int32_t> parents;
    BackwardFn backward;
    bool needs_grad = false;
  };

  Var<Scalar> append(Tensor<Scalar> value, bool needs,
                     std::vector<std::int32_t> parents) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::size_t check(const Var<Scalar>& v) const {
    if (v.tape != this || v.id < 0 ||
        static_cast<std::size_t>(v.id) >= nodes_.size()) {
      throw Error("tensor is not on this tape");
    }
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<Scalar>> grads_;
  bool recording_ = true;
};

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return tape->value(*this);
}

}  // namespace gwap
