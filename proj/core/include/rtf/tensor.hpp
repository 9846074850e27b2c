/*
 * Copyright 2026-present the rtfusion authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "rtf/errors.hpp"

namespace rtf {

/// Row-major extents. Rank 0 (empty shape) denotes a scalar with one value.
using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  if (s.empty()) return "scalar";
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(s[i]);
  }
  return out;
}

template <class Real>
struct TensorData {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty means "no gradient buffer"
  bool tracked = false;
};

/// Value-semantic handle to a shared dense buffer. Copying a Tensor aliases
/// the payload; ops always allocate fresh outputs, so aliasing only matters
/// for parameters, where it is the point (optimizer and tape see one buffer).
template <class Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, Real fill = Real(0), bool tracked = false)
      : d_(std::make_shared<TensorData<Real>>()) {
    d_->shape = std::move(shape);
    d_->values.assign(numel(d_->shape), fill);
    d_->tracked = tracked;
  }

  static Tensor from_values(Shape shape, std::vector<Real> values,
                            bool tracked = false) {
    if (numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " expects " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(values.size()));
    }
    Tensor t;
    t.d_ = std::make_shared<TensorData<Real>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.d_->tracked = tracked;
    return t;
  }

  static Tensor scalar(Real v, bool tracked = false) {
    return from_values({}, {v}, tracked);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::size_t size() const { return d_->values.size(); }
  /// First/second extent; only meaningful for rank-2 tensors.
  std::size_t rows() const { return d_->shape[0]; }
  std::size_t cols() const { return d_->shape[1]; }

  std::vector<Real>& values() { return d_->values; }
  const std::vector<Real>& values() const { return d_->values; }
  Real& at(std::size_t r, std::size_t c) {
    return d_->values[r * cols() + c];
  }
  Real at(std::size_t r, std::size_t c) const {
    return d_->values[r * cols() + c];
  }
  Real item() const { return d_->values[0]; }

  bool tracked() const { return d_ && d_->tracked; }
  void set_tracked(bool t) { d_->tracked = t; }

  bool has_grad() const { return d_ && !d_->grad.empty(); }
  /// Allocates a zero gradient buffer on first use.
  std::vector<Real>& grad() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), Real(0));
    return d_->grad;
  }
  const std::vector<Real>& grad() const { return d_->grad; }
  void zero_grad() { d_->grad.clear(); }

  /// Deep copy; the result shares nothing with this tensor.
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<TensorData<Real>>(*d_);
    return t;
  }

  /// Payload identity, for aliasing checks in tests.
  const void* payload() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData<Real>> d_;
};

/// Throws NumericError if the tensor holds NaN or Inf. Every op calls this on
/// its output, which keeps the "no non-finite values after any op" invariant
/// and doubles as the divergence detector for training.
template <class Real>
void guard_finite(const char* op, const Tensor<Real>& t) {
  for (Real v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) +
                         ": produced non-finite values (shape " +
                         shape_str(t.shape()) + ")");
    }
  }
}

/// Ordered record of executed ops. Each node owns the closure that propagates
/// the output gradient to its inputs. Nodes are appended in execution order,
/// so inputs always precede their consumers and a single reverse sweep is a
/// valid topological backward pass.
template <class Real>
class Tape {
 public:
  bool recording() const { return recording_; }
  void set_recording(bool r) { recording_ = r; }

  void push(std::string op, std::function<void()> backward_fn) {
    nodes_.push_back({std::move(op), std::move(backward_fn)});
    ++counts_[nodes_.back().op];
  }

  std::size_t node_count() const { return nodes_.size(); }

  /// Executed-op counts by name since the last reset. Used by tests to assert
  /// structural properties such as local-encoder reuse.
  const std::map<std::string, std::size_t>& op_counts() const {
    return counts_;
  }

  void reset() {
    nodes_.clear();
    counts_.clear();
    backward_done_ = false;
  }

  bool backward_done() const { return backward_done_; }

  template <class R>
  friend void backward(const Tensor<R>& loss, Tape<R>& tape);

 private:
  struct Node {
    std::string op;
    std::function<void()> backward_fn;
  };
  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> counts_;
  bool recording_ = true;
  bool backward_done_ = false;
};

/// Reverse-mode sweep. Seeds d(loss)/d(loss) = 1 and visits every recorded
/// node exactly once in reverse execution order. Tracked leaves end up with
/// accumulated gradients; untracked tensors are never touched.
template <class Real>
void backward(const Tensor<Real>& loss, Tape<Real>& tape) {
  if (loss.rank() != 0) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(loss.shape()));
  }
  if (!loss.tracked()) {
    throw ContractError("backward: loss is not tracked");
  }
  if (tape.backward_done_) {
    throw StateError("backward: tape already consumed; reset() first");
  }
  Tensor<Real> seed = loss;  // aliases the payload
  seed.grad()[0] = Real(1);
  for (auto it = tape.nodes_.rbegin(); it != tape.nodes_.rend(); ++it) {
    it->backward_fn();
  }
  tape.backward_done_ = true;
}

}  // namespace rtf
