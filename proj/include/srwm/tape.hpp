/*
 * Copyright 2026 The srwm Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape owns every intermediate value of a computation. Operations append
// nodes in execution order, so the node list is always topologically sorted
// and backward() is a single reverse sweep. Tapes are single-threaded; use
// one tape per episode and merge the resulting gradient maps.

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "srwm/tensor.hpp"

namespace srwm {

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy; values are immutable.
template <class T>
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape<T>& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  friend class Tape<T>;
  Var(Tape<T>* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

enum class Op : std::uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kScaleBy,
  kMatVec,
  kMatMul,
  kOuter,
  kSlice,
  kColSlice,
  kConcat,
  kSum,
  kLog,
  kExp,
  kClampMin,
  kSigmoid,
  kSoftplus,
  kRelu,
  kSoftmax,
  kLayerNorm,
  kStopGradient,
};

const char* op_name(Op op);

/// Gradients keyed by leaf node id. Holds an entry for every leaf that was
/// created with requires_grad, zero-filled when the loss does not reach it.
template <class T>
class Gradients {
 public:
  const Tensor<T>& operator[](const Var<T>& leaf) const { return at(leaf.id()); }
  const Tensor<T>& at(std::uint32_t leaf_id) const;
  bool contains(std::uint32_t leaf_id) const { return grads_.count(leaf_id) != 0; }
  std::size_t size() const { return grads_.size(); }
  const std::map<std::uint32_t, Tensor<T>>& entries() const { return grads_; }

 private:
  friend class Tape<T>;
  std::map<std::uint32_t, Tensor<T>> grads_;
};

template <class T>
class Tape {
 public:
  struct Node {
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::uint32_t in0 = 0;
    std::uint32_t in1 = 0;
    std::size_t offset = 0;  // slice offset / column start
    T param = T(0);          // scale factor, clamp floor, layer-norm inverse std
    Tensor<T> owned;
    const Tensor<T>* view = nullptr;  // borrowed leaf value, never freed by the tape
    std::vector<std::uint32_t> inputs;  // concat operands

    const Tensor<T>& value() const { return view ? *view : owned; }
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that owns a copy of `value`.
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  /// Leaf that references `value`; the caller must keep it alive and unchanged.
  Var<T> leaf_view(const Tensor<T>& value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  Gradients<T> backward(const Var<T>& loss) const;

  /// Drops every node; all Vars on this tape become dangling.
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  void reserve(std::size_t n) { nodes_.reserve(n); }

  const Node& node(std::uint32_t id) const { return nodes_[id]; }

  // Low-level recording used by the primitive operations.
  Var<T> emit(Node node, const char* what);

 private:
  std::vector<Node> nodes_;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape_->node(id_).value();
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape_->node(id_).requires_grad;
}

// ---------------------------------------------------------------------------
// Primitive operations. All shapes must match exactly unless stated
// otherwise; the only broadcast is scalar times tensor.

template <class T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <class T> Var<T> scale(const Var<T>& a, T factor);
/// `s` must hold exactly one value.
template <class T> Var<T> scale_by(const Var<T>& s, const Var<T>& a);
/// (r x c) * (c) -> (r)
template <class T> Var<T> matvec(const Var<T>& m, const Var<T>& x);
/// (m x k) * (k x n) -> (m x n)
template <class T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// (m) x (n) -> (m x n)
template <class T> Var<T> outer(const Var<T>& a, const Var<T>& b);
/// Contiguous element range of a vector.
template <class T> Var<T> slice(const Var<T>& v, std::size_t offset, std::size_t length);
/// Rows [first, first + count) of a matrix.
template <class T> Var<T> row_slice(const Var<T>& m, std::size_t first, std::size_t count);
/// Single matrix row as a vector.
template <class T> Var<T> row(const Var<T>& m, std::size_t index);
/// Columns [first, first + count) of a matrix.
template <class T> Var<T> col_slice(const Var<T>& m, std::size_t first, std::size_t count);
/// Concatenation of vectors.
template <class T> Var<T> concat(std::span<const Var<T>> parts);
template <class T> Var<T> sum(const Var<T>& a);
template <class T> Var<T> log(const Var<T>& a);
template <class T> Var<T> exp(const Var<T>& a);
/// max(a, floor); gradient passes where a >= floor.
template <class T> Var<T> clamp_min(const Var<T>& a, T floor);
template <class T> Var<T> sigmoid(const Var<T>& a);
template <class T> Var<T> softplus(const Var<T>& a);
template <class T> Var<T> relu(const Var<T>& a);
/// Softmax over the last axis (row-wise for matrices), max-subtracted.
template <class T> Var<T> softmax(const Var<T>& a);
/// (x - mean) / sqrt(var + eps) over a vector; no affine part.
template <class T> Var<T> layer_norm(const Var<T>& a, T eps = T(1e-5));
/// Forward identity, backward zero.
template <class T> Var<T> stop_gradient(const Var<T>& a);

template <class T> Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <class T> Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <class T> Var<T> operator*(const Var<T>& a, const Var<T>& b) { return mul(a, b); }

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace srwm
