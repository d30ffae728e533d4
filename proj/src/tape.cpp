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

#include "srwm/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace srwm {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kScaleBy: return "scale_by";
    case Op::kMatVec: return "matvec";
    case Op::kMatMul: return "matmul";
    case Op::kOuter: return "outer";
    case Op::kSlice: return "slice";
    case Op::kColSlice: return "col_slice";
    case Op::kConcat: return "concat";
    case Op::kSum: return "sum";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kClampMin: return "clamp_min";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftplus: return "softplus";
    case Op::kRelu: return "relu";
    case Op::kSoftmax: return "softmax";
    case Op::kLayerNorm: return "layer_norm";
    case Op::kStopGradient: return "stop_gradient";
  }
  return "?";
}

template <class T>
const Tensor<T>& Gradients<T>::at(std::uint32_t leaf_id) const {
  auto it = grads_.find(leaf_id);
  if (it == grads_.end()) {
    throw std::out_of_range("no gradient recorded for node " + std::to_string(leaf_id) +
                            " (not a requires_grad leaf)");
  }
  return it->second;
}

template <class T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.owned = std::move(value);
  return emit(std::move(n), "leaf");
}

template <class T>
Var<T> Tape<T>::leaf_view(const Tensor<T>& value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.view = &value;
  return emit(std::move(n), "leaf");
}

template <class T>
Var<T> Tape<T>::emit(Node node, const char* what) {
  if (!node.value().all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + what);
  }
  if (nodes_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("tape node limit reached");
  }
  nodes_.push_back(std::move(node));
  return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

namespace {

template <class T>
Tape<T>& same_tape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument(std::string(what) + ": invalid operand");
  if (&a.tape() != &b.tape()) throw std::invalid_argument(std::string(what) + ": operands on different tapes");
  return a.tape();
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <class T>
typename Tape<T>::Node unary_node(Op op, const Var<T>& a, Tensor<T> value) {
  typename Tape<T>::Node n;
  n.op = op;
  n.in0 = a.id();
  n.requires_grad = a.requires_grad();
  n.owned = std::move(value);
  return n;
}

template <class T>
typename Tape<T>::Node binary_node(Op op, const Var<T>& a, const Var<T>& b, Tensor<T> value) {
  typename Tape<T>::Node n;
  n.op = op;
  n.in0 = a.id();
  n.in1 = b.id();
  n.requires_grad = a.requires_grad() || b.requires_grad();
  n.owned = std::move(value);
  return n;
}

template <class T>
T stable_sigmoid(T x) {
  T y;
  if (x >= T(0)) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    T e = std::exp(x);
    y = e / (T(1) + e);
  }
  // keep the output strictly inside (0, 1)
  return std::clamp(y, std::numeric_limits<T>::min(), std::nextafter(T(1), T(0)));
}

template <class T>
T stable_softplus(T x) {
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, T(0));
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "add");
  require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  auto pb = b.value().data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] += pb[i];
  return tape.emit(binary_node(Op::kAdd, a, b, std::move(out)), "add");
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "sub");
  require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  auto pb = b.value().data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] -= pb[i];
  return tape.emit(binary_node(Op::kSub, a, b, std::move(out)), "sub");
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "mul");
  require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  auto pb = b.value().data();
  auto po = out.data();
  for (std::size_t i = 0; i < po.size(); ++i) po[i] *= pb[i];
  return tape.emit(binary_node(Op::kMul, a, b, std::move(out)), "mul");
}

template <class T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  auto n = unary_node(Op::kScale, a, std::move(out));
  n.param = factor;
  return a.tape().emit(std::move(n), "scale");
}

template <class T>
Var<T> scale_by(const Var<T>& s, const Var<T>& a) {
  auto& tape = same_tape(s, a, "scale_by");
  if (s.size() != 1) {
    throw ShapeError("scale_by: factor must be a single value, got shape " + shape_string(s.shape()) +
                     " against " + shape_string(a.shape()));
  }
  const T f = s.value()[0];
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= f;
  return tape.emit(binary_node(Op::kScaleBy, s, a, std::move(out)), "scale_by");
}

namespace {

// Dot product with a fixed summation order: eight lanes accumulate the
// elements j = l (mod 8), then the lanes are combined pairwise.
template <class T>
T lane_dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  constexpr std::size_t kLanes = 8;
  T acc[kLanes] = {};
  std::size_t j = 0;
  for (; j + kLanes <= n; j += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) acc[l] += a[j + l] * b[j + l];
  }
  for (std::size_t l = 0; j < n; ++j, ++l) acc[l] += a[j] * b[j];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

// out[i] (+)= dot(m[i, :], x) for every row of an r x c matrix.
template <class T, bool kAccumulate>
void row_dots(const T* __restrict m, const T* __restrict x, std::size_t r, std::size_t c, T* __restrict out) {
  for (std::size_t i = 0; i < r; ++i) {
    const T d = lane_dot(m + i * c, x, c);
    if constexpr (kAccumulate) {
      out[i] += d;
    } else {
      out[i] = d;
    }
  }
}

}  // namespace

template <class T>
Var<T> matvec(const Var<T>& m, const Var<T>& x) {
  auto& tape = same_tape(m, x, "matvec");
  const auto& M = m.value();
  const auto& X = x.value();
  if (M.rank() != 2 || X.rank() != 1 || M.cols() != X.size()) {
    throw ShapeError("matvec: shape mismatch " + shape_string(M.shape()) + " vs " + shape_string(X.shape()));
  }
  const std::size_t r = M.rows(), c = M.cols();
  Tensor<T> out({r});
  const T* pm = M.data().data();
  const T* px = X.data().data();
  row_dots<T, false>(pm, px, r, c, out.data().data());
  return tape.emit(binary_node(Op::kMatVec, m, x, std::move(out)), "matvec");
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "matmul");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) {
    throw ShapeError("matmul: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A(i, p);
      for (std::size_t j = 0; j < n; ++j) out(i, j) += av * B(p, j);
    }
  }
  return tape.emit(binary_node(Op::kMatMul, a, b, std::move(out)), "matmul");
}

template <class T>
Var<T> outer(const Var<T>& a, const Var<T>& b) {
  auto& tape = same_tape(a, b, "outer");
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 1 || B.rank() != 1) {
    throw ShapeError("outer: expects vectors, got " + shape_string(A.shape()) + " and " + shape_string(B.shape()));
  }
  const std::size_t m = A.size(), n = B.size();
  Tensor<T> out({m, n});
  T* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T av = A[i];
    for (std::size_t j = 0; j < n; ++j) po[i * n + j] = av * B[j];
  }
  return tape.emit(binary_node(Op::kOuter, a, b, std::move(out)), "outer");
}

namespace {

template <class T>
Var<T> contiguous_slice(const Var<T>& v, std::size_t offset, Shape shape, const char* what) {
  const std::size_t len = shape_size(shape);
  if (offset + len > v.size()) {
    throw ShapeError(std::string(what) + ": range [" + std::to_string(offset) + ", " +
                     std::to_string(offset + len) + ") out of bounds for shape " + shape_string(v.shape()));
  }
  auto src = v.value().data();
  std::vector<T> data(src.begin() + static_cast<std::ptrdiff_t>(offset),
                      src.begin() + static_cast<std::ptrdiff_t>(offset + len));
  auto n = unary_node(Op::kSlice, v, Tensor<T>(std::move(shape), std::move(data)));
  n.offset = offset;
  return v.tape().emit(std::move(n), what);
}

}  // namespace

template <class T>
Var<T> slice(const Var<T>& v, std::size_t offset, std::size_t length) {
  if (v.value().rank() != 1) throw ShapeError("slice: expects a vector, got " + shape_string(v.shape()));
  return contiguous_slice(v, offset, Shape{length}, "slice");
}

template <class T>
Var<T> row_slice(const Var<T>& m, std::size_t first, std::size_t count) {
  if (m.value().rank() != 2) throw ShapeError("row_slice: expects a matrix, got " + shape_string(m.shape()));
  const std::size_t c = m.value().cols();
  return contiguous_slice(m, first * c, Shape{count, c}, "row_slice");
}

template <class T>
Var<T> row(const Var<T>& m, std::size_t index) {
  if (m.value().rank() != 2) throw ShapeError("row: expects a matrix, got " + shape_string(m.shape()));
  const std::size_t c = m.value().cols();
  return contiguous_slice(m, index * c, Shape{c}, "row");
}

template <class T>
Var<T> col_slice(const Var<T>& m, std::size_t first, std::size_t count) {
  const auto& M = m.value();
  if (M.rank() != 2 || first + count > M.cols() || count == 0) {
    throw ShapeError("col_slice: columns [" + std::to_string(first) + ", " + std::to_string(first + count) +
                     ") invalid for shape " + shape_string(M.shape()));
  }
  Tensor<T> out({M.rows(), count});
  for (std::size_t i = 0; i < M.rows(); ++i) {
    for (std::size_t j = 0; j < count; ++j) out(i, j) = M(i, first + j);
  }
  auto n = unary_node(Op::kColSlice, m, std::move(out));
  n.offset = first;
  return m.tape().emit(std::move(n), "col_slice");
}

template <class T>
Var<T> concat(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  typename Tape<T>::Node n;
  n.op = Op::kConcat;
  std::size_t total = 0;
  for (const auto& p : parts) {
    same_tape(parts[0], p, "concat");
    if (p.value().rank() != 1) throw ShapeError("concat: expects vectors, got " + shape_string(p.shape()));
    total += p.size();
    n.requires_grad = n.requires_grad || p.requires_grad();
    n.inputs.push_back(p.id());
  }
  std::vector<T> data;
  data.reserve(total);
  for (const auto& p : parts) {
    auto src = p.value().data();
    data.insert(data.end(), src.begin(), src.end());
  }
  n.owned = Tensor<T>({total}, std::move(data));
  return parts[0].tape().emit(std::move(n), "concat");
}

template <class T>
Var<T> sum(const Var<T>& a) {
  T acc = T(0);
  for (T v : a.value().data()) acc += v;
  return a.tape().emit(unary_node(Op::kSum, a, Tensor<T>::scalar(acc)), "sum");
}

template <class T>
Var<T> log(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::log(v);
  return a.tape().emit(unary_node(Op::kLog, a, std::move(out)), "log");
}

template <class T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::exp(v);
  return a.tape().emit(unary_node(Op::kExp, a, std::move(out)), "exp");
}

template <class T>
Var<T> clamp_min(const Var<T>& a, T floor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::max(v, floor);
  auto n = unary_node(Op::kClampMin, a, std::move(out));
  n.param = floor;
  return a.tape().emit(std::move(n), "clamp_min");
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = stable_sigmoid(v);
  return a.tape().emit(unary_node(Op::kSigmoid, a, std::move(out)), "sigmoid");
}

template <class T>
Var<T> softplus(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = stable_softplus(v);
  return a.tape().emit(unary_node(Op::kSoftplus, a, std::move(out)), "softplus");
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::max(v, T(0));
  return a.tape().emit(unary_node(Op::kRelu, a, std::move(out)), "relu");
}

template <class T>
Var<T> softmax(const Var<T>& a) {
  const auto& A = a.value();
  if (A.rank() == 0 || A.rank() > 2) throw ShapeError("softmax: expects a vector or matrix, got " + shape_string(A.shape()));
  Tensor<T> out = A;
  const std::size_t width = A.rank() == 1 ? A.size() : A.cols();
  const std::size_t count = A.size() / width;
  for (std::size_t r = 0; r < count; ++r) {
    T* p = out.data().data() + r * width;
    T mx = p[0];
    for (std::size_t j = 1; j < width; ++j) mx = std::max(mx, p[j]);
    T total = T(0);
    for (std::size_t j = 0; j < width; ++j) {
      p[j] = std::exp(p[j] - mx);
      total += p[j];
    }
    for (std::size_t j = 0; j < width; ++j) p[j] /= total;
  }
  return a.tape().emit(unary_node(Op::kSoftmax, a, std::move(out)), "softmax");
}

template <class T>
Var<T> layer_norm(const Var<T>& a, T eps) {
  const auto& A = a.value();
  if (A.rank() != 1) throw ShapeError("layer_norm: expects a vector, got " + shape_string(A.shape()));
  const std::size_t n = A.size();
  T mean = T(0);
  for (T v : A.data()) mean += v;
  mean /= static_cast<T>(n);
  T var = T(0);
  for (T v : A.data()) var += (v - mean) * (v - mean);
  var /= static_cast<T>(n);
  const T inv_std = T(1) / std::sqrt(var + eps);
  Tensor<T> out = A;
  for (auto& v : out.data()) v = (v - mean) * inv_std;
  auto node = unary_node(Op::kLayerNorm, a, std::move(out));
  node.param = inv_std;
  return a.tape().emit(std::move(node), "layer_norm");
}

template <class T>
Var<T> stop_gradient(const Var<T>& a) {
  auto n = unary_node(Op::kStopGradient, a, a.value());
  n.requires_grad = false;
  return a.tape().emit(std::move(n), "stop_gradient");
}

template <class T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  if (!loss.valid() || &loss.tape() != this) throw std::invalid_argument("backward: loss is not on this tape");
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  if (nodes_.empty()) throw std::invalid_argument("backward: empty tape");

  std::vector<std::vector<T>> grads(nodes_.size());
  auto grad_of = [&](std::uint32_t id) -> T* {
    auto& g = grads[id];
    if (g.empty()) g.assign(nodes_[id].value().size(), T(0));
    return g.data();
  };

  if (nodes_[loss.id()].requires_grad) grad_of(loss.id())[0] = T(1);

  for (std::int64_t idx = loss.id(); idx >= 0; --idx) {
    const auto id = static_cast<std::uint32_t>(idx);
    const Node& n = nodes_[id];
    if (!n.requires_grad || grads[id].empty() || n.op == Op::kLeaf) continue;
    const T* g = grads[id].data();
    const auto& out = n.value();
    const std::size_t size = out.size();
    const Node& a = nodes_[n.in0];

    switch (n.op) {
      case Op::kAdd: {
        if (a.requires_grad) {
          T* ga = grad_of(n.in0);
          for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
        }
        if (nodes_[n.in1].requires_grad) {
          T* gb = grad_of(n.in1);
          for (std::size_t i = 0; i < size; ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::kSub: {
        if (a.requires_grad) {
          T* ga = grad_of(n.in0);
          for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
        }
        if (nodes_[n.in1].requires_grad) {
          T* gb = grad_of(n.in1);
          for (std::size_t i = 0; i < size; ++i) gb[i] -= g[i];
        }
        break;
      }
      case Op::kMul: {
        const Node& b = nodes_[n.in1];
        const auto av = a.value().data();
        const auto bv = b.value().data();
        if (a.requires_grad) {
          T* ga = grad_of(n.in0);
          for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * bv[i];
        }
        if (b.requires_grad) {
          T* gb = grad_of(n.in1);
          for (std::size_t i = 0; i < size; ++i) gb[i] += g[i] * av[i];
        }
        break;
      }
      case Op::kScale: {
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * n.param;
        break;
      }
      case Op::kScaleBy: {
        // in0 = scalar factor, in1 = tensor
        const Node& t = nodes_[n.in1];
        const auto tv = t.value().data();
        const T f = a.value()[0];
        if (a.requires_grad) {
          T acc = T(0);
          for (std::size_t i = 0; i < size; ++i) acc += g[i] * tv[i];
          grad_of(n.in0)[0] += acc;
        }
        if (t.requires_grad) {
          T* gt = grad_of(n.in1);
          for (std::size_t i = 0; i < size; ++i) gt[i] += g[i] * f;
        }
        break;
      }
      case Op::kMatVec: {
        const Node& x = nodes_[n.in1];
        const auto& M = a.value();
        const std::size_t r = M.rows(), c = M.cols();
        const T* pm = M.data().data();
        const T* px = x.value().data().data();
        if (a.requires_grad) {
          T* __restrict gm = grad_of(n.in0);
          for (std::size_t i = 0; i < r; ++i) {
            const T gi = g[i];
            T* __restrict row = gm + i * c;
            for (std::size_t j = 0; j < c; ++j) row[j] += gi * px[j];
          }
        }
        if (x.requires_grad) {
          T* __restrict gx = grad_of(n.in1);
          for (std::size_t i = 0; i < r; ++i) {
            const T gi = g[i];
            const T* __restrict row = pm + i * c;
            for (std::size_t j = 0; j < c; ++j) gx[j] += row[j] * gi;
          }
        }
        break;
      }
      case Op::kMatMul: {
        const Node& b = nodes_[n.in1];
        const auto& A = a.value();
        const auto& B = b.value();
        const std::size_t m = A.rows(), k = A.cols(), cols = B.cols();
        if (a.requires_grad) {
          T* ga = grad_of(n.in0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              T acc = T(0);
              for (std::size_t j = 0; j < cols; ++j) acc += g[i * cols + j] * B(p, j);
              ga[i * k + p] += acc;
            }
        }
        if (b.requires_grad) {
          T* gb = grad_of(n.in1);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const T av = A(i, p);
              for (std::size_t j = 0; j < cols; ++j) gb[p * cols + j] += av * g[i * cols + j];
            }
        }
        break;
      }
      case Op::kOuter: {
        const Node& b = nodes_[n.in1];
        const auto av = a.value().data();
        const auto bv = b.value().data();
        const std::size_t m = av.size(), cols = bv.size();
        if (a.requires_grad) row_dots<T, true>(g, bv.data(), m, cols, grad_of(n.in0));
        if (b.requires_grad) {
          T* __restrict gb = grad_of(n.in1);
          for (std::size_t i = 0; i < m; ++i) {
            const T ai = av[i];
            const T* __restrict gi = g + i * cols;
            for (std::size_t j = 0; j < cols; ++j) gb[j] += ai * gi[j];
          }
        }
        break;
      }
      case Op::kSlice: {
        T* ga = grad_of(n.in0) + n.offset;
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i];
        break;
      }
      case Op::kColSlice: {
        const std::size_t src_cols = a.value().cols();
        const std::size_t cols = out.cols();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < out.rows(); ++i)
          for (std::size_t j = 0; j < cols; ++j) ga[i * src_cols + n.offset + j] += g[i * cols + j];
        break;
      }
      case Op::kConcat: {
        std::size_t off = 0;
        for (auto in : n.inputs) {
          const std::size_t len = nodes_[in].value().size();
          if (nodes_[in].requires_grad) {
            T* gi = grad_of(in);
            for (std::size_t i = 0; i < len; ++i) gi[i] += g[off + i];
          }
          off += len;
        }
        break;
      }
      case Op::kSum: {
        T* ga = grad_of(n.in0);
        const std::size_t len = a.value().size();
        for (std::size_t i = 0; i < len; ++i) ga[i] += g[0];
        break;
      }
      case Op::kLog: {
        const auto av = a.value().data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] / av[i];
        break;
      }
      case Op::kExp: {
        const auto ov = out.data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * ov[i];
        break;
      }
      case Op::kClampMin: {
        const auto av = a.value().data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i)
          if (av[i] >= n.param) ga[i] += g[i];
        break;
      }
      case Op::kSigmoid: {
        const auto ov = out.data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * ov[i] * (T(1) - ov[i]);
        break;
      }
      case Op::kSoftplus: {
        const auto av = a.value().data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += g[i] * stable_sigmoid(av[i]);
        break;
      }
      case Op::kRelu: {
        const auto av = a.value().data();
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i)
          if (av[i] > T(0)) ga[i] += g[i];
        break;
      }
      case Op::kSoftmax: {
        const std::size_t width = out.rank() == 1 ? size : out.cols();
        const T* ov = out.data().data();
        T* ga = grad_of(n.in0);
        for (std::size_t r = 0; r < size / width; ++r) {
          const T* o = ov + r * width;
          const T* gr = g + r * width;
          T dot = T(0);
          for (std::size_t j = 0; j < width; ++j) dot += gr[j] * o[j];
          for (std::size_t j = 0; j < width; ++j) ga[r * width + j] += o[j] * (gr[j] - dot);
        }
        break;
      }
      case Op::kLayerNorm: {
        const T* y = out.data().data();
        T mean_g = T(0), mean_gy = T(0);
        for (std::size_t i = 0; i < size; ++i) {
          mean_g += g[i];
          mean_gy += g[i] * y[i];
        }
        mean_g /= static_cast<T>(size);
        mean_gy /= static_cast<T>(size);
        T* ga = grad_of(n.in0);
        for (std::size_t i = 0; i < size; ++i) ga[i] += n.param * (g[i] - mean_g - y[i] * mean_gy);
        break;
      }
      case Op::kStopGradient:
      case Op::kLeaf:
        break;
    }
  }

  Gradients<T> result;
  for (std::uint32_t id = 0; id < nodes_.size(); ++id) {
    const Node& n = nodes_[id];
    if (n.op != Op::kLeaf || !n.requires_grad) continue;
    Tensor<T> g(n.value().shape());
    if (!grads[id].empty()) g.storage() = std::move(grads[id]);
    result.grads_.emplace(id, std::move(g));
  }
  return result;
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

#define SRWM_INSTANTIATE_OPS(T)                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                              \
  template Var<T> sub(const Var<T>&, const Var<T>&);                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                              \
  template Var<T> scale(const Var<T>&, T);                                        \
  template Var<T> scale_by(const Var<T>&, const Var<T>&);                         \
  template Var<T> matvec(const Var<T>&, const Var<T>&);                           \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                           \
  template Var<T> outer(const Var<T>&, const Var<T>&);                            \
  template Var<T> slice(const Var<T>&, std::size_t, std::size_t);                 \
  template Var<T> row_slice(const Var<T>&, std::size_t, std::size_t);             \
  template Var<T> row(const Var<T>&, std::size_t);                                \
  template Var<T> col_slice(const Var<T>&, std::size_t, std::size_t);             \
  template Var<T> concat(std::span<const Var<T>>);                                \
  template Var<T> sum(const Var<T>&);                                             \
  template Var<T> log(const Var<T>&);                                             \
  template Var<T> exp(const Var<T>&);                                             \
  template Var<T> clamp_min(const Var<T>&, T);                                    \
  template Var<T> sigmoid(const Var<T>&);                                         \
  template Var<T> softplus(const Var<T>&);                                        \
  template Var<T> relu(const Var<T>&);                                            \
  template Var<T> softmax(const Var<T>&);                                         \
  template Var<T> layer_norm(const Var<T>&, T);                                   \
  template Var<T> stop_gradient(const Var<T>&);

SRWM_INSTANTIATE_OPS(float)
SRWM_INSTANTIATE_OPS(double)

}  // namespace srwm
