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

// Self-referential weight matrix (SRWM) layer and the sequence model built
// from it.
//
// Each head owns a matrix W of shape (d_out + 2*d_in + 1) x d_in whose rows
// split into an output block, a key block, a query block and a single
// learning-rate row. Reading the matrix with an input yields the output and
// the quantities W uses to rewrite itself with a rank-one update:
//
//   y, k, q, b = W x
//   v  = W softmax(q),   v' = W softmax(k)
//   W <- W + sigmoid(b) (v - v') (x) softmax(k)
//
// The initial matrices W0 are the layer's trainable parameters; the evolved
// matrices are per-episode state.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srwm/tape.hpp"

namespace srwm {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Activation { kRelu, kSoftplus };

const char* activation_name(Activation a);
Activation parse_activation(const std::string& name);

/// Initial value of every entry of the learning-rate row of W0.
inline constexpr double kBetaRowInit = -2.0;

struct ModelConfig {
  std::size_t input_dim = 32;
  std::size_t n_way = 5;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  std::size_t blocks = 2;
  Activation activation = Activation::kRelu;
  bool merge_projection = true;
  bool phi_on_input = false;

  std::size_t head_dim() const { return d_model / heads; }
  /// Rows of a per-head W0: d_out + 2*d_in + 1 with d_out = d_in = head_dim.
  std::size_t srwm_rows() const { return 3 * head_dim() + 1; }
  /// Throws ConfigError listing every offending field.
  void validate() const;
};

/// Closed-form parameter count:
///   embed   d_model*input_dim + d_model
///   labels  (n_way + 1)*d_model
///   block   4*d_model                         (two norms)
///         + heads*(3*d_h + 1)*d_h             (W0)
///         + d_model*d_model + d_model         (merge, when enabled)
///         + 2*d_model*d_ff + d_ff + d_model   (feedforward)
///   head    2*d_model + n_way*d_model + n_way (final norm and readout)
std::size_t parameter_count(const ModelConfig& config);

template <class T>
struct SrwmParams {
  std::vector<Tensor<T>> w0;  // one per head
  bool phi_on_input = false;
};

template <class T>
struct BlockParams {
  Tensor<T> norm1_gain, norm1_bias;
  SrwmParams<T> srwm;
  Tensor<T> merge_weight, merge_bias;  // empty when the merge projection is off
  Tensor<T> norm2_gain, norm2_bias;
  Tensor<T> ff_in_weight, ff_in_bias;
  Tensor<T> ff_out_weight, ff_out_bias;
};

template <class T>
struct ModelParams {
  ModelConfig config;
  Tensor<T> embed_weight, embed_bias;
  Tensor<T> label_table;  // (n_way + 1) x d_model; row n_way is the unknown-label token
  std::vector<BlockParams<T>> blocks;
  Tensor<T> out_norm_gain, out_norm_bias;
  Tensor<T> readout_weight, readout_bias;

  /// Visits every trainable tensor in a fixed order with a stable name.
  void visit(const std::function<void(const std::string&, Tensor<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const;
  std::size_t count() const;
  std::vector<Tensor<T>*> tensors();
  std::vector<std::string> names() const;
};

/// Deterministic initialization from `seed`.
template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Tape bindings

template <class T>
struct BlockVars {
  Var<T> norm1_gain, norm1_bias;
  std::vector<Var<T>> w0;
  Var<T> merge_weight, merge_bias;
  Var<T> norm2_gain, norm2_bias;
  Var<T> ff_in_weight, ff_in_bias;
  Var<T> ff_out_weight, ff_out_bias;
};

template <class T>
struct ModelVars {
  const ModelConfig* config = nullptr;
  Var<T> embed_weight, embed_bias, label_table;
  std::vector<BlockVars<T>> blocks;
  Var<T> out_norm_gain, out_norm_bias;
  Var<T> readout_weight, readout_bias;

  /// Leaves referencing `params` (which must outlive the tape), in visit order.
  static ModelVars bind(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad);
  /// Uses existing leaves, given in visit order; `params` supplies the layout.
  static ModelVars from_leaves(const ModelParams<T>& params, std::span<const Var<T>> leaves);
  std::vector<Var<T>> leaves() const;
};

/// Evolving fast weights of one block: one matrix per head plus the step count.
template <class T>
struct LayerState {
  std::vector<Var<T>> weights;
  std::size_t step = 0;
};

template <class T>
using ModelState = std::vector<LayerState<T>>;

/// One SRWM read-and-update. Returns {y, W_new}.
template <class T>
std::pair<Var<T>, Var<T>> srwm_step(const Var<T>& weights, const Var<T>& input, bool phi_on_input = false);

/// Tape-free convenience wrapper of srwm_step.
template <class T>
std::pair<Tensor<T>, Tensor<T>> srwm_step(const Tensor<T>& weights, const Tensor<T>& input, bool phi_on_input = false);

/// Pre-norm block: x + merge(SRWM heads(norm(x))), then + FF(norm(.)).
template <class T>
Var<T> block_forward(const BlockVars<T>& block, const ModelConfig& config, LayerState<T>& state, const Var<T>& x);

template <class T>
ModelState<T> initial_state(const ModelVars<T>& model);

/// Deep copy; states are immutable tape values, so the copy is independent.
template <class T>
ModelState<T> snapshot_state(const ModelState<T>& state) {
  return state;
}

/// Input embedding plus label embedding. `label` == n_way is the unknown token.
template <class T>
Var<T> encode_step(const ModelVars<T>& model, const Var<T>& input, std::size_t label);

/// Runs one encoded step through every block; returns the final hidden vector.
template <class T>
Var<T> model_advance(const ModelVars<T>& model, ModelState<T>& state, const Var<T>& encoded);

/// Final normalization and readout to n_way logits.
template <class T>
Var<T> model_readout(const ModelVars<T>& model, const Var<T>& hidden);

/// model_readout(model_advance(...)).
template <class T>
Var<T> model_step(const ModelVars<T>& model, ModelState<T>& state, const Var<T>& encoded);

/// Processes `steps` left to right; returns logits for every step.
template <class T>
std::vector<Var<T>> model_forward(const ModelVars<T>& model, ModelState<T>& state, std::span<const Var<T>> steps);

// ---------------------------------------------------------------------------
// Tape-free inference with constant memory in sequence length.

template <class T>
struct SrwmState {
  std::vector<std::vector<Tensor<T>>> weights;  // [block][head]
  std::size_t step = 0;

  std::size_t bytes() const;
};

template <class T>
class InferenceSession {
 public:
  explicit InferenceSession(const ModelParams<T>& params);

  /// Feeds one (input, label) step and returns the logits. The state advances.
  Tensor<T> feed(const Tensor<T>& input, std::size_t label);

  const SrwmState<T>& state() const { return state_; }
  void set_state(SrwmState<T> state);
  void reset();

  /// Nodes on the scratch tape after the last step; bounded independently of
  /// how many steps were fed.
  std::size_t scratch_nodes() const { return tape_.size(); }

 private:
  const ModelParams<T>& params_;
  SrwmState<T> initial_;
  SrwmState<T> state_;
  Tape<T> tape_;
};

}  // namespace srwm
