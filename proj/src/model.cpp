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

#include "srwm/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace srwm {

const char* activation_name(Activation a) {
  return a == Activation::kRelu ? "relu" : "softplus";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "softplus") return Activation::kSoftplus;
  throw ConfigError("activation: expected relu or softplus, got '" + name + "'");
}

void ModelConfig::validate() const {
  std::ostringstream bad;
  auto flag = [&](const char* field, const std::string& why) { bad << "\n  " << field << ": " << why; };
  if (input_dim == 0) flag("input_dim", "must be positive");
  if (n_way < 2) flag("n_way", "must be at least 2");
  if (d_model == 0) flag("d_model", "must be positive");
  if (heads == 0) flag("heads", "must be positive");
  if (heads != 0 && d_model % heads != 0) {
    flag("heads", "d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads));
  }
  if (d_ff == 0) flag("d_ff", "must be positive");
  if (blocks == 0) flag("blocks", "must be positive");
  const std::string msg = bad.str();
  if (!msg.empty()) throw ConfigError("invalid model configuration:" + msg);
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t dh = c.d_model / c.heads;
  std::size_t block = 4 * c.d_model + c.heads * (3 * dh + 1) * dh + 2 * c.d_model * c.d_ff + c.d_ff + c.d_model;
  if (c.merge_projection) block += c.d_model * c.d_model + c.d_model;
  return c.d_model * c.input_dim + c.d_model + (c.n_way + 1) * c.d_model + c.blocks * block + 2 * c.d_model +
         c.n_way * c.d_model + c.n_way;
}

// ---------------------------------------------------------------------------
// Parameter collections

namespace {

template <class P, class F>
void visit_params(P& p, F&& fn) {
  fn("embed.weight", p.embed_weight);
  fn("embed.bias", p.embed_bias);
  fn("label_table", p.label_table);
  for (std::size_t b = 0; b < p.blocks.size(); ++b) {
    auto& blk = p.blocks[b];
    const std::string pre = "block" + std::to_string(b) + ".";
    fn(pre + "norm1.gain", blk.norm1_gain);
    fn(pre + "norm1.bias", blk.norm1_bias);
    for (std::size_t h = 0; h < blk.srwm.w0.size(); ++h) fn(pre + "head" + std::to_string(h) + ".w0", blk.srwm.w0[h]);
    if (!blk.merge_weight.empty()) {
      fn(pre + "merge.weight", blk.merge_weight);
      fn(pre + "merge.bias", blk.merge_bias);
    }
    fn(pre + "norm2.gain", blk.norm2_gain);
    fn(pre + "norm2.bias", blk.norm2_bias);
    fn(pre + "ff_in.weight", blk.ff_in_weight);
    fn(pre + "ff_in.bias", blk.ff_in_bias);
    fn(pre + "ff_out.weight", blk.ff_out_weight);
    fn(pre + "ff_out.bias", blk.ff_out_bias);
  }
  fn("out_norm.gain", p.out_norm_gain);
  fn("out_norm.bias", p.out_norm_bias);
  fn("readout.weight", p.readout_weight);
  fn("readout.bias", p.readout_bias);
}

}  // namespace

template <class T>
void ModelParams<T>::visit(const std::function<void(const std::string&, Tensor<T>&)>& fn) {
  visit_params(*this, fn);
}

template <class T>
void ModelParams<T>::visit(const std::function<void(const std::string&, const Tensor<T>&)>& fn) const {
  visit_params(*this, fn);
}

template <class T>
std::size_t ModelParams<T>::count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <class T>
std::vector<Tensor<T>*> ModelParams<T>::tensors() {
  std::vector<Tensor<T>*> out;
  visit([&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <class T>
std::vector<std::string> ModelParams<T>::names() const {
  std::vector<std::string> out;
  visit([&](const std::string& name, const Tensor<T>&) { out.push_back(name); });
  return out;
}

template <class T>
ModelParams<T> init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&](Shape shape, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
    return t;
  };
  auto filled = [](Shape shape, double value) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(value);
    return t;
  };

  const std::size_t D = config.d_model;
  const std::size_t dh = config.head_dim();
  ModelParams<T> p;
  p.config = config;
  p.embed_weight = uniform({D, config.input_dim}, 1.0 / std::sqrt(static_cast<double>(config.input_dim)));
  p.embed_bias = Tensor<T>({D});
  p.label_table = uniform({config.n_way + 1, D}, 1.0 / std::sqrt(static_cast<double>(D)));
  for (std::size_t j = 0; j < D; ++j) p.label_table(config.n_way, j) = T(0);

  for (std::size_t b = 0; b < config.blocks; ++b) {
    BlockParams<T> blk;
    blk.norm1_gain = filled({D}, 1.0);
    blk.norm1_bias = Tensor<T>({D});
    blk.srwm.phi_on_input = config.phi_on_input;
    for (std::size_t h = 0; h < config.heads; ++h) {
      Tensor<T> w = uniform({config.srwm_rows(), dh}, 1.0 / std::sqrt(static_cast<double>(dh)));
      for (std::size_t j = 0; j < dh; ++j) w(3 * dh, j) = static_cast<T>(kBetaRowInit);
      blk.srwm.w0.push_back(std::move(w));
    }
    if (config.merge_projection) {
      blk.merge_weight = uniform({D, D}, 1.0 / std::sqrt(static_cast<double>(D)));
      blk.merge_bias = Tensor<T>({D});
    }
    blk.norm2_gain = filled({D}, 1.0);
    blk.norm2_bias = Tensor<T>({D});
    blk.ff_in_weight = uniform({config.d_ff, D}, 1.0 / std::sqrt(static_cast<double>(D)));
    blk.ff_in_bias = Tensor<T>({config.d_ff});
    blk.ff_out_weight = uniform({D, config.d_ff}, 1.0 / std::sqrt(static_cast<double>(config.d_ff)));
    blk.ff_out_bias = Tensor<T>({D});
    p.blocks.push_back(std::move(blk));
  }
  p.out_norm_gain = filled({D}, 1.0);
  p.out_norm_bias = Tensor<T>({D});
  p.readout_weight = uniform({config.n_way, D}, 1.0 / std::sqrt(static_cast<double>(D)));
  p.readout_bias = Tensor<T>({config.n_way});
  return p;
}

// ---------------------------------------------------------------------------
// Tape bindings

template <class T>
ModelVars<T> ModelVars<T>::bind(Tape<T>& tape, const ModelParams<T>& p, bool requires_grad) {
  std::vector<Var<T>> leaves;
  p.visit([&](const std::string&, const Tensor<T>& t) { leaves.push_back(tape.leaf_view(t, requires_grad)); });
  return from_leaves(p, leaves);
}

template <class T>
ModelVars<T> ModelVars<T>::from_leaves(const ModelParams<T>& p, std::span<const Var<T>> leaves) {
  std::size_t next = 0;
  auto take = [&]() {
    if (next >= leaves.size()) {
      throw ShapeError("ModelVars::from_leaves: " + std::to_string(leaves.size()) + " leaves for " +
                       std::to_string(p.names().size()) + " parameters");
    }
    return leaves[next++];
  };
  ModelVars<T> m;
  m.config = &p.config;
  m.embed_weight = take();
  m.embed_bias = take();
  m.label_table = take();
  for (const auto& blk : p.blocks) {
    BlockVars<T> b;
    b.norm1_gain = take();
    b.norm1_bias = take();
    for (std::size_t h = 0; h < blk.srwm.w0.size(); ++h) b.w0.push_back(take());
    if (!blk.merge_weight.empty()) {
      b.merge_weight = take();
      b.merge_bias = take();
    }
    b.norm2_gain = take();
    b.norm2_bias = take();
    b.ff_in_weight = take();
    b.ff_in_bias = take();
    b.ff_out_weight = take();
    b.ff_out_bias = take();
    m.blocks.push_back(std::move(b));
  }
  m.out_norm_gain = take();
  m.out_norm_bias = take();
  m.readout_weight = take();
  m.readout_bias = take();
  if (next != leaves.size()) {
    throw ShapeError("ModelVars::from_leaves: " + std::to_string(leaves.size()) + " leaves for " +
                     std::to_string(next) + " parameters");
  }
  return m;
}

template <class T>
std::vector<Var<T>> ModelVars<T>::leaves() const {
  std::vector<Var<T>> out{embed_weight, embed_bias, label_table};
  for (const auto& b : blocks) {
    out.push_back(b.norm1_gain);
    out.push_back(b.norm1_bias);
    out.insert(out.end(), b.w0.begin(), b.w0.end());
    if (b.merge_weight.valid()) {
      out.push_back(b.merge_weight);
      out.push_back(b.merge_bias);
    }
    out.push_back(b.norm2_gain);
    out.push_back(b.norm2_bias);
    out.push_back(b.ff_in_weight);
    out.push_back(b.ff_in_bias);
    out.push_back(b.ff_out_weight);
    out.push_back(b.ff_out_bias);
  }
  out.push_back(out_norm_gain);
  out.push_back(out_norm_bias);
  out.push_back(readout_weight);
  out.push_back(readout_bias);
  return out;
}

// ---------------------------------------------------------------------------
// Forward computation

template <class T>
std::pair<Var<T>, Var<T>> srwm_step(const Var<T>& weights, const Var<T>& input, bool phi_on_input) {
  const auto& shape = weights.shape();
  if (shape.size() != 2) throw ShapeError("srwm_step: weights must be a matrix, got " + shape_string(shape));
  const std::size_t d_in = shape[1];
  if (shape[0] < 2 * d_in + 2) {
    throw ShapeError("srwm_step: weights " + shape_string(shape) + " leave no output rows for d_in " +
                     std::to_string(d_in));
  }
  if (input.shape() != Shape{d_in}) {
    throw ShapeError("srwm_step: input " + shape_string(input.shape()) + " does not match weights " +
                     shape_string(shape));
  }
  const std::size_t d_out = shape[0] - 2 * d_in - 1;

  const Var<T> x = phi_on_input ? softmax(input) : input;
  const Var<T> read = matvec(weights, x);
  const Var<T> y = slice(read, 0, d_out);
  const Var<T> key = softmax(slice(read, d_out, d_in));
  const Var<T> query = softmax(slice(read, d_out + d_in, d_in));
  const Var<T> rate = sigmoid(slice(read, d_out + 2 * d_in, 1));

  const Var<T> v_new = matvec(weights, query);
  const Var<T> v_old = matvec(weights, key);
  const Var<T> delta = scale_by(rate, v_new - v_old);
  return {y, weights + outer(delta, key)};
}

template <class T>
std::pair<Tensor<T>, Tensor<T>> srwm_step(const Tensor<T>& weights, const Tensor<T>& input, bool phi_on_input) {
  Tape<T> tape;
  auto [y, w] = srwm_step(tape.leaf_view(weights, false), tape.leaf_view(input, false), phi_on_input);
  return {y.value(), w.value()};
}

namespace {

template <class T>
Var<T> affine_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias) {
  return layer_norm(x) * gain + bias;
}

template <class T>
Var<T> activate(const Var<T>& x, Activation a) {
  return a == Activation::kRelu ? relu(x) : softplus(x);
}

}  // namespace

template <class T>
Var<T> block_forward(const BlockVars<T>& block, const ModelConfig& config, LayerState<T>& state, const Var<T>& x) {
  if (config.heads == 0 || x.size() != config.d_model || config.d_model % config.heads != 0) {
    throw ConfigError("block_forward: input of size " + std::to_string(x.size()) + " cannot be split into " +
                      std::to_string(config.heads) + " heads of d_model " + std::to_string(config.d_model));
  }
  if (state.weights.size() != config.heads) {
    throw ShapeError("block_forward: state has " + std::to_string(state.weights.size()) + " heads, expected " +
                     std::to_string(config.heads));
  }
  const std::size_t dh = config.head_dim();
  const Var<T> h = affine_norm(x, block.norm1_gain, block.norm1_bias);
  std::vector<Var<T>> outputs;
  outputs.reserve(config.heads);
  for (std::size_t i = 0; i < config.heads; ++i) {
    auto [y, w] = srwm_step(state.weights[i], slice(h, i * dh, dh), config.phi_on_input);
    outputs.push_back(y);
    state.weights[i] = w;
  }
  ++state.step;

  Var<T> merged = config.heads == 1 ? outputs[0] : concat<T>(outputs);
  if (block.merge_weight.valid()) merged = matvec(block.merge_weight, merged) + block.merge_bias;
  const Var<T> r = x + merged;

  const Var<T> z = affine_norm(r, block.norm2_gain, block.norm2_bias);
  const Var<T> hidden = activate(matvec(block.ff_in_weight, z) + block.ff_in_bias, config.activation);
  return r + (matvec(block.ff_out_weight, hidden) + block.ff_out_bias);
}

template <class T>
ModelState<T> initial_state(const ModelVars<T>& model) {
  ModelState<T> state;
  for (const auto& b : model.blocks) state.push_back(LayerState<T>{b.w0, 0});
  return state;
}

template <class T>
Var<T> encode_step(const ModelVars<T>& model, const Var<T>& input, std::size_t label) {
  if (label > model.config->n_way) {
    throw std::out_of_range("encode_step: label " + std::to_string(label) + " outside [0, " +
                            std::to_string(model.config->n_way) + "]");
  }
  return (matvec(model.embed_weight, input) + model.embed_bias) + row(model.label_table, label);
}

template <class T>
Var<T> model_advance(const ModelVars<T>& model, ModelState<T>& state, const Var<T>& encoded) {
  if (state.size() != model.blocks.size()) {
    throw ShapeError("model_advance: state has " + std::to_string(state.size()) + " blocks, model has " +
                     std::to_string(model.blocks.size()));
  }
  Var<T> h = encoded;
  for (std::size_t b = 0; b < model.blocks.size(); ++b) h = block_forward(model.blocks[b], *model.config, state[b], h);
  return h;
}

template <class T>
Var<T> model_readout(const ModelVars<T>& model, const Var<T>& hidden) {
  return matvec(model.readout_weight, affine_norm(hidden, model.out_norm_gain, model.out_norm_bias)) +
         model.readout_bias;
}

template <class T>
Var<T> model_step(const ModelVars<T>& model, ModelState<T>& state, const Var<T>& encoded) {
  return model_readout(model, model_advance(model, state, encoded));
}

template <class T>
std::vector<Var<T>> model_forward(const ModelVars<T>& model, ModelState<T>& state, std::span<const Var<T>> steps) {
  if (steps.empty()) throw std::invalid_argument("model_forward: empty sequence");
  std::vector<Var<T>> logits;
  logits.reserve(steps.size());
  for (const auto& s : steps) logits.push_back(model_step(model, state, s));
  return logits;
}

// ---------------------------------------------------------------------------
// Inference

template <class T>
std::size_t SrwmState<T>::bytes() const {
  std::size_t n = 0;
  for (const auto& blk : weights)
    for (const auto& w : blk) n += w.size() * sizeof(T);
  return n;
}

template <class T>
InferenceSession<T>::InferenceSession(const ModelParams<T>& params) : params_(params) {
  for (const auto& blk : params.blocks) initial_.weights.push_back(blk.srwm.w0);
  state_ = initial_;
}

template <class T>
void InferenceSession<T>::set_state(SrwmState<T> state) {
  if (state.weights.size() != params_.blocks.size()) throw ShapeError("set_state: block count mismatch");
  state_ = std::move(state);
}

template <class T>
void InferenceSession<T>::reset() {
  state_ = initial_;
}

template <class T>
Tensor<T> InferenceSession<T>::feed(const Tensor<T>& input, std::size_t label) {
  tape_.clear();
  const auto model = ModelVars<T>::bind(tape_, params_, false);
  ModelState<T> state;
  for (const auto& blk : state_.weights) {
    LayerState<T> layer{{}, state_.step};
    for (const auto& w : blk) layer.weights.push_back(tape_.leaf_view(w, false));
    state.push_back(std::move(layer));
  }
  const Var<T> logits = model_step(model, state, encode_step(model, tape_.leaf_view(input, false), label));
  for (std::size_t b = 0; b < state.size(); ++b)
    for (std::size_t h = 0; h < state[b].weights.size(); ++h) state_.weights[b][h] = state[b].weights[h].value();
  ++state_.step;
  return logits.value();
}

#define SRWM_INSTANTIATE_MODEL(T)                                                                              \
  template struct ModelParams<T>;                                                                              \
  template struct ModelVars<T>;                                                                                \
  template struct SrwmState<T>;                                                                                \
  template class InferenceSession<T>;                                                                          \
  template ModelParams<T> init_params<T>(const ModelConfig&, std::uint64_t);                                   \
  template std::pair<Var<T>, Var<T>> srwm_step(const Var<T>&, const Var<T>&, bool);                            \
  template std::pair<Tensor<T>, Tensor<T>> srwm_step(const Tensor<T>&, const Tensor<T>&, bool);                \
  template Var<T> block_forward(const BlockVars<T>&, const ModelConfig&, LayerState<T>&, const Var<T>&);       \
  template ModelState<T> initial_state(const ModelVars<T>&);                                                   \
  template Var<T> encode_step(const ModelVars<T>&, const Var<T>&, std::size_t);                                \
  template Var<T> model_advance(const ModelVars<T>&, ModelState<T>&, const Var<T>&);                           \
  template Var<T> model_readout(const ModelVars<T>&, const Var<T>&);                                           \
  template Var<T> model_step(const ModelVars<T>&, ModelState<T>&, const Var<T>&);                              \
  template std::vector<Var<T>> model_forward(const ModelVars<T>&, ModelState<T>&, std::span<const Var<T>>);

SRWM_INSTANTIATE_MODEL(float)
SRWM_INSTANTIATE_MODEL(double)

}  // namespace srwm
