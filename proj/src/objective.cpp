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

#include "srwm/objective.hpp"

#include <cmath>

namespace srwm {

void LossWeights::validate() const {
  for (double b : {beta1, beta2, beta3}) {
    if (!std::isfinite(b) || b < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (beta1 == 0.0 && beta2 == 0.0 && beta3 == 0.0) throw ConfigError("loss weights: all of beta1..beta3 are zero");
}

template <class T>
Var<T> cross_entropy(const Var<T>& target, const Var<T>& predicted) {
  if (target.shape() != predicted.shape()) {
    throw ShapeError("cross_entropy: length mismatch " + shape_string(target.shape()) + " vs " +
                     shape_string(predicted.shape()));
  }
  const Var<T> logp = log(clamp_min(predicted, static_cast<T>(kProbabilityFloor)));
  return scale(sum(target * logp), T(-1));
}

template <class T>
Var<T> one_hot(Tape<T>& tape, std::size_t n, std::size_t index) {
  if (index >= n) throw std::out_of_range("one_hot: index " + std::to_string(index) + " >= " + std::to_string(n));
  Tensor<T> t({n});
  t[index] = T(1);
  return tape.constant(std::move(t));
}

template <class T>
Var<T> mean_of(std::span<const Var<T>> terms) {
  if (terms.empty()) throw std::invalid_argument("mean_of: no terms");
  if (terms.size() == 1) return terms[0];
  Var<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
  return scale(acc, T(1) / static_cast<T>(terms.size()));
}

template <class T>
LossTerms<T> bootstrapped_loss(std::span<const QueryOutputs<T>> outputs, const LossWeights& weights) {
  weights.validate();
  if (outputs.empty()) throw std::invalid_argument("bootstrapped_loss: no queries");
  std::vector<Var<T>> t1, t2, t3;
  for (const auto& q : outputs) {
    t1.push_back(cross_entropy(q.target, q.student));
    t2.push_back(cross_entropy(stop_gradient(q.distill_teacher), q.distill_student));
    t3.push_back(cross_entropy(q.target, q.teacher));
  }
  LossTerms<T> terms;
  terms.student_ce = mean_of<T>(t1);
  terms.distill = mean_of<T>(t2);
  terms.teacher_ce = mean_of<T>(t3);

  const std::pair<double, Var<T>> weighted[] = {
      {weights.beta1, terms.student_ce}, {weights.beta2, terms.distill}, {weights.beta3, terms.teacher_ce}};
  for (const auto& [beta, term] : weighted) {
    if (beta == 0.0) continue;
    const Var<T> part = scale(term, static_cast<T>(beta));
    terms.total = terms.total.valid() ? terms.total + part : part;
  }
  return terms;
}

template <class T>
std::size_t argmax(const Tensor<T>& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

template <class T>
Rollout<T> episode_rollout_loss(const ModelVars<T>& model, const Episode& episode, const LossWeights& weights,
                                const RolloutOptions& options) {
  weights.validate();
  const bool has_teacher = !episode.continuation.empty();
  if (!has_teacher && (weights.beta2 > 0.0 || weights.beta3 > 0.0)) {
    throw ConfigError("episode_rollout_loss: beta2/beta3 need a continuation (K' > 0), episode has K' = 0");
  }
  if (episode.queries.empty()) throw ConfigError("episode_rollout_loss: episode has no queries");
  if (!(options.temperature > 0.0)) throw ConfigError("episode_rollout_loss: temperature must be positive");
  if (!options.frozen_teacher.empty() && options.frozen_teacher.size() != episode.queries.size()) {
    throw ConfigError("episode_rollout_loss: frozen_teacher has " + std::to_string(options.frozen_teacher.size()) +
                      " entries for " + std::to_string(episode.queries.size()) + " queries");
  }

  auto& tape = model.embed_weight.tape();
  const std::size_t n = episode.n_way;
  const EncodedEpisode<T> enc = encode_episode(episode, model, options.delayed_labels);

  ModelState<T> state = initial_state(model);
  for (const auto& step : enc.support) model_advance(model, state, step);
  const ModelState<T> after_support = snapshot_state(state);

  auto query_logits = [&](const ModelState<T>& from) {
    std::vector<Var<T>> out;
    for (const auto& q : enc.queries) {
      ModelState<T> branch = snapshot_state(from);
      out.push_back(model_step(model, branch, q));
    }
    return out;
  };

  const std::vector<Var<T>> student_logits = query_logits(after_support);
  std::vector<Var<T>> teacher_logits = student_logits;
  if (has_teacher) {
    ModelState<T> cont = snapshot_state(after_support);
    for (const auto& step : enc.continuation) model_advance(model, cont, step);
    teacher_logits = query_logits(cont);
  }

  const bool tempered = options.temperature != 1.0;
  const T inv_temp = static_cast<T>(1.0 / options.temperature);
  std::vector<QueryOutputs<T>> outputs;
  std::size_t student_hits = 0, teacher_hits = 0;
  for (std::size_t j = 0; j < episode.queries.size(); ++j) {
    QueryOutputs<T> q;
    q.student = softmax(student_logits[j]);
    q.teacher = has_teacher ? softmax(teacher_logits[j]) : q.student;
    q.target = one_hot(tape, n, episode.queries[j].label);
    q.distill_student = tempered ? softmax(scale(student_logits[j], inv_temp)) : q.student;
    q.distill_teacher = tempered ? softmax(scale(teacher_logits[j], inv_temp)) : q.teacher;
    if (!options.frozen_teacher.empty()) {
      const auto& fixed = options.frozen_teacher[j];
      if (fixed.size() != n) throw ShapeError("episode_rollout_loss: frozen teacher length mismatch");
      Tensor<T> t({n});
      for (std::size_t i = 0; i < n; ++i) t[i] = static_cast<T>(fixed[i]);
      q.distill_teacher = tape.constant(std::move(t));
    }
    outputs.push_back(q);
    student_hits += argmax(student_logits[j].value()) == episode.queries[j].label;
    teacher_hits += argmax(teacher_logits[j].value()) == episode.queries[j].label;
  }

  Rollout<T> r;
  for (const auto& q : outputs) {
    const auto& v = q.distill_teacher.value();
    r.diagnostics.distill_teacher.emplace_back(v.data().begin(), v.data().end());
  }
  r.terms = bootstrapped_loss<T>(outputs, weights);
  r.loss = r.terms.total;
  const double m = static_cast<double>(episode.queries.size());
  r.diagnostics.loss = static_cast<double>(r.loss.value()[0]);
  r.diagnostics.t1 = static_cast<double>(r.terms.student_ce.value()[0]);
  r.diagnostics.t2 = static_cast<double>(r.terms.distill.value()[0]);
  r.diagnostics.t3 = static_cast<double>(r.terms.teacher_ce.value()[0]);
  r.diagnostics.acc_student = static_cast<double>(student_hits) / m;
  r.diagnostics.acc_teacher = static_cast<double>(teacher_hits) / m;
  return r;
}

#define SRWM_INSTANTIATE_OBJECTIVE(T)                                                                 \
  template Var<T> cross_entropy(const Var<T>&, const Var<T>&);                                        \
  template Var<T> one_hot(Tape<T>&, std::size_t, std::size_t);                                        \
  template Var<T> mean_of(std::span<const Var<T>>);                                                   \
  template LossTerms<T> bootstrapped_loss(std::span<const QueryOutputs<T>>, const LossWeights&);      \
  template std::size_t argmax(const Tensor<T>&);                                                      \
  template Rollout<T> episode_rollout_loss(const ModelVars<T>&, const Episode&, const LossWeights&, \
                                           const RolloutOptions&);

SRWM_INSTANTIATE_OBJECTIVE(float)
SRWM_INSTANTIATE_OBJECTIVE(double)

}  // namespace srwm
