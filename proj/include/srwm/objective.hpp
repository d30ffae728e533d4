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

// Bootstrapped few-shot objective.
//
// After the support set the model is in state S (student). Feeding K' more
// labelled shots per class from S gives state S' (teacher). For each query:
//
//   loss = b1 * CE(target, p_S) + b2 * CE(sg(p_S'), p_S) + b3 * CE(target, p_S')
//
// where sg blocks gradients, so the distillation term only pulls the student
// toward the teacher.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "srwm/episodes.hpp"
#include "srwm/model.hpp"
#include "srwm/tape.hpp"

namespace srwm {

/// Floor applied to probabilities before the logarithm in cross_entropy.
inline constexpr double kProbabilityFloor = 1e-30;

struct LossWeights {
  double beta1 = 1.0;
  double beta2 = 0.0;
  double beta3 = 0.0;

  /// Non-negative, finite, and at least one strictly positive.
  void validate() const;
};

/// -sum_y target(y) * log(max(predicted(y), 1e-30)).
template <class T>
Var<T> cross_entropy(const Var<T>& target, const Var<T>& predicted);

template <class T>
Var<T> one_hot(Tape<T>& tape, std::size_t n, std::size_t index);

/// Arithmetic mean of scalars, summed left to right. A single term is returned
/// unchanged.
template <class T>
Var<T> mean_of(std::span<const Var<T>> terms);

/// Per-query model outputs. The distill_* pair defaults to student/teacher and
/// differs only when a distillation temperature other than 1 is configured.
template <class T>
struct QueryOutputs {
  Var<T> student;
  Var<T> teacher;
  Var<T> target;
  Var<T> distill_student;
  Var<T> distill_teacher;
};

template <class T>
struct LossTerms {
  Var<T> total;
  Var<T> student_ce;  // T1
  Var<T> distill;     // T2
  Var<T> teacher_ce;  // T3
};

/// Each term is averaged over queries; the total only includes terms whose
/// weight is non-zero.
template <class T>
LossTerms<T> bootstrapped_loss(std::span<const QueryOutputs<T>> outputs, const LossWeights& weights);

struct RolloutOptions {
  bool delayed_labels = false;
  /// Softmax temperature of the distillation term only.
  double temperature = 1.0;
  /// When non-empty, replaces the distillation target of each query by a
  /// fixed distribution. Finite-difference checks use it to hold sg(p_T) at
  /// its value for the unperturbed parameters.
  std::vector<std::vector<double>> frozen_teacher;
};

struct RolloutDiagnostics {
  double loss = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double acc_student = 0.0;
  double acc_teacher = 0.0;
  /// Distillation target of each query, as fed to the stop-gradient.
  std::vector<std::vector<double>> distill_teacher;
};

template <class T>
struct Rollout {
  Var<T> loss;
  LossTerms<T> terms;
  RolloutDiagnostics diagnostics;
};

/// Support -> snapshot -> (a) queries from the snapshot give the student;
/// (b) continuation from the snapshot, then the same queries, give the
/// teacher. With K' = 0 the teacher is the student itself, which is only
/// allowed when b2 = b3 = 0.
template <class T>
Rollout<T> episode_rollout_loss(const ModelVars<T>& model, const Episode& episode, const LossWeights& weights,
                                const RolloutOptions& options = {});

/// Index of the largest entry; ties resolve to the lowest index.
template <class T>
std::size_t argmax(const Tensor<T>& values);

}  // namespace srwm
