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

// Episodic training: Adam with warmup, batched rollouts, checkpoints.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "srwm/config.hpp"
#include "srwm/episodes.hpp"
#include "srwm/model.hpp"
#include "srwm/objective.hpp"

namespace srwm {

/// peak * min(step / warmup, sqrt(warmup / step)); constant peak when warmup is 0.
double lr_schedule(std::size_t step, double peak, std::size_t warmup);

struct AdamHyper {
  double b1 = 0.9;
  double b2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::size_t step = 0;

  static OptimState zeros_like(const ModelParams<T>& params);
};

/// Bias-corrected Adam update in place. A non-finite gradient raises
/// NumericError naming the parameter before anything is modified.
template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               std::span<const std::string> names, OptimState<T>& state, double lr, const AdamHyper& hyper);

/// Rescales `grads` so their joint L2 norm is at most max_norm (no-op when
/// max_norm is 0). Returns the norm before clipping.
template <class T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm);

struct MetricsRow {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double t1 = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double acc_student = 0.0;
  double acc_teacher = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,lr,loss,T1,T2,T3,acc_student,acc_teacher";
std::string format_metrics_row(const MetricsRow& row);
std::string metrics_csv(std::span<const MetricsRow> rows);

template <class T>
struct TrainingState {
  TrainConfig config;  // input_dim resolved
  ModelParams<T> params;
  OptimState<T> opt;
  std::size_t step = 0;  // optimizer steps completed
};

/// Fresh parameters and optimizer state. The seed for initialization is
/// derived from config.seed.
template <class T>
TrainingState<T> init_training(const TrainConfig& config, std::size_t input_dim);

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "SRWM"  u32 version  u32 n  n bytes of "key=value\n" lines
//   then one FWTN tensor per parameter, then Adam m and v in the same order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
std::vector<std::uint8_t> checkpoint_bytes(const TrainingState<T>& state);
template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<T>& state);
template <class T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path);
template <class T>
TrainingState<T> parse_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source);

struct CheckpointInfo {
  std::uint32_t version = 0;
  KeyValues header;
  TrainConfig config;
  std::size_t step = 0;
  std::vector<std::string> tensor_names;
  std::vector<Shape> tensor_shapes;
  std::size_t parameter_count = 0;
};

/// Header and tensor listing without materializing a training state.
CheckpointInfo inspect_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first architecture field on which the
/// two configurations disagree.
void require_same_architecture(const TrainConfig& stored, const TrainConfig& requested);

// ---------------------------------------------------------------------------
// Training loop

class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t step, std::string last_checkpoint)
      : std::runtime_error(what), step_(step), last_checkpoint_(std::move(last_checkpoint)) {}
  std::size_t step() const { return step_; }
  /// Empty when no checkpoint had been written yet.
  const std::string& last_checkpoint() const { return last_checkpoint_; }

 private:
  std::size_t step_;
  std::string last_checkpoint_;
};

struct TrainOptions {
  /// Stop once this many steps are complete (0 = config.steps).
  std::size_t stop_at = 0;
  /// Written every eval_interval steps and at the end, when non-empty.
  std::filesystem::path checkpoint_path;
  std::size_t workers = 0;
  std::function<void(const MetricsRow&)> on_step;
};

/// Sampling seed of episode b in optimizer step `step` (1-based).
std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t step, std::size_t b);

/// Continues `state` until the stop step; returns the rows of this call.
template <class T>
std::vector<MetricsRow> train(TrainingState<T>& state, const TaskSource& source, const TrainOptions& options = {});

/// Plain few-shot learner: cross-entropy of the query prediction after the
/// support set, no continuation. Shares sampling, reduction and Adam with
/// train(); requires k_extra = 0.
template <class T>
std::vector<MetricsRow> train_plain_reference(TrainingState<T>& state, const TaskSource& source,
                                              const TrainOptions& options = {});

}  // namespace srwm
