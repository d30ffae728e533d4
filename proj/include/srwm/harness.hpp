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

// Evaluation sweeps over K_test and the reports built from them.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "srwm/config.hpp"
#include "srwm/episodes.hpp"
#include "srwm/gradcheck.hpp"
#include "srwm/model.hpp"

namespace srwm {

inline constexpr std::size_t kDefaultEvalEpisodes = 10000;

struct EvalOptions {
  std::size_t n_way = 5;
  std::size_t k_test = 5;
  std::size_t queries = 1;
  std::size_t episodes = kDefaultEvalEpisodes;
  std::uint64_t seed = 0;
  std::size_t max_unroll = 512;
  bool delayed_labels = false;
  std::size_t workers = 0;
};

struct EvalResult {
  std::size_t correct = 0;
  std::size_t total = 0;  // queries answered
  std::size_t episodes = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

/// Sampling seed of evaluation episode i.
std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t k_test, std::size_t i);

/// Correct queries of each episode: support with labels, then every query
/// from the post-support state with the unknown token. Parameters are only read.
template <class T>
std::vector<std::size_t> evaluate_episodes(const ModelParams<T>& params, std::span<const Episode> episodes,
                                           bool delayed_labels, std::size_t workers = 0);

/// Raises ConfigError when N * K_test + 1 exceeds max_unroll.
template <class T>
EvalResult evaluate(const ModelParams<T>& params, const TaskSource& source, const EvalOptions& options);

/// Loads a checkpoint of either precision and evaluates it on the test pool
/// its data configuration describes (or on `source` when given).
EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const EvalOptions& options,
                               const TaskSource* source = nullptr);

// ---------------------------------------------------------------------------
// Reports

inline constexpr const char* kReportHeader = "config,k_test,mean_acc,std_acc,num_runs,episodes,binom_ci95";

struct EvalRow {
  std::string config;
  std::size_t k_test = 0;
  std::vector<double> run_accuracy;  // percent, one per run seed, in run order
  std::size_t episodes = 0;          // per run
  std::size_t queries = 0;           // per run

  double mean() const;
  /// Sample standard deviation across runs (0 for a single run).
  double std_dev() const;
  /// Half-width of the 95% normal-approximation binomial interval of a single
  /// run at the mean accuracy, in percentage points.
  double binomial_ci95() const;
};

struct PairedDifference {
  double mean = 0.0;
  double std_dev = 0.0;
  std::size_t runs = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  const EvalRow* find(const std::string& config, std::size_t k_test) const;
  std::vector<std::string> configs() const;
  std::vector<std::size_t> k_tests() const;

  std::string csv() const;
  /// Accuracy vs K_test, one line per config.
  std::string svg() const;
  /// K_test rows, config columns, "mean ± std" cells. With exactly two
  /// configs of equal run counts, a paired-difference column is appended.
  std::string markdown() const;
};

/// Per-run difference (other - baseline), paired by run index.
PairedDifference paired_difference(const EvalReport& report, const std::string& baseline, const std::string& other,
                                   std::size_t k_test);

struct SweepGroup {
  std::string label;
  std::vector<std::filesystem::path> checkpoints;  // one per run seed
};

/// Evaluates every checkpoint at every K_test. `base` supplies episodes,
/// seed, queries and workers; N and max_unroll come from each checkpoint.
EvalReport sweep_report(std::span<const SweepGroup> groups, std::span<const std::size_t> k_tests,
                        const EvalOptions& base, const TaskSource* source = nullptr);

// ---------------------------------------------------------------------------
// Tools

/// Finite-difference check of the full episode loss over all parameters, at
/// 64-bit, on one episode sampled from the training pool of `config`.
GradCheckReport gradcheck_config(const TrainConfig& config, std::uint64_t seed, double eps = 1e-5);

/// Writes the synthetic pools of `data` as an image-directory dataset: one
/// f32 FWTN file per example plus train.tsv and test.tsv manifests.
/// Returns the number of files written.
std::size_t make_synthetic_dataset(const DataConfig& data, const std::filesystem::path& out_dir,
                                   std::size_t examples_per_class);

}  // namespace srwm
