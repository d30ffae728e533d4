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

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "srwm/episodes.hpp"
#include "srwm/model.hpp"
#include "srwm/objective.hpp"

namespace srwm {

/// Ordered "key = value" entries. Lines starting with '#' and blank lines are
/// ignored; later assignments to a key replace earlier ones.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& source);
  static KeyValues load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  /// Applies "key=value" (spaces around '=' allowed).
  void set_assignment(const std::string& assignment);
  std::optional<std::string> get(const std::string& key) const;
  bool erase(const std::string& key);
  void merge(const KeyValues& other);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  /// One "key=value" line per entry, in insertion order.
  std::string serialize() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest text that parses back to the same double.
std::string format_double(double v);

enum class Precision { kF64, kF32 };

struct DataConfig {
  std::string dataset = "synthetic";  // synthetic | directory
  std::size_t synth_dim = 32;
  double synth_spread = 0.5;
  std::size_t synth_train_classes = 200;
  std::size_t synth_val_classes = 0;
  std::size_t synth_test_classes = 50;
  std::size_t synth_examples = 600;
  std::uint64_t data_seed = 1234;
  std::string data_root;
  std::string train_manifest;
  std::string test_manifest;
  InputMode input_mode = InputMode::kFlatten;
  std::size_t patch_size = 4;
};

struct TrainConfig {
  std::size_t n_way = 5;
  std::size_t k_shot = 5;
  std::size_t k_extra = 0;
  std::size_t queries = 1;
  std::size_t batch_size = 16;
  std::size_t steps = 1000;
  double lr_peak = 1e-3;
  std::size_t warmup = 100;
  LossWeights loss;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 0;
  std::size_t max_unroll = 512;
  bool delayed_labels = false;
  double temperature = 1.0;
  double adam_b1 = 0.9;
  double adam_b2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;  // 0 disables clipping
  Precision precision = Precision::kF64;
  // Architecture. n_way comes from the task; input_dim = 0 means "take it
  // from the data" and is filled in before training starts.
  std::size_t input_dim = 0;
  std::size_t blocks = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t d_ff = 256;
  Activation activation = Activation::kRelu;
  bool merge_projection = true;
  bool phi_on_input = false;
  DataConfig data;

  /// Unknown keys and malformed values raise ConfigError naming the key.
  static TrainConfig from_key_values(const KeyValues& kv);
  KeyValues to_key_values() const;
  /// Throws ConfigError listing every offending field.
  void validate() const;

  /// Requires a known input dimension (set, or implied by synthetic data).
  ModelConfig model_config() const;
};

/// Named starting points: "full" (full-size architecture), "desk" (small
/// model for laptop-scale runs), "micro" (gradient-check scale).
KeyValues preset(const std::string& name);

struct TaskSources {
  std::unique_ptr<TaskSource> train;
  std::unique_ptr<TaskSource> test;
};

/// Builds the train and test pools described by `data`.
TaskSources make_sources(const DataConfig& data);

}  // namespace srwm
