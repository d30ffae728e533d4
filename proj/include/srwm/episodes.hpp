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

// N-way K-shot episodes and the class pools they are drawn from.

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "srwm/model.hpp"
#include "srwm/tensor.hpp"

namespace srwm {

enum class Split { kTrain, kVal, kTest };
const char* split_name(Split s);

/// Read-only pool of classes. Implementations are safe to share across threads.
class TaskSource {
 public:
  virtual ~TaskSource() = default;
  virtual Split split() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t examples_per_class(std::size_t cls) const = 0;
  virtual std::size_t input_dim() const = 0;
  /// Globally unique class identity, used for disjointness checks across splits.
  virtual std::string class_name(std::size_t cls) const = 0;
  virtual Tensor<double> example(std::size_t cls, std::size_t index) const = 0;
};

/// True when no class name appears in both sources.
bool disjoint_classes(const TaskSource& a, const TaskSource& b);

// ---------------------------------------------------------------------------
// Synthetic Gaussian clusters

struct SyntheticSpec {
  std::size_t dim = 32;
  /// Expected norm of the noise vector; per-coordinate std is spread / sqrt(dim).
  double spread = 0.5;
  std::uint64_t seed = 0;
  std::size_t examples_per_class = 600;
};

/// Classes are isotropic Gaussians around unit-norm random centers. Centers
/// depend only on (seed, global class id); examples on (seed, class, index).
class SyntheticClusterSource final : public TaskSource {
 public:
  SyntheticClusterSource(SyntheticSpec spec, std::size_t first_class, std::size_t num_classes, Split split);

  Split split() const override { return split_; }
  std::size_t num_classes() const override { return centers_.size(); }
  std::size_t examples_per_class(std::size_t) const override { return spec_.examples_per_class; }
  std::size_t input_dim() const override { return spec_.dim; }
  std::string class_name(std::size_t cls) const override;
  Tensor<double> example(std::size_t cls, std::size_t index) const override;

  const Tensor<double>& center(std::size_t cls) const { return centers_.at(cls); }
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
  std::size_t first_class_;
  Split split_;
  std::vector<Tensor<double>> centers_;
};

/// Single pool of `num_classes` classes (train split).
std::unique_ptr<SyntheticClusterSource> synthetic_cluster_source(std::size_t num_classes, std::size_t dim,
                                                                 double spread, std::uint64_t seed);

struct SyntheticSplits {
  std::unique_ptr<SyntheticClusterSource> train, val, test;
};

/// Three disjoint pools carved from one global class numbering.
SyntheticSplits synthetic_splits(const SyntheticSpec& spec, std::size_t train_classes, std::size_t val_classes,
                                 std::size_t test_classes);

// ---------------------------------------------------------------------------
// Image directory

enum class InputMode { kFlatten, kPatchMean };

struct ImageOptions {
  InputMode mode = InputMode::kFlatten;
  std::size_t patch = 4;  // patch side for kPatchMean
};

/// Classes listed by a manifest of "class_name<TAB>relative_path" lines; each
/// file is an FWTN tensor. u8 images are scaled into [0, 1]; float payloads are
/// used as stored. kFlatten feeds the flattened image, kPatchMean the mean of
/// its non-overlapping patch vectors (image must be HxW or HxWxC).
class ImageDirectorySource final : public TaskSource {
 public:
  ImageDirectorySource(const std::filesystem::path& root, const std::filesystem::path& manifest, Split split,
                       ImageOptions options = {});

  Split split() const override { return split_; }
  std::size_t num_classes() const override { return classes_.size(); }
  std::size_t examples_per_class(std::size_t cls) const override { return files_.at(cls).size(); }
  std::size_t input_dim() const override { return input_dim_; }
  std::string class_name(std::size_t cls) const override { return classes_.at(cls); }
  Tensor<double> example(std::size_t cls, std::size_t index) const override;

 private:
  Tensor<double> featurize(const Tensor<double>& image, const std::filesystem::path& path) const;

  Split split_;
  ImageOptions options_;
  Shape image_shape_;
  std::size_t input_dim_ = 0;
  std::vector<std::string> classes_;
  std::vector<std::vector<std::filesystem::path>> files_;
};

std::unique_ptr<ImageDirectorySource> image_directory_source(const std::filesystem::path& root,
                                                             const std::filesystem::path& manifest, Split split,
                                                             ImageOptions options = {});

// ---------------------------------------------------------------------------
// Episodes

struct LabeledInput {
  Tensor<double> input;
  std::size_t label = 0;       // episode label in [0, N)
  std::size_t class_id = 0;    // index into the source
  std::size_t example_id = 0;  // index within the class
};

struct Episode {
  std::size_t n_way = 0;
  std::size_t k_shot = 0;
  std::size_t k_extra = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> label_to_class;  // source class of each label
  std::vector<LabeledInput> support;        // N*K, each label K times
  std::vector<LabeledInput> continuation;   // N*K', each label K' times
  std::vector<LabeledInput> queries;        // M, label holds the hidden truth
};

class EpisodeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Draws N classes without replacement, assigns labels through a fresh random
/// permutation, and picks distinct examples for support, continuation and
/// queries. Queries cycle through the classes (ceil(M/N) per class at most).
Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot, std::size_t k_extra,
                       std::size_t queries, std::mt19937_64& rng);

/// Convenience overload seeding its own generator.
Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot, std::size_t k_extra,
                       std::size_t queries, std::uint64_t seed);

/// Labels fed alongside each input. Standard mode pairs x_t with y_t; delayed
/// mode pairs x_t with y_{t-1} (the unknown token at t = 1) and continues the
/// chain from the support into the continuation. Queries always get the
/// unknown token, index N.
struct FedLabels {
  std::vector<std::size_t> support;
  std::vector<std::size_t> continuation;
  std::vector<std::size_t> queries;
};

FedLabels fed_labels(const Episode& episode, bool delayed);

template <class T>
struct EncodedEpisode {
  std::vector<Var<T>> support;
  std::vector<Var<T>> continuation;
  std::vector<Var<T>> queries;

  std::size_t length() const { return support.size() + continuation.size() + queries.size(); }
};

/// Step vectors on the model's tape: input embedding + label embedding.
/// The episode must outlive the tape.
template <class T>
EncodedEpisode<T> encode_episode(const Episode& episode, const ModelVars<T>& model, bool delayed);

/// Input tensor on `tape` in precision T (a view for double, a copy for float).
template <class T>
Var<T> input_leaf(Tape<T>& tape, const Tensor<double>& input);

/// Accuracy of the nearest-true-center classifier restricted to each episode's
/// N classes, estimated over `episodes` draws. Upper bound for any learner on
/// the synthetic task.
double bayes_ceiling(const SyntheticClusterSource& source, std::size_t n_way, std::size_t episodes,
                     std::uint64_t seed);

}  // namespace srwm
