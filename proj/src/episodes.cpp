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

#include "srwm/episodes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <unordered_set>

#include "srwm/fwtn.hpp"
#include "srwm/parallel.hpp"

namespace srwm {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

bool disjoint_classes(const TaskSource& a, const TaskSource& b) {
  std::unordered_set<std::string> names;
  for (std::size_t c = 0; c < a.num_classes(); ++c) names.insert(a.class_name(c));
  for (std::size_t c = 0; c < b.num_classes(); ++c) {
    if (names.count(b.class_name(c))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Synthetic clusters

namespace {

constexpr std::uint64_t kCenterStream = 0xc3a7e5;
constexpr std::uint64_t kExampleStream = 0xe8a1b9;

}  // namespace

SyntheticClusterSource::SyntheticClusterSource(SyntheticSpec spec, std::size_t first_class, std::size_t num_classes,
                                               Split split)
    : spec_(spec), first_class_(first_class), split_(split) {
  if (!(spec.spread > 0.0)) throw std::invalid_argument("synthetic source: spread must be positive");
  if (spec.dim == 0) throw std::invalid_argument("synthetic source: dim must be positive");
  if (num_classes == 0) throw std::invalid_argument("synthetic source: needs at least one class");
  centers_.reserve(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::mt19937_64 rng(derive_seed(spec.seed, kCenterStream, first_class + c));
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor<double> center({spec.dim});
    double norm = 0.0;
    while (norm < 1e-12) {
      norm = 0.0;
      for (auto& v : center.data()) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    }
    for (auto& v : center.data()) v /= norm;
    centers_.push_back(std::move(center));
  }
}

std::string SyntheticClusterSource::class_name(std::size_t cls) const {
  return "synthetic/" + std::to_string(spec_.seed) + "/" + std::to_string(first_class_ + cls);
}

Tensor<double> SyntheticClusterSource::example(std::size_t cls, std::size_t index) const {
  if (cls >= centers_.size() || index >= spec_.examples_per_class) {
    throw std::out_of_range("synthetic source: example (" + std::to_string(cls) + ", " + std::to_string(index) +
                            ") out of range");
  }
  std::mt19937_64 rng(derive_seed(spec_.seed, kExampleStream, first_class_ + cls, index));
  std::normal_distribution<double> normal(0.0, spec_.spread / std::sqrt(static_cast<double>(spec_.dim)));
  Tensor<double> x = centers_[cls];
  for (auto& v : x.data()) v += normal(rng);
  return x;
}

std::unique_ptr<SyntheticClusterSource> synthetic_cluster_source(std::size_t num_classes, std::size_t dim,
                                                                 double spread, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.dim = dim;
  spec.spread = spread;
  spec.seed = seed;
  return std::make_unique<SyntheticClusterSource>(spec, 0, num_classes, Split::kTrain);
}

SyntheticSplits synthetic_splits(const SyntheticSpec& spec, std::size_t train_classes, std::size_t val_classes,
                                 std::size_t test_classes) {
  SyntheticSplits s;
  s.train = std::make_unique<SyntheticClusterSource>(spec, 0, train_classes, Split::kTrain);
  if (val_classes > 0) s.val = std::make_unique<SyntheticClusterSource>(spec, train_classes, val_classes, Split::kVal);
  s.test = std::make_unique<SyntheticClusterSource>(spec, train_classes + val_classes, test_classes, Split::kTest);
  return s;
}

// ---------------------------------------------------------------------------
// Image directory

ImageDirectorySource::ImageDirectorySource(const std::filesystem::path& root, const std::filesystem::path& manifest,
                                           Split split, ImageOptions options)
    : split_(split), options_(options) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) +
                        ": expected 'class_name<TAB>relative_path'");
    }
    const std::string cls = line.substr(0, tab);
    const std::filesystem::path file = root / line.substr(tab + 1);
    if (!std::filesystem::is_regular_file(file)) {
      throw std::runtime_error(manifest.string() + ":" + std::to_string(lineno) + ": missing file " + file.string());
    }
    auto [it, inserted] = index.emplace(cls, classes_.size());
    if (inserted) {
      classes_.push_back(cls);
      files_.emplace_back();
    }
    files_[it->second].push_back(file);
  }
  if (classes_.empty()) throw FormatError(manifest.string() + ": manifest lists no files");

  const Tensor<double> first = load_tensor_normalized(files_[0][0]);
  image_shape_ = first.shape();
  input_dim_ = featurize(first, files_[0][0]).size();
}

Tensor<double> ImageDirectorySource::featurize(const Tensor<double>& image, const std::filesystem::path& path) const {
  if (options_.mode == InputMode::kFlatten) return Tensor<double>({image.size()}, image.storage());
  const auto& s = image.shape();
  if (s.size() != 2 && s.size() != 3) {
    throw ShapeError(path.string() + ": patch mode needs an HxW or HxWxC image, got " + shape_string(s));
  }
  const std::size_t p = options_.patch;
  const std::size_t h = s[0], w = s[1], c = s.size() == 3 ? s[2] : 1;
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ShapeError(path.string() + ": image " + shape_string(s) + " not divisible into " + std::to_string(p) +
                     "x" + std::to_string(p) + " patches");
  }
  Tensor<double> out({p * p * c});
  const double patches = static_cast<double>((h / p) * (w / p));
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < c; ++k) out[((i % p) * p + (j % p)) * c + k] += image[(i * w + j) * c + k];
  for (auto& v : out.data()) v /= patches;
  return out;
}

Tensor<double> ImageDirectorySource::example(std::size_t cls, std::size_t index) const {
  const auto& path = files_.at(cls).at(index);
  Tensor<double> image = load_tensor_normalized(path);
  if (image.shape() != image_shape_) {
    throw ShapeError(path.string() + ": shape " + shape_string(image.shape()) + " differs from " +
                     shape_string(image_shape_));
  }
  return featurize(image, path);
}

std::unique_ptr<ImageDirectorySource> image_directory_source(const std::filesystem::path& root,
                                                             const std::filesystem::path& manifest, Split split,
                                                             ImageOptions options) {
  return std::make_unique<ImageDirectorySource>(root, manifest, split, options);
}

// ---------------------------------------------------------------------------
// Episodes

namespace {

std::size_t uniform_index(std::mt19937_64& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

template <class V>
void shuffle(V& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

/// `count` distinct values from [0, n), in random order (Floyd's algorithm).
std::vector<std::size_t> distinct_sample(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(count);
  std::set<std::size_t> taken;
  for (std::size_t j = n - count; j < n; ++j) {
    const std::size_t t = uniform_index(rng, j + 1);
    if (taken.insert(t).second) {
      out.push_back(t);
    } else {
      taken.insert(j);
      out.push_back(j);
    }
  }
  shuffle(out, rng);
  return out;
}

}  // namespace

Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot, std::size_t k_extra,
                       std::size_t queries, std::mt19937_64& rng) {
  if (n_way == 0 || k_shot == 0) throw EpisodeError("sample_episode: N and K must be positive");
  if (source.num_classes() < n_way) {
    throw EpisodeError("sample_episode: need " + std::to_string(n_way) + " classes, " + split_name(source.split()) +
                       " pool has " + std::to_string(source.num_classes()));
  }
  const std::size_t per_class_queries = (queries + n_way - 1) / n_way;
  const std::size_t need = k_shot + k_extra + per_class_queries;

  Episode ep;
  ep.n_way = n_way;
  ep.k_shot = k_shot;
  ep.k_extra = k_extra;
  ep.label_to_class = distinct_sample(source.num_classes(), n_way, rng);
  // fresh class-to-label permutation
  std::vector<std::size_t> permutation(n_way);
  std::iota(permutation.begin(), permutation.end(), std::size_t{0});
  shuffle(permutation, rng);
  {
    std::vector<std::size_t> relabeled(n_way);
    for (std::size_t i = 0; i < n_way; ++i) relabeled[permutation[i]] = ep.label_to_class[i];
    ep.label_to_class = std::move(relabeled);
  }

  std::vector<std::size_t> query_labels;
  for (std::size_t r = 0; r < per_class_queries; ++r)
    for (std::size_t l = 0; l < n_way; ++l) query_labels.push_back(l);
  shuffle(query_labels, rng);
  query_labels.resize(queries);

  std::vector<std::vector<std::size_t>> picks(n_way);
  for (std::size_t label = 0; label < n_way; ++label) {
    const std::size_t cls = ep.label_to_class[label];
    const std::size_t have = source.examples_per_class(cls);
    if (have < need) {
      throw EpisodeError("sample_episode: class '" + source.class_name(cls) + "' has " + std::to_string(have) +
                         " examples, episode needs " + std::to_string(need) + " (short by " +
                         std::to_string(need - have) + ")");
    }
    picks[label] = distinct_sample(have, need, rng);
  }

  auto take = [&](std::size_t label, std::size_t slot) {
    const std::size_t cls = ep.label_to_class[label];
    const std::size_t id = picks[label][slot];
    return LabeledInput{source.example(cls, id), label, cls, id};
  };
  for (std::size_t label = 0; label < n_way; ++label) {
    for (std::size_t i = 0; i < k_shot; ++i) ep.support.push_back(take(label, i));
    for (std::size_t i = 0; i < k_extra; ++i) ep.continuation.push_back(take(label, k_shot + i));
  }
  std::vector<std::size_t> used(n_way, 0);
  for (std::size_t label : query_labels) ep.queries.push_back(take(label, k_shot + k_extra + used[label]++));
  shuffle(ep.support, rng);
  shuffle(ep.continuation, rng);
  return ep;
}

Episode sample_episode(const TaskSource& source, std::size_t n_way, std::size_t k_shot, std::size_t k_extra,
                       std::size_t queries, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Episode ep = sample_episode(source, n_way, k_shot, k_extra, queries, rng);
  ep.seed = seed;
  return ep;
}

FedLabels fed_labels(const Episode& episode, bool delayed) {
  const std::size_t unknown = episode.n_way;
  FedLabels out;
  std::size_t previous = unknown;
  auto feed = [&](const std::vector<LabeledInput>& steps, std::vector<std::size_t>& dst) {
    for (const auto& s : steps) {
      if (delayed) {
        dst.push_back(previous);
        previous = s.label;
      } else {
        dst.push_back(s.label);
      }
    }
  };
  feed(episode.support, out.support);
  feed(episode.continuation, out.continuation);
  out.queries.assign(episode.queries.size(), unknown);
  return out;
}

template <class T>
Var<T> input_leaf(Tape<T>& tape, const Tensor<double>& input) {
  if constexpr (std::is_same_v<T, double>) {
    return tape.leaf_view(input, false);
  } else {
    return tape.constant(input.cast<T>());
  }
}

template <class T>
EncodedEpisode<T> encode_episode(const Episode& episode, const ModelVars<T>& model, bool delayed) {
  if (model.config->n_way != episode.n_way) {
    throw ConfigError("encode_episode: model is " + std::to_string(model.config->n_way) + "-way, episode is " +
                      std::to_string(episode.n_way) + "-way");
  }
  const FedLabels labels = fed_labels(episode, delayed);
  auto& tape = model.embed_weight.tape();
  EncodedEpisode<T> out;
  auto encode = [&](const std::vector<LabeledInput>& steps, const std::vector<std::size_t>& fed,
                    std::vector<Var<T>>& dst) {
    for (std::size_t i = 0; i < steps.size(); ++i) {
      if (steps[i].input.size() != model.config->input_dim) {
        throw ShapeError("encode_episode: input of size " + std::to_string(steps[i].input.size()) +
                         " for a model with input_dim " + std::to_string(model.config->input_dim));
      }
      dst.push_back(encode_step(model, input_leaf(tape, steps[i].input), fed[i]));
    }
  };
  encode(episode.support, labels.support, out.support);
  encode(episode.continuation, labels.continuation, out.continuation);
  encode(episode.queries, labels.queries, out.queries);
  return out;
}

double bayes_ceiling(const SyntheticClusterSource& source, std::size_t n_way, std::size_t episodes,
                     std::uint64_t seed) {
  std::size_t correct = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    Episode ep = sample_episode(source, n_way, 1, 0, 1, derive_seed(seed, e));
    const auto& q = ep.queries[0];
    std::size_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t label = 0; label < n_way; ++label) {
      const auto& c = source.center(ep.label_to_class[label]);
      double d = 0.0;
      for (std::size_t i = 0; i < c.size(); ++i) d += (q.input[i] - c[i]) * (q.input[i] - c[i]);
      if (d < best_dist) {
        best_dist = d;
        best = label;
      }
    }
    correct += best == q.label;
  }
  return static_cast<double>(correct) / static_cast<double>(episodes);
}

template Var<float> input_leaf(Tape<float>&, const Tensor<double>&);
template Var<double> input_leaf(Tape<double>&, const Tensor<double>&);
template EncodedEpisode<float> encode_episode(const Episode&, const ModelVars<float>&, bool);
template EncodedEpisode<double> encode_episode(const Episode&, const ModelVars<double>&, bool);

}  // namespace srwm
