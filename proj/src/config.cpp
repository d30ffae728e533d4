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

#include "srwm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

namespace srwm {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.')) return false;
  return true;
}

}  // namespace

KeyValues KeyValues::parse(std::string_view text, const std::string& source) {
  KeyValues kv;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++lineno;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (!valid_key(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": invalid key '" + key + "'");
    kv.set(key, trim(std::string_view(line).substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValues::set(const std::string& key, const std::string& value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = value;
      return;
    }
  }
  entries_.emplace_back(key, value);
}

void KeyValues::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  const std::string key = trim(std::string_view(assignment).substr(0, eq));
  if (!valid_key(key)) throw ConfigError("invalid key '" + key + "'");
  set(key, trim(std::string_view(assignment).substr(eq + 1)));
}

std::optional<std::string> KeyValues::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

bool KeyValues::erase(const std::string& key) {
  for (auto it = entries_.begin(); it != entries_.end(); ++it) {
    if (it->first == key) {
      entries_.erase(it);
      return true;
    }
  }
  return false;
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

std::string KeyValues::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// TrainConfig <-> key/value

namespace {

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  const char* key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

#define SIZE_FIELD(name, member)                                                      \
  Field {                                                                             \
    name, [](const TrainConfig& c) { return std::to_string(c.member); },              \
        [](TrainConfig& c, const std::string& v) { c.member = parse_size(name, v); } \
  }
#define REAL_FIELD(name, member)                                                      \
  Field {                                                                             \
    name, [](const TrainConfig& c) { return format_double(c.member); },               \
        [](TrainConfig& c, const std::string& v) { c.member = parse_real(name, v); } \
  }
#define BOOL_FIELD(name, member)                                                       \
  Field {                                                                              \
    name, [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }, \
        [](TrainConfig& c, const std::string& v) { c.member = parse_bool(name, v); }  \
  }
#define STRING_FIELD(name, member)                                     \
  Field {                                                              \
    name, [](const TrainConfig& c) { return c.member; },               \
        [](TrainConfig& c, const std::string& v) { c.member = v; }     \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("n_way", n_way),
      SIZE_FIELD("k_shot", k_shot),
      SIZE_FIELD("k_extra", k_extra),
      SIZE_FIELD("queries", queries),
      SIZE_FIELD("batch_size", batch_size),
      SIZE_FIELD("steps", steps),
      REAL_FIELD("lr_peak", lr_peak),
      SIZE_FIELD("warmup", warmup),
      REAL_FIELD("beta1", loss.beta1),
      REAL_FIELD("beta2", loss.beta2),
      REAL_FIELD("beta3", loss.beta3),
      Field{"seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
            [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      SIZE_FIELD("eval_interval", eval_interval),
      SIZE_FIELD("max_unroll", max_unroll),
      BOOL_FIELD("delayed_labels", delayed_labels),
      REAL_FIELD("temperature", temperature),
      REAL_FIELD("adam_b1", adam_b1),
      REAL_FIELD("adam_b2", adam_b2),
      REAL_FIELD("adam_eps", adam_eps),
      REAL_FIELD("clip_norm", clip_norm),
      Field{"precision", [](const TrainConfig& c) { return std::string(c.precision == Precision::kF64 ? "f64" : "f32"); },
            [](TrainConfig& c, const std::string& v) {
              if (v == "f64") {
                c.precision = Precision::kF64;
              } else if (v == "f32") {
                c.precision = Precision::kF32;
              } else {
                throw ConfigError("precision: expected f64 or f32, got '" + v + "'");
              }
            }},
      SIZE_FIELD("input_dim", input_dim),
      SIZE_FIELD("blocks", blocks),
      SIZE_FIELD("d_model", d_model),
      SIZE_FIELD("heads", heads),
      SIZE_FIELD("d_ff", d_ff),
      Field{"activation", [](const TrainConfig& c) { return std::string(activation_name(c.activation)); },
            [](TrainConfig& c, const std::string& v) { c.activation = parse_activation(v); }},
      BOOL_FIELD("merge_projection", merge_projection),
      BOOL_FIELD("phi_on_input", phi_on_input),
      STRING_FIELD("dataset", data.dataset),
      SIZE_FIELD("synth_dim", data.synth_dim),
      REAL_FIELD("synth_spread", data.synth_spread),
      SIZE_FIELD("synth_train_classes", data.synth_train_classes),
      SIZE_FIELD("synth_val_classes", data.synth_val_classes),
      SIZE_FIELD("synth_test_classes", data.synth_test_classes),
      SIZE_FIELD("synth_examples", data.synth_examples),
      Field{"data_seed", [](const TrainConfig& c) { return std::to_string(c.data.data_seed); },
            [](TrainConfig& c, const std::string& v) { c.data.data_seed = parse_u64("data_seed", v); }},
      STRING_FIELD("data_root", data.data_root),
      STRING_FIELD("train_manifest", data.train_manifest),
      STRING_FIELD("test_manifest", data.test_manifest),
      Field{"input_mode",
            [](const TrainConfig& c) {
              return std::string(c.data.input_mode == InputMode::kFlatten ? "flatten" : "patch_mean");
            },
            [](TrainConfig& c, const std::string& v) {
              if (v == "flatten") {
                c.data.input_mode = InputMode::kFlatten;
              } else if (v == "patch_mean") {
                c.data.input_mode = InputMode::kPatchMean;
              } else {
                throw ConfigError("input_mode: expected flatten or patch_mean, got '" + v + "'");
              }
            }},
      SIZE_FIELD("patch_size", data.patch_size),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef STRING_FIELD

}  // namespace

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  TrainConfig c;
  for (const auto& [key, value] : kv.entries()) {
    const Field* field = nullptr;
    for (const auto& f : fields())
      if (key == f.key) field = &f;
    if (!field) throw ConfigError("unknown config key '" + key + "'");
    field->set(c, value);
  }
  return c;
}

KeyValues TrainConfig::to_key_values() const {
  KeyValues kv;
  for (const auto& f : fields()) kv.set(f.key, f.get(*this));
  return kv;
}

void TrainConfig::validate() const {
  std::ostringstream bad;
  auto flag = [&](const char* field, const std::string& why) { bad << "\n  " << field << ": " << why; };
  if (n_way < 2) flag("n_way", "must be at least 2");
  if (k_shot == 0) flag("k_shot", "must be positive");
  if (queries == 0) flag("queries", "must be positive");
  if (batch_size == 0) flag("batch_size", "must be at least 1");
  if (steps == 0) flag("steps", "must be positive");
  if (warmup > steps) flag("warmup", "exceeds steps (" + std::to_string(steps) + ")");
  if (!(lr_peak > 0.0)) flag("lr_peak", "must be positive");
  try {
    loss.validate();
  } catch (const ConfigError& e) {
    flag("beta1/beta2/beta3", e.what());
  }
  if (k_extra == 0 && (loss.beta2 > 0.0 || loss.beta3 > 0.0)) {
    flag("k_extra", "beta2/beta3 > 0 need a continuation (k_extra > 0)");
  }
  if (!(temperature > 0.0)) flag("temperature", "must be positive");
  if (!(adam_b1 >= 0.0 && adam_b1 < 1.0)) flag("adam_b1", "must lie in [0, 1)");
  if (!(adam_b2 >= 0.0 && adam_b2 < 1.0)) flag("adam_b2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) flag("adam_eps", "must be positive");
  if (clip_norm < 0.0) flag("clip_norm", "must be non-negative");
  if (n_way * (k_shot + k_extra) + 1 > max_unroll) {
    flag("max_unroll", "episode length " + std::to_string(n_way * (k_shot + k_extra) + 1) + " exceeds " +
                           std::to_string(max_unroll));
  }
  if (data.dataset == "synthetic") {
    if (!(data.synth_spread > 0.0)) flag("synth_spread", "must be positive");
    if (data.synth_dim == 0) flag("synth_dim", "must be positive");
    if (data.synth_train_classes < n_way) flag("synth_train_classes", "fewer than n_way");
    if (data.synth_test_classes < n_way) flag("synth_test_classes", "fewer than n_way");
    if (input_dim != 0 && input_dim != data.synth_dim) flag("input_dim", "differs from synth_dim");
  } else if (data.dataset == "directory") {
    if (data.train_manifest.empty()) flag("train_manifest", "required for dataset = directory");
    if (data.test_manifest.empty()) flag("test_manifest", "required for dataset = directory");
  } else {
    flag("dataset", "expected synthetic or directory, got '" + data.dataset + "'");
  }
  if (heads == 0 || d_model % heads != 0) flag("heads", "must divide d_model");
  if (d_model == 0) flag("d_model", "must be positive");
  if (d_ff == 0) flag("d_ff", "must be positive");
  if (blocks == 0) flag("blocks", "must be positive");
  const std::string msg = bad.str();
  if (!msg.empty()) throw ConfigError("invalid configuration:" + msg);
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.input_dim = input_dim != 0 ? input_dim : (data.dataset == "synthetic" ? data.synth_dim : 0);
  if (m.input_dim == 0) throw ConfigError("input_dim: unknown until the data has been opened");
  m.n_way = n_way;
  m.d_model = d_model;
  m.heads = heads;
  m.d_ff = d_ff;
  m.blocks = blocks;
  m.activation = activation;
  m.merge_projection = merge_projection;
  m.phi_on_input = phi_on_input;
  return m;
}

KeyValues preset(const std::string& name) {
  KeyValues kv;
  if (name == "full") {
    kv = KeyValues::parse(
        "blocks = 3\nd_model = 256\nheads = 16\nd_ff = 2048\nbatch_size = 16\n", "preset:full");
  } else if (name == "desk") {
    kv = KeyValues::parse(
        "blocks = 2\nd_model = 64\nheads = 4\nd_ff = 256\nbatch_size = 16\n"
        "n_way = 5\nk_shot = 5\nsteps = 10000\nwarmup = 500\nlr_peak = 0.001\n"
        "synth_dim = 32\nsynth_spread = 0.5\nsynth_train_classes = 200\nsynth_test_classes = 50\n",
        "preset:desk");
  } else if (name == "micro") {
    kv = KeyValues::parse(
        "blocks = 1\nd_model = 16\nheads = 2\nd_ff = 32\nactivation = softplus\n"
        "n_way = 3\nk_shot = 2\nk_extra = 1\nqueries = 1\nbeta1 = 1\nbeta2 = 5\nbeta3 = 1\n"
        "synth_dim = 8\nsynth_train_classes = 10\nsynth_test_classes = 5\nbatch_size = 2\nsteps = 10\nwarmup = 2\n",
        "preset:micro");
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected full, desk or micro)");
  }
  return kv;
}

TaskSources make_sources(const DataConfig& data) {
  TaskSources s;
  if (data.dataset == "synthetic") {
    SyntheticSpec spec;
    spec.dim = data.synth_dim;
    spec.spread = data.synth_spread;
    spec.seed = data.data_seed;
    spec.examples_per_class = data.synth_examples;
    auto splits = synthetic_splits(spec, data.synth_train_classes, data.synth_val_classes, data.synth_test_classes);
    s.train = std::move(splits.train);
    s.test = std::move(splits.test);
  } else if (data.dataset == "directory") {
    ImageOptions opts{data.input_mode, data.patch_size};
    s.train = image_directory_source(data.data_root, data.train_manifest, Split::kTrain, opts);
    s.test = image_directory_source(data.data_root, data.test_manifest, Split::kTest, opts);
    if (!disjoint_classes(*s.train, *s.test)) {
      throw ConfigError("train and test manifests share class names; few-shot splits must be disjoint");
    }
  } else {
    throw ConfigError("dataset: expected synthetic or directory, got '" + data.dataset + "'");
  }
  return s;
}

}  // namespace srwm
