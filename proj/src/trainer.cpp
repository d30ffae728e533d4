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

#include "srwm/trainer.hpp"

#include <cmath>
#include <cstring>

#include "srwm/fwtn.hpp"
#include "srwm/parallel.hpp"

namespace srwm {

double lr_schedule(std::size_t step, double peak, std::size_t warmup) {
  if (step == 0) throw std::invalid_argument("lr_schedule: step must be >= 1");
  if (warmup == 0) return peak;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(warmup);
  return peak * std::min(s / w, std::sqrt(w / s));
}

template <class T>
OptimState<T> OptimState<T>::zeros_like(const ModelParams<T>& params) {
  OptimState<T> s;
  params.visit([&](const std::string&, const Tensor<T>& t) {
    s.m.emplace_back(t.shape());
    s.v.emplace_back(t.shape());
  });
  return s;
}

template <class T>
void adam_step(std::span<Tensor<T>* const> params, std::span<const Tensor<T>> grads,
               std::span<const std::string> names, OptimState<T>& state, double lr, const AdamHyper& hyper) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters, " + std::to_string(grads.size()) +
                     " gradients, " + std::to_string(state.m.size()) + " moment slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = i < names.size() ? names[i] : "#" + std::to_string(i);
    if (grads[i].shape() != params[i]->shape() || state.m[i].shape() != params[i]->shape()) {
      throw ShapeError("adam_step: " + name + " has shape " + shape_string(params[i]->shape()) + " but gradient " +
                       shape_string(grads[i].shape()));
    }
    if (!grads[i].all_finite()) throw NumericError("adam_step: non-finite gradient for parameter " + name);
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.b1, t);
  const double c2 = 1.0 - std::pow(hyper.b2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    const auto& g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = hyper.b1 * static_cast<double>(m[j]) + (1.0 - hyper.b1) * gj;
      const double vj = hyper.b2 * static_cast<double>(v[j]) + (1.0 - hyper.b2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / c1;
      const double vhat = vj / c2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) - lr * mhat / (std::sqrt(vhat) + hyper.eps));
    }
  }
}

template <class T>
double clip_global_norm(std::vector<Tensor<T>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (T v : g.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (auto& v : g.data()) v = static_cast<T>(static_cast<double>(v) * factor);
  }
  return norm;
}

std::string format_metrics_row(const MetricsRow& r) {
  std::string s = std::to_string(r.step);
  for (double v : {r.lr, r.loss, r.t1, r.t2, r.t3, r.acc_student, r.acc_teacher}) s += "," + format_double(v);
  return s;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += format_metrics_row(r) + "\n";
  return out;
}

template <class T>
TrainingState<T> init_training(const TrainConfig& config, std::size_t input_dim) {
  TrainingState<T> s;
  s.config = config;
  if (s.config.input_dim != 0 && s.config.input_dim != input_dim) {
    throw ConfigError("input_dim = " + std::to_string(s.config.input_dim) + " but the data has dimension " +
                      std::to_string(input_dim));
  }
  s.config.input_dim = input_dim;
  s.config.validate();
  s.params = init_params<T>(s.config.model_config(), derive_seed(config.seed, 0));
  s.opt = OptimState<T>::zeros_like(s.params);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'R', 'W', 'M'};

template <class T>
Precision precision_of() {
  return std::is_same_v<T, double> ? Precision::kF64 : Precision::kF32;
}

struct ParsedHeader {
  std::uint32_t version = 0;
  KeyValues kv;
  TrainConfig config;
  std::size_t step = 0;
  std::size_t tensors = 0;
};

ParsedHeader read_header(ByteReader& in) {
  char magic[4];
  in.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw CheckpointError(in.source() + ": not a checkpoint (bad magic at offset 0)");
  }
  ParsedHeader h;
  h.version = in.u32();
  if (h.version != kCheckpointVersion) {
    throw CheckpointError(in.source() + ": unsupported checkpoint version " + std::to_string(h.version) +
                          " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t n = in.u32();
  std::string text(n, '\0');
  in.bytes(text.data(), n);
  h.kv = KeyValues::parse(text, in.source() + " header");
  auto take = [&](const char* key) {
    auto v = h.kv.get(key);
    if (!v) throw CheckpointError(in.source() + ": header lacks " + key);
    h.kv.erase(key);
    try {
      return static_cast<std::size_t>(std::stoull(*v));
    } catch (const std::exception&) {
      throw CheckpointError(in.source() + ": bad value for " + key + ": '" + *v + "'");
    }
  };
  h.step = take("checkpoint.step");
  h.tensors = take("checkpoint.tensors");
  h.config = TrainConfig::from_key_values(h.kv);
  return h;
}

}  // namespace

template <class T>
std::vector<std::uint8_t> checkpoint_bytes(const TrainingState<T>& state) {
  if (state.config.precision != precision_of<T>()) {
    throw CheckpointError("checkpoint precision does not match the configured precision");
  }
  KeyValues kv = state.config.to_key_values();
  kv.set("checkpoint.step", std::to_string(state.step));
  kv.set("checkpoint.tensors", std::to_string(state.opt.m.size()));
  const std::string text = kv.serialize();

  ByteWriter out;
  out.bytes(kCheckpointMagic, 4);
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(text.size()));
  out.bytes(text.data(), text.size());
  state.params.visit([&](const std::string&, const Tensor<T>& t) { write_fwtn(out, t); });
  for (const auto& t : state.opt.m) write_fwtn(out, t);
  for (const auto& t : state.opt.v) write_fwtn(out, t);
  return out.take();
}

template <class T>
void save_checkpoint(const std::filesystem::path& path, const TrainingState<T>& state) {
  const auto bytes = checkpoint_bytes(state);
  auto tmp = path;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::filesystem::rename(tmp, path);
}

template <class T>
TrainingState<T> parse_checkpoint(std::span<const std::uint8_t> bytes, const std::string& source) {
  ByteReader in(bytes, source);
  ParsedHeader h;
  try {
    h = read_header(in);
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("truncated checkpoint: ") + e.what());
  }
  if (h.config.precision != precision_of<T>()) {
    throw CheckpointError(source + ": stored precision is " + std::string(h.config.precision == Precision::kF64 ? "f64" : "f32"));
  }
  TrainingState<T> s;
  s.config = h.config;
  s.step = h.step;
  s.params = init_params<T>(s.config.model_config(), 0);
  const auto names = s.params.names();
  if (h.tensors != names.size()) {
    throw CheckpointError(source + ": holds " + std::to_string(h.tensors) + " parameter tensors, architecture needs " +
                          std::to_string(names.size()));
  }
  s.opt = OptimState<T>::zeros_like(s.params);
  auto load_into = [&](Tensor<T>& dst, const std::string& name) {
    RawTensor raw;
    try {
      raw = read_fwtn(in);
    } catch (const FormatError& e) {
      throw CheckpointError(std::string("truncated checkpoint: ") + e.what());
    }
    Tensor<T> t = decode_exact<T>(raw, source + " tensor " + name);
    if (t.shape() != dst.shape()) {
      throw CheckpointError(source + ": tensor " + name + " has shape " + shape_string(t.shape()) +
                            ", architecture expects " + shape_string(dst.shape()));
    }
    dst = std::move(t);
  };
  auto tensors = s.params.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) load_into(*tensors[i], names[i]);
  for (std::size_t i = 0; i < tensors.size(); ++i) load_into(s.opt.m[i], names[i] + " (adam m)");
  for (std::size_t i = 0; i < tensors.size(); ++i) load_into(s.opt.v[i], names[i] + " (adam v)");
  if (!in.at_end()) throw CheckpointError(source + ": trailing bytes at offset " + std::to_string(in.offset()));
  s.opt.step = s.step;
  return s;
}

template <class T>
TrainingState<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_checkpoint<T>(bytes, path.string());
}

CheckpointInfo inspect_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader in(bytes, path.string());
  CheckpointInfo info;
  try {
    ParsedHeader h = read_header(in);
    info.version = h.version;
    info.header = h.kv;
    info.config = h.config;
    info.step = h.step;
    for (std::size_t i = 0; i < h.tensors; ++i) {
      RawTensor raw = read_fwtn(in);
      info.tensor_shapes.push_back(raw.shape);
      info.parameter_count += shape_size(raw.shape);
    }
  } catch (const FormatError& e) {
    throw CheckpointError(std::string("truncated checkpoint: ") + e.what());
  }
  const ModelConfig mc = info.config.model_config();
  if (mc.input_dim != 0) {
    info.tensor_names = init_params<double>(mc, 0).names();
  }
  return info;
}

void require_same_architecture(const TrainConfig& stored, const TrainConfig& requested) {
  const std::pair<const char*, std::pair<std::size_t, std::size_t>> dims[] = {
      {"input_dim", {stored.input_dim, requested.input_dim}}, {"n_way", {stored.n_way, requested.n_way}},
      {"blocks", {stored.blocks, requested.blocks}},          {"d_model", {stored.d_model, requested.d_model}},
      {"heads", {stored.heads, requested.heads}},             {"d_ff", {stored.d_ff, requested.d_ff}},
  };
  for (const auto& [name, v] : dims) {
    if (requested.input_dim == 0 && std::string(name) == "input_dim") continue;
    if (v.first != v.second) {
      throw CheckpointError("architecture mismatch: " + std::string(name) + " is " + std::to_string(v.first) +
                            " in the checkpoint but " + std::to_string(v.second) + " was requested");
    }
  }
  if (stored.merge_projection != requested.merge_projection) {
    throw CheckpointError("architecture mismatch: merge_projection differs from the checkpoint");
  }
  if (stored.precision != requested.precision) {
    throw CheckpointError("architecture mismatch: precision differs from the checkpoint");
  }
}

// ---------------------------------------------------------------------------
// Training loop

std::uint64_t episode_seed(std::uint64_t run_seed, std::size_t step, std::size_t b) {
  return derive_seed(run_seed, 1, step, b);
}

namespace {

template <class T>
using EpisodeLoss = std::function<Var<T>(const ModelVars<T>&, const Episode&, RolloutDiagnostics&)>;

template <class T>
std::vector<MetricsRow> run_training(TrainingState<T>& state, const TaskSource& source, const TrainOptions& options,
                                     const EpisodeLoss<T>& episode_loss) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (source.input_dim() != cfg.input_dim) {
    throw ConfigError("data has dimension " + std::to_string(source.input_dim()) + " but the model expects " +
                      std::to_string(cfg.input_dim));
  }
  const std::size_t stop = options.stop_at == 0 ? cfg.steps : std::min(options.stop_at, cfg.steps);
  const std::size_t batch = cfg.batch_size;
  const AdamHyper hyper{cfg.adam_b1, cfg.adam_b2, cfg.adam_eps};
  const auto names = state.params.names();
  std::string last_checkpoint;
  std::vector<MetricsRow> rows;

  std::vector<std::vector<Tensor<T>>> grads(batch);
  std::vector<RolloutDiagnostics> diags(batch);

  while (state.step < stop) {
    const std::size_t step = state.step + 1;
    try {
      parallel_for(
          batch,
          [&](std::size_t b) {
            const Episode ep = sample_episode(source, cfg.n_way, cfg.k_shot, cfg.k_extra, cfg.queries,
                                              episode_seed(cfg.seed, step, b));
            Tape<T> tape;
            const auto model = ModelVars<T>::bind(tape, state.params, true);
            const Var<T> loss = episode_loss(model, ep, diags[b]);
            const Gradients<T> g = tape.backward(loss);
            grads[b].clear();
            for (const auto& leaf : model.leaves()) grads[b].push_back(g[leaf]);
          },
          options.workers);
    } catch (const NumericError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what() + "; last good checkpoint: " +
                              (last_checkpoint.empty() ? std::string("none") : last_checkpoint),
                          step, last_checkpoint);
    }

    // Single-writer reduction in episode order.
    std::vector<Tensor<T>> total = std::move(grads[0]);
    for (std::size_t b = 1; b < batch; ++b) {
      for (std::size_t i = 0; i < total.size(); ++i) {
        auto dst = total[i].data();
        const auto& src = grads[b][i].data();
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
    }
    const T inv_batch = T(1) / static_cast<T>(batch);
    for (auto& t : total)
      for (auto& v : t.data()) v *= inv_batch;

    MetricsRow row;
    row.step = step;
    row.lr = lr_schedule(step, cfg.lr_peak, cfg.warmup);
    for (const auto& d : diags) {
      row.loss += d.loss;
      row.t1 += d.t1;
      row.t2 += d.t2;
      row.t3 += d.t3;
      row.acc_student += d.acc_student;
      row.acc_teacher += d.acc_teacher;
    }
    for (double* v : {&row.loss, &row.t1, &row.t2, &row.t3, &row.acc_student, &row.acc_teacher}) {
      *v /= static_cast<double>(batch);
    }

    try {
      clip_global_norm(total, cfg.clip_norm);
      const auto params = state.params.tensors();
      adam_step<T>(params, total, names, state.opt, row.lr, hyper);
    } catch (const NumericError& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what() + "; last good checkpoint: " +
                              (last_checkpoint.empty() ? std::string("none") : last_checkpoint),
                          step, last_checkpoint);
    }
    state.step = step;
    rows.push_back(row);
    if (options.on_step) options.on_step(row);

    const bool at_interval = cfg.eval_interval > 0 && step % cfg.eval_interval == 0;
    if (!options.checkpoint_path.empty() && (at_interval || state.step == stop)) {
      save_checkpoint(options.checkpoint_path, state);
      last_checkpoint = options.checkpoint_path.string();
    }
  }
  return rows;
}

}  // namespace

template <class T>
std::vector<MetricsRow> train(TrainingState<T>& state, const TaskSource& source, const TrainOptions& options) {
  const RolloutOptions ro{state.config.delayed_labels, state.config.temperature, {}};
  const LossWeights weights = state.config.loss;
  return run_training<T>(state, source, options,
                         [&](const ModelVars<T>& model, const Episode& ep, RolloutDiagnostics& diag) {
                           Rollout<T> r = episode_rollout_loss(model, ep, weights, ro);
                           diag = r.diagnostics;
                           return r.loss;
                         });
}

template <class T>
std::vector<MetricsRow> train_plain_reference(TrainingState<T>& state, const TaskSource& source,
                                              const TrainOptions& options) {
  if (state.config.k_extra != 0) throw ConfigError("train_plain_reference: requires k_extra = 0");
  const bool delayed = state.config.delayed_labels;
  return run_training<T>(state, source, options,
                         [&](const ModelVars<T>& model, const Episode& ep, RolloutDiagnostics& diag) {
                           auto& tape = model.embed_weight.tape();
                           const EncodedEpisode<T> enc = encode_episode(ep, model, delayed);
                           ModelState<T> st = initial_state(model);
                           for (const auto& step : enc.support) model_advance(model, st, step);
                           std::vector<Var<T>> ces;
                           std::size_t hits = 0;
                           for (std::size_t j = 0; j < ep.queries.size(); ++j) {
                             ModelState<T> branch = st;
                             const Var<T> logits = model_step(model, branch, enc.queries[j]);
                             ces.push_back(cross_entropy(one_hot(tape, ep.n_way, ep.queries[j].label), softmax(logits)));
                             hits += argmax(logits.value()) == ep.queries[j].label;
                           }
                           const Var<T> loss = mean_of<T>(ces);
                           diag = {};
                           diag.loss = diag.t1 = static_cast<double>(loss.value()[0]);
                           diag.acc_student = diag.acc_teacher =
                               static_cast<double>(hits) / static_cast<double>(ep.queries.size());
                           return loss;
                         });
}

#define SRWM_INSTANTIATE_TRAINER(T)                                                                              \
  template struct OptimState<T>;                                                                                 \
  template void adam_step(std::span<Tensor<T>* const>, std::span<const Tensor<T>>, std::span<const std::string>, \
                          OptimState<T>&, double, const AdamHyper&);                                             \
  template double clip_global_norm(std::vector<Tensor<T>>&, double);                                             \
  template TrainingState<T> init_training(const TrainConfig&, std::size_t);                                      \
  template std::vector<std::uint8_t> checkpoint_bytes(const TrainingState<T>&);                                  \
  template void save_checkpoint(const std::filesystem::path&, const TrainingState<T>&);                          \
  template TrainingState<T> load_checkpoint(const std::filesystem::path&);                                       \
  template TrainingState<T> parse_checkpoint(std::span<const std::uint8_t>, const std::string&);                 \
  template std::vector<MetricsRow> train(TrainingState<T>&, const TaskSource&, const TrainOptions&);             \
  template std::vector<MetricsRow> train_plain_reference(TrainingState<T>&, const TaskSource&, const TrainOptions&);

SRWM_INSTANTIATE_TRAINER(float)
SRWM_INSTANTIATE_TRAINER(double)

}  // namespace srwm
