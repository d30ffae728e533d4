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

#include "srwm/srwm.h"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "srwm/config.hpp"
#include "srwm/fwtn.hpp"
#include "srwm/harness.hpp"
#include "srwm/trainer.hpp"

struct srwm_config {
  srwm::KeyValues kv;
};

struct srwm_checkpoint {
  std::string path;
  srwm::CheckpointInfo info;
};

namespace {

thread_local std::string g_last_error;

srwm_status fail(srwm_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

template <class F>
srwm_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const srwm::TrainingError& e) {
    return fail(SRWM_ERR_NUMERIC, e.what());
  } catch (const srwm::NumericError& e) {
    return fail(SRWM_ERR_NUMERIC, e.what());
  } catch (const srwm::CheckpointError& e) {
    return fail(SRWM_ERR_FORMAT, e.what());
  } catch (const srwm::FormatError& e) {
    return fail(SRWM_ERR_FORMAT, e.what());
  } catch (const srwm::IoError& e) {
    return fail(SRWM_ERR_IO, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(SRWM_ERR_IO, e.what());
  } catch (const srwm::ConfigError& e) {
    return fail(SRWM_ERR_CONFIG, e.what());
  } catch (const srwm::EpisodeError& e) {
    return fail(SRWM_ERR_CONFIG, e.what());
  } catch (const srwm::ShapeError& e) {
    return fail(SRWM_ERR_CONFIG, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(SRWM_ERR_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(SRWM_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SRWM_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw srwm::IoError("cannot write " + path.string());
  out << text;
  if (!out) throw srwm::IoError("write failed for " + path.string());
}

srwm::EvalOptions eval_options(const srwm_eval_options* o) {
  srwm::EvalOptions opts;
  if (o) {
    if (o->episodes) opts.episodes = o->episodes;
    if (o->queries) opts.queries = o->queries;
    opts.seed = o->seed;
  }
  return opts;
}

template <class T>
srwm::TrainingState<T> start_state(const srwm::TrainConfig& cfg, const srwm::TaskSource& source,
                                   const char* resume_path) {
  if (!resume_path) return srwm::init_training<T>(cfg, source.input_dim());
  srwm::TrainingState<T> state = srwm::load_checkpoint<T>(resume_path);
  srwm::TrainConfig requested = cfg;
  requested.input_dim = source.input_dim();
  srwm::require_same_architecture(state.config, requested);
  requested.validate();
  state.config = requested;
  return state;
}

template <class T>
srwm_train_summary run_train(const srwm::TrainConfig& cfg, const srwm_train_options& options) {
  const srwm::TaskSources sources = srwm::make_sources(cfg.data);
  srwm::TrainingState<T> state = start_state<T>(cfg, *sources.train, options.resume_path);

  std::ofstream metrics;
  if (options.metrics_path) {
    const bool append = options.resume_path && std::filesystem::exists(options.metrics_path);
    metrics.open(options.metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!metrics) throw srwm::IoError(std::string("cannot write ") + options.metrics_path);
    if (!append) metrics << srwm::kMetricsHeader << '\n';
  }
  srwm::TrainOptions topts;
  topts.stop_at = options.stop_at;
  topts.checkpoint_path = options.checkpoint_path;
  srwm_train_summary summary{};
  topts.on_step = [&](const srwm::MetricsRow& row) {
    if (metrics.is_open()) metrics << srwm::format_metrics_row(row) << '\n';
    if (options.log_every && row.step % options.log_every == 0) {
      std::fprintf(stderr, "step %zu  lr %.3g  loss %.4f  T1 %.4f  T2 %.4f  T3 %.4f  acc %.3f/%.3f\n", row.step,
                   row.lr, row.loss, row.t1, row.t2, row.t3, row.acc_student, row.acc_teacher);
    }
    summary.final_loss = row.loss;
    summary.final_acc_student = row.acc_student;
    summary.final_acc_teacher = row.acc_teacher;
  };
  try {
    srwm::train(state, *sources.train, topts);
  } catch (...) {
    if (metrics.is_open()) metrics.flush();
    throw;
  }
  summary.steps = state.step;
  return summary;
}

std::string describe(const srwm_checkpoint& ckpt) {
  std::ostringstream s;
  const auto& info = ckpt.info;
  s << "checkpoint " << ckpt.path << "\n";
  s << "format version " << info.version << "\n";
  s << "step " << info.step << "\n";
  s << "parameters " << info.parameter_count << "\n";
  s << "config:\n";
  for (const auto& [k, v] : info.header.entries()) s << "  " << k << " = " << v << "\n";
  s << "tensors:\n";
  for (std::size_t i = 0; i < info.tensor_shapes.size(); ++i) {
    const std::string name = i < info.tensor_names.size() ? info.tensor_names[i] : "#" + std::to_string(i);
    s << "  " << name << " " << srwm::shape_string(info.tensor_shapes[i]) << "\n";
  }
  return s.str();
}

}  // namespace

extern "C" {

const char* srwm_last_error(void) { return g_last_error.c_str(); }

const char* srwm_status_name(srwm_status status) {
  switch (status) {
    case SRWM_OK: return "ok";
    case SRWM_ERR_ARGUMENT: return "invalid argument";
    case SRWM_ERR_CONFIG: return "configuration error";
    case SRWM_ERR_IO: return "i/o error";
    case SRWM_ERR_FORMAT: return "format error";
    case SRWM_ERR_NUMERIC: return "numeric error";
    case SRWM_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

void srwm_string_free(char* s) { std::free(s); }

srwm_status srwm_config_create(const char* preset, srwm_config** out) {
  return guarded([&] {
    if (!out) return fail(SRWM_ERR_ARGUMENT, "srwm_config_create: out is null");
    auto cfg = std::make_unique<srwm_config>();
    if (preset) cfg->kv = srwm::preset(preset);
    *out = cfg.release();
    return SRWM_OK;
  });
}

void srwm_config_free(srwm_config* config) { delete config; }

srwm_status srwm_config_load(srwm_config* config, const char* path) {
  return guarded([&] {
    if (!config || !path) return fail(SRWM_ERR_ARGUMENT, "srwm_config_load: null argument");
    if (!std::filesystem::exists(path)) return fail(SRWM_ERR_IO, std::string("config file not found: ") + path);
    const srwm::KeyValues file = srwm::KeyValues::load(path);
    srwm::TrainConfig::from_key_values(file);  // rejects unknown keys and bad values
    config->kv.merge(file);
    return SRWM_OK;
  });
}

srwm_status srwm_config_set(srwm_config* config, const char* key, const char* value) {
  return guarded([&] {
    if (!config || !key || !value) return fail(SRWM_ERR_ARGUMENT, "srwm_config_set: null argument");
    srwm::KeyValues one;
    one.set(key, value);
    srwm::TrainConfig::from_key_values(one);
    config->kv.set(key, value);
    return SRWM_OK;
  });
}

srwm_status srwm_config_serialize(const srwm_config* config, char** out) {
  return guarded([&] {
    if (!config || !out) return fail(SRWM_ERR_ARGUMENT, "srwm_config_serialize: null argument");
    *out = dup_string(srwm::TrainConfig::from_key_values(config->kv).to_key_values().serialize());
    return SRWM_OK;
  });
}

srwm_status srwm_config_validate(const srwm_config* config) {
  return guarded([&] {
    if (!config) return fail(SRWM_ERR_ARGUMENT, "srwm_config_validate: null argument");
    srwm::TrainConfig::from_key_values(config->kv).validate();
    return SRWM_OK;
  });
}

srwm_status srwm_train(const srwm_config* config, const srwm_train_options* options, srwm_train_summary* summary) {
  return guarded([&] {
    if (!config || !options || !options->checkpoint_path) {
      return fail(SRWM_ERR_ARGUMENT, "srwm_train: config, options and checkpoint_path are required");
    }
    const srwm::TrainConfig cfg = srwm::TrainConfig::from_key_values(config->kv);
    cfg.validate();
    const srwm_train_summary s = cfg.precision == srwm::Precision::kF64 ? run_train<double>(cfg, *options)
                                                                         : run_train<float>(cfg, *options);
    if (summary) *summary = s;
    return SRWM_OK;
  });
}

srwm_status srwm_checkpoint_open(const char* path, srwm_checkpoint** out) {
  return guarded([&] {
    if (!path || !out) return fail(SRWM_ERR_ARGUMENT, "srwm_checkpoint_open: null argument");
    auto ckpt = std::make_unique<srwm_checkpoint>();
    ckpt->path = path;
    ckpt->info = srwm::inspect_checkpoint(path);
    *out = ckpt.release();
    return SRWM_OK;
  });
}

void srwm_checkpoint_free(srwm_checkpoint* checkpoint) { delete checkpoint; }

srwm_status srwm_checkpoint_describe(const srwm_checkpoint* checkpoint, char** out) {
  return guarded([&] {
    if (!checkpoint || !out) return fail(SRWM_ERR_ARGUMENT, "srwm_checkpoint_describe: null argument");
    *out = dup_string(describe(*checkpoint));
    return SRWM_OK;
  });
}

srwm_status srwm_evaluate(const srwm_checkpoint* checkpoint, size_t k_test, const srwm_eval_options* options,
                          double* accuracy) {
  return guarded([&] {
    if (!checkpoint || !accuracy) return fail(SRWM_ERR_ARGUMENT, "srwm_evaluate: null argument");
    srwm::EvalOptions opts = eval_options(options);
    opts.k_test = k_test;
    *accuracy = srwm::evaluate_checkpoint(checkpoint->path, opts).accuracy();
    return SRWM_OK;
  });
}

srwm_status srwm_sweep(const char* const* labels, const char* const* checkpoints, size_t count,
                       const size_t* k_tests, size_t k_count, const srwm_eval_options* options,
                       const char* csv_path, const char* svg_path, const char* markdown_path, char** markdown_out) {
  return guarded([&] {
    if (!labels || !checkpoints || !k_tests || count == 0 || k_count == 0) {
      return fail(SRWM_ERR_ARGUMENT, "srwm_sweep: need at least one checkpoint and one K_test");
    }
    std::vector<srwm::SweepGroup> groups;
    for (size_t i = 0; i < count; ++i) {
      if (!labels[i] || !checkpoints[i]) return fail(SRWM_ERR_ARGUMENT, "srwm_sweep: null label or path");
      auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.label == labels[i]; });
      if (it == groups.end()) {
        groups.push_back({labels[i], {}});
        it = groups.end() - 1;
      }
      it->checkpoints.emplace_back(checkpoints[i]);
    }
    const srwm::EvalReport report = srwm::sweep_report(groups, std::span<const size_t>(k_tests, k_count),
                                                       eval_options(options));
    if (csv_path) write_text(csv_path, report.csv());
    if (svg_path) write_text(svg_path, report.svg());
    if (markdown_path) write_text(markdown_path, report.markdown());
    if (markdown_out) *markdown_out = dup_string(report.markdown());
    return SRWM_OK;
  });
}

srwm_status srwm_gradcheck(const srwm_config* config, uint64_t seed, double eps, srwm_gradcheck_result* result) {
  return guarded([&] {
    if (!config || !result) return fail(SRWM_ERR_ARGUMENT, "srwm_gradcheck: null argument");
    if (!(eps > 0.0)) return fail(SRWM_ERR_ARGUMENT, "srwm_gradcheck: eps must be positive");
    const srwm::TrainConfig cfg = srwm::TrainConfig::from_key_values(config->kv);
    const srwm::GradCheckReport r = srwm::gradcheck_config(cfg, seed, eps);
    result->max_rel_error = r.max_rel_error;
    result->checked = r.checked;
    return SRWM_OK;
  });
}

srwm_status srwm_make_synthetic(const srwm_config* config, const char* out_dir, size_t examples_per_class,
                                size_t* files_written) {
  return guarded([&] {
    if (!config || !out_dir) return fail(SRWM_ERR_ARGUMENT, "srwm_make_synthetic: null argument");
    const srwm::TrainConfig cfg = srwm::TrainConfig::from_key_values(config->kv);
    const size_t n = srwm::make_synthetic_dataset(cfg.data, out_dir, examples_per_class);
    if (files_written) *files_written = n;
    return SRWM_OK;
  });
}

srwm_status srwm_bayes_ceiling(const srwm_config* config, size_t episodes, uint64_t seed, double* out) {
  return guarded([&] {
    if (!config || !out || episodes == 0) return fail(SRWM_ERR_ARGUMENT, "srwm_bayes_ceiling: bad argument");
    const srwm::TrainConfig cfg = srwm::TrainConfig::from_key_values(config->kv);
    if (cfg.data.dataset != "synthetic") return fail(SRWM_ERR_CONFIG, "bayes ceiling needs synthetic data");
    srwm::SyntheticSpec spec{cfg.data.synth_dim, cfg.data.synth_spread, cfg.data.data_seed, cfg.data.synth_examples};
    const auto splits = srwm::synthetic_splits(spec, cfg.data.synth_train_classes, cfg.data.synth_val_classes,
                                               cfg.data.synth_test_classes);
    *out = srwm::bayes_ceiling(*splits.test, cfg.n_way, episodes, seed);
    return SRWM_OK;
  });
}

}  // extern "C"
