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

#include "srwm/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "srwm/fwtn.hpp"
#include "srwm/objective.hpp"
#include "srwm/parallel.hpp"
#include "srwm/trainer.hpp"

namespace srwm {

std::uint64_t eval_episode_seed(std::uint64_t seed, std::size_t k_test, std::size_t i) {
  return derive_seed(seed, 2, k_test, i);
}

template <class T>
std::vector<std::size_t> evaluate_episodes(const ModelParams<T>& params, std::span<const Episode> episodes,
                                           bool delayed_labels, std::size_t workers) {
  std::vector<std::size_t> correct(episodes.size(), 0);
  parallel_for(
      episodes.size(),
      [&](std::size_t e) {
        const Episode& ep = episodes[e];
        const FedLabels fed = fed_labels(ep, delayed_labels);
        InferenceSession<T> session(params);
        for (std::size_t i = 0; i < ep.support.size(); ++i) {
          session.feed(ep.support[i].input.template cast<T>(), fed.support[i]);
        }
        const SrwmState<T> after_support = session.state();
        std::size_t hits = 0;
        for (std::size_t j = 0; j < ep.queries.size(); ++j) {
          session.set_state(after_support);
          const Tensor<T> logits = session.feed(ep.queries[j].input.template cast<T>(), fed.queries[j]);
          hits += argmax(logits) == ep.queries[j].label;
        }
        correct[e] = hits;
      },
      workers);
  return correct;
}

template <class T>
EvalResult evaluate(const ModelParams<T>& params, const TaskSource& source, const EvalOptions& options) {
  if (options.n_way != params.config.n_way) {
    throw ConfigError("evaluate: model has " + std::to_string(params.config.n_way) + " outputs, N = " +
                      std::to_string(options.n_way));
  }
  if (options.k_test == 0 || options.queries == 0 || options.episodes == 0) {
    throw ConfigError("evaluate: k_test, queries and episodes must be positive");
  }
  const std::size_t length = options.n_way * options.k_test + 1;
  if (length > options.max_unroll) {
    throw ConfigError("evaluate: K_test = " + std::to_string(options.k_test) + " needs " + std::to_string(length) +
                      " steps, more than max_unroll = " + std::to_string(options.max_unroll));
  }
  if (source.input_dim() != params.config.input_dim) {
    throw ConfigError("evaluate: data has dimension " + std::to_string(source.input_dim()) + ", model expects " +
                      std::to_string(params.config.input_dim));
  }
  constexpr std::size_t kChunk = 1024;
  EvalResult result;
  for (std::size_t first = 0; first < options.episodes; first += kChunk) {
    const std::size_t n = std::min(kChunk, options.episodes - first);
    std::vector<Episode> eps(n);
    parallel_for(
        n,
        [&](std::size_t i) {
          eps[i] = sample_episode(source, options.n_way, options.k_test, 0, options.queries,
                                  eval_episode_seed(options.seed, options.k_test, first + i));
        },
        options.workers);
    const auto correct = evaluate_episodes(params, std::span<const Episode>(eps), options.delayed_labels,
                                           options.workers);
    for (std::size_t c : correct) result.correct += c;
    result.total += n * options.queries;
  }
  result.episodes = options.episodes;
  return result;
}

EvalResult evaluate_checkpoint(const std::filesystem::path& checkpoint, const EvalOptions& options,
                               const TaskSource* source) {
  const CheckpointInfo info = inspect_checkpoint(checkpoint);
  TaskSources owned;
  if (!source) {
    owned = make_sources(info.config.data);
    source = owned.test.get();
  }
  EvalOptions opts = options;
  opts.n_way = info.config.n_way;
  opts.max_unroll = info.config.max_unroll;
  opts.delayed_labels = info.config.delayed_labels;
  if (info.config.precision == Precision::kF64) {
    return evaluate(load_checkpoint<double>(checkpoint).params, *source, opts);
  }
  return evaluate(load_checkpoint<float>(checkpoint).params, *source, opts);
}

// ---------------------------------------------------------------------------
// Reports

double EvalRow::mean() const {
  if (run_accuracy.empty()) return 0.0;
  double s = 0.0;
  for (double a : run_accuracy) s += a;
  return s / static_cast<double>(run_accuracy.size());
}

double EvalRow::std_dev() const {
  if (run_accuracy.size() < 2) return 0.0;
  const double m = mean();
  double s = 0.0;
  for (double a : run_accuracy) s += (a - m) * (a - m);
  return std::sqrt(s / static_cast<double>(run_accuracy.size() - 1));
}

double EvalRow::binomial_ci95() const {
  if (queries == 0) return 0.0;
  const double p = mean() / 100.0;
  return 100.0 * 1.96 * std::sqrt(p * (1.0 - p) / static_cast<double>(queries));
}

const EvalRow* EvalReport::find(const std::string& config, std::size_t k_test) const {
  for (const auto& r : rows)
    if (r.config == config && r.k_test == k_test) return &r;
  return nullptr;
}

std::vector<std::string> EvalReport::configs() const {
  std::vector<std::string> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.config) == out.end()) out.push_back(r.config);
  return out;
}

std::vector<std::size_t> EvalReport::k_tests() const {
  std::vector<std::size_t> out;
  for (const auto& r : rows)
    if (std::find(out.begin(), out.end(), r.k_test) == out.end()) out.push_back(r.k_test);
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string EvalReport::csv() const {
  std::string out = std::string(kReportHeader) + "\n";
  for (const auto& r : rows) {
    out += csv_field(r.config) + "," + std::to_string(r.k_test) + "," + fixed(r.mean(), 4) + "," +
           fixed(r.std_dev(), 4) + "," + std::to_string(r.run_accuracy.size()) + "," + std::to_string(r.episodes) +
           "," + fixed(r.binomial_ci95(), 4) + "\n";
  }
  return out;
}

std::string EvalReport::svg() const {
  constexpr double kW = 640, kH = 400, kLeft = 60, kRight = 160, kTop = 30, kBottom = 50;
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const auto ks = k_tests();
  const auto cfgs = configs();
  double lo = 100.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.mean() - r.std_dev());
    hi = std::max(hi, r.mean() + r.std_dev());
  }
  if (rows.empty()) lo = 0.0, hi = 100.0;
  lo = std::max(0.0, std::floor(lo / 5.0) * 5.0);
  hi = std::min(100.0, std::ceil(hi / 5.0) * 5.0);
  if (hi <= lo) hi = lo + 5.0;
  const double kmin = ks.empty() ? 0.0 : static_cast<double>(ks.front());
  const double kmax = ks.empty() ? 1.0 : static_cast<double>(ks.back());
  auto x_of = [&](double k) {
    const double span = kmax > kmin ? kmax - kmin : 1.0;
    return kLeft + (k - kmin) / span * (kW - kLeft - kRight);
  };
  auto y_of = [&](double acc) { return kTop + (hi - acc) / (hi - lo) * (kH - kTop - kBottom); };

  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kH - kBottom << "\" x2=\"" << kW - kRight << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\"" << kH - kBottom
    << "\" stroke=\"black\"/>\n";
  for (std::size_t k : ks) {
    const double x = x_of(static_cast<double>(k));
    s << "<text x=\"" << fixed(x, 1) << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">" << k
      << "</text>\n";
  }
  for (double a = lo; a <= hi + 1e-9; a += 5.0) {
    s << "<text x=\"" << kLeft - 6 << "\" y=\"" << fixed(y_of(a) + 4, 1) << "\" text-anchor=\"end\">" << fixed(a, 0)
      << "</text>\n";
  }
  s << "<text x=\"" << (kLeft + kW - kRight) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">K_test</text>\n";
  s << "<text x=\"16\" y=\"" << (kTop + kH - kBottom) / 2 << "\" transform=\"rotate(-90 16 "
    << (kTop + kH - kBottom) / 2 << ")\" text-anchor=\"middle\">accuracy (%)</text>\n";
  for (std::size_t c = 0; c < cfgs.size(); ++c) {
    const char* color = kColors[c % std::size(kColors)];
    std::string points;
    for (std::size_t k : ks) {
      const EvalRow* r = find(cfgs[c], k);
      if (!r) continue;
      const double x = x_of(static_cast<double>(k));
      points += fixed(x, 1) + "," + fixed(y_of(r->mean()), 1) + " ";
      if (r->std_dev() > 0.0) {
        s << "<line x1=\"" << fixed(x, 1) << "\" y1=\"" << fixed(y_of(r->mean() - r->std_dev()), 1) << "\" x2=\""
          << fixed(x, 1) << "\" y2=\"" << fixed(y_of(r->mean() + r->std_dev()), 1) << "\" stroke=\"" << color
          << "\"/>\n";
      }
      s << "<circle cx=\"" << fixed(x, 1) << "\" cy=\"" << fixed(y_of(r->mean()), 1) << "\" r=\"3\" fill=\"" << color
        << "\"/>\n";
    }
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << points << "\"/>\n";
    const double ly = kTop + 18.0 * static_cast<double>(c);
    s << "<line x1=\"" << kW - kRight + 12 << "\" y1=\"" << ly << "\" x2=\"" << kW - kRight + 32 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << kW - kRight + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(cfgs[c]) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

std::string EvalReport::markdown() const {
  const auto cfgs = configs();
  const auto ks = k_tests();
  bool paired = cfgs.size() == 2;
  if (paired) {
    for (std::size_t k : ks) {
      const EvalRow* a = find(cfgs[0], k);
      const EvalRow* b = find(cfgs[1], k);
      if (!a || !b || a->run_accuracy.size() != b->run_accuracy.size()) paired = false;
    }
  }
  std::string out = "| K_test |";
  for (const auto& c : cfgs) out += " " + c + " |";
  if (paired) out += " " + cfgs[1] + " - " + cfgs[0] + " (paired) |";
  out += "\n|---|";
  for (std::size_t i = 0; i < cfgs.size() + (paired ? 1 : 0); ++i) out += "---|";
  out += "\n";
  for (std::size_t k : ks) {
    out += "| " + std::to_string(k) + " |";
    for (const auto& c : cfgs) {
      const EvalRow* r = find(c, k);
      out += r ? " " + fixed(r->mean(), 2) + " ± " + fixed(r->std_dev(), 2) + " |" : " - |";
    }
    if (paired) {
      const PairedDifference d = paired_difference(*this, cfgs[0], cfgs[1], k);
      out += " " + fixed(d.mean, 2) + " ± " + fixed(d.std_dev, 2) + " |";
    }
    out += "\n";
  }
  std::size_t runs = 0, episodes = 0;
  for (const auto& r : rows) {
    runs = std::max(runs, r.run_accuracy.size());
    episodes = std::max(episodes, r.episodes);
  }
  out += "\nAccuracy in %, mean ± std over " + std::to_string(runs) + " run(s), " + std::to_string(episodes) +
         " episodes per run and K_test.\n";
  return out;
}

PairedDifference paired_difference(const EvalReport& report, const std::string& baseline, const std::string& other,
                                   std::size_t k_test) {
  const EvalRow* a = report.find(baseline, k_test);
  const EvalRow* b = report.find(other, k_test);
  if (!a || !b) throw ConfigError("paired_difference: missing row for K_test = " + std::to_string(k_test));
  if (a->run_accuracy.size() != b->run_accuracy.size()) {
    throw ConfigError("paired_difference: run counts differ (" + std::to_string(a->run_accuracy.size()) + " vs " +
                      std::to_string(b->run_accuracy.size()) + ")");
  }
  EvalRow diff;
  for (std::size_t i = 0; i < a->run_accuracy.size(); ++i) {
    diff.run_accuracy.push_back(b->run_accuracy[i] - a->run_accuracy[i]);
  }
  return {diff.mean(), diff.std_dev(), diff.run_accuracy.size()};
}

EvalReport sweep_report(std::span<const SweepGroup> groups, std::span<const std::size_t> k_tests,
                        const EvalOptions& base, const TaskSource* source) {
  if (groups.empty()) throw ConfigError("sweep: no checkpoints given");
  if (k_tests.empty()) throw ConfigError("sweep: no K_test values given");
  EvalReport report;
  for (const auto& g : groups) {
    if (g.checkpoints.empty()) throw ConfigError("sweep: config '" + g.label + "' has no checkpoints");
    for (std::size_t k : k_tests) {
      EvalRow row;
      row.config = g.label;
      row.k_test = k;
      row.episodes = base.episodes;
      row.queries = base.episodes * base.queries;
      for (const auto& path : g.checkpoints) {
        EvalOptions opts = base;
        opts.k_test = k;
        row.run_accuracy.push_back(100.0 * evaluate_checkpoint(path, opts, source).accuracy());
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Tools

GradCheckReport gradcheck_config(const TrainConfig& config, std::uint64_t seed, double eps) {
  TaskSources sources = make_sources(config.data);
  TrainConfig cfg = config;
  cfg.precision = Precision::kF64;
  TrainingState<double> state = init_training<double>(cfg, sources.train->input_dim());
  const Episode ep = sample_episode(*sources.train, cfg.n_way, cfg.k_shot, cfg.k_extra, cfg.queries,
                                    derive_seed(seed, 3));
  const LossWeights weights = cfg.loss;
  ModelParams<double>& params = state.params;
  RolloutOptions ro{cfg.delayed_labels, cfg.temperature, {}};
  {
    Tape<double> tape;
    const auto model = ModelVars<double>::bind(tape, params, false);
    ro.frozen_teacher = episode_rollout_loss(model, ep, weights, ro).diagnostics.distill_teacher;
  }
  const auto tensors = params.tensors();
  const ScalarGraph<double> f = [&](Tape<double>&, std::span<const Var<double>> leaves) {
    const auto model = ModelVars<double>::from_leaves(params, leaves);
    return episode_rollout_loss(model, ep, weights, ro).loss;
  };
  return finite_diff_check<double>(f, tensors, eps);
}

std::size_t make_synthetic_dataset(const DataConfig& data, const std::filesystem::path& out_dir,
                                   std::size_t examples_per_class) {
  if (data.dataset != "synthetic") throw ConfigError("make-synthetic: dataset must be synthetic");
  if (examples_per_class == 0 || examples_per_class > data.synth_examples) {
    throw ConfigError("make-synthetic: examples per class must lie in [1, " + std::to_string(data.synth_examples) +
                      "]");
  }
  const TaskSources sources = make_sources(data);
  std::filesystem::create_directories(out_dir);
  std::size_t files = 0;
  auto dump = [&](const TaskSource& src, const std::string& manifest_name) {
    std::ofstream manifest(out_dir / manifest_name);
    if (!manifest) throw std::runtime_error("cannot write " + (out_dir / manifest_name).string());
    for (std::size_t c = 0; c < src.num_classes(); ++c) {
      const std::string cls = src.class_name(c);
      std::filesystem::create_directories(out_dir / cls);
      for (std::size_t i = 0; i < examples_per_class; ++i) {
        const std::string rel = cls + "/" + std::to_string(i) + ".fwtn";
        save_tensor(out_dir / rel, src.example(c, i).cast<float>());
        manifest << cls << '\t' << rel << '\n';
        ++files;
      }
    }
  };
  dump(*sources.train, "train.tsv");
  dump(*sources.test, "test.tsv");
  return files;
}

#define SRWM_INSTANTIATE_HARNESS(T)                                                                             \
  template std::vector<std::size_t> evaluate_episodes(const ModelParams<T>&, std::span<const Episode>, bool,   \
                                                      std::size_t);                                            \
  template EvalResult evaluate(const ModelParams<T>&, const TaskSource&, const EvalOptions&);

SRWM_INSTANTIATE_HARNESS(float)
SRWM_INSTANTIATE_HARNESS(double)

}  // namespace srwm
