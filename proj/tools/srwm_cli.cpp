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

// srwm command-line tool. Talks to the library only through the C API.
//
// Exit codes: 0 success, 1 usage or runtime error, 2 gradient check above
// threshold.

#include <cstdio>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "srwm/srwm.h"

namespace {

constexpr int kExitError = 1;
constexpr int kExitGradcheck = 2;

struct ConfigDeleter {
  void operator()(srwm_config* c) const { srwm_config_free(c); }
};
using ConfigPtr = std::unique_ptr<srwm_config, ConfigDeleter>;

struct CheckpointDeleter {
  void operator()(srwm_checkpoint* c) const { srwm_checkpoint_free(c); }
};
using CheckpointPtr = std::unique_ptr<srwm_checkpoint, CheckpointDeleter>;

struct Failure {
  int code;
};

void check(srwm_status status, const char* what) {
  if (status == SRWM_OK) return;
  std::fprintf(stderr, "srwm %s: %s: %s\n", what, srwm_status_name(status), srwm_last_error());
  throw Failure{kExitError};
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  srwm_string_free(s);
  return out;
}

struct ConfigArgs {
  std::string preset;
  std::string config_file;
  std::vector<std::string> sets;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--preset", preset, "Start from a preset: full, desk or micro");
    cmd->add_option("--config", config_file, "Config file of 'key = value' lines")->check(CLI::ExistingFile);
    cmd->add_option("--set", sets, "Override one key (key=value); repeatable");
  }

  ConfigPtr build() const {
    srwm_config* raw = nullptr;
    check(srwm_config_create(preset.empty() ? nullptr : preset.c_str(), &raw), "config");
    ConfigPtr cfg(raw);
    if (!config_file.empty()) check(srwm_config_load(cfg.get(), config_file.c_str()), "config");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "srwm: --set expects key=value, got '%s'\n", s.c_str());
        throw Failure{kExitError};
      }
      auto trim = [](std::string v) {
        v.erase(0, v.find_first_not_of(' '));
        v.erase(v.find_last_not_of(' ') + 1);
        return v;
      };
      check(srwm_config_set(cfg.get(), trim(s.substr(0, eq)).c_str(), trim(s.substr(eq + 1)).c_str()), "config");
    }
    return cfg;
  }
};

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const std::string item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.empty() || v == 0) {
      std::fprintf(stderr, "srwm: --ktest expects positive integers separated by commas, got '%s'\n", text.c_str());
      throw Failure{kExitError};
    }
    out.push_back(static_cast<std::size_t>(v));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

void print_report(const std::string& markdown) { std::printf("%s", markdown.c_str()); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-referential weight matrix few-shot learner"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a model on episodic few-shot tasks");
  ConfigArgs train_cfg;
  train_cfg.add_to(train);
  std::uint64_t train_seed = 0;
  std::string checkpoint = "srwm.ckpt", metrics, resume;
  std::size_t stop_at = 0, log_every = 100;
  train->add_option("--seed", train_seed, "Run seed")->required();
  train->add_option("--checkpoint", checkpoint, "Checkpoint output path")->capture_default_str();
  train->add_option("--metrics", metrics, "Metrics CSV output path");
  train->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  train->add_option("--stop-at", stop_at, "Stop after this many total steps (0 = configured steps)");
  train->add_option("--log-every", log_every, "Progress line interval in steps (0 = silent)")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint over K_test values");
  std::string eval_ckpt, ktest = "1,5,10,15", eval_out = "report.csv", eval_svg;
  std::size_t episodes = 0, queries = 1;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate")->required()->check(CLI::ExistingFile);
  eval->add_option("--ktest", ktest, "Comma-separated K_test values")->capture_default_str();
  eval->add_option("--episodes", episodes, "Episodes per K_test (default 10000)");
  eval->add_option("--queries", queries, "Queries per episode")->capture_default_str();
  eval->add_option("--seed", eval_seed, "Evaluation seed")->capture_default_str();
  eval->add_option("--out", eval_out, "Report CSV path")->capture_default_str();
  eval->add_option("--svg", eval_svg, "Optional plot path");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Compare checkpoints over K_test values");
  std::vector<std::string> runs;
  std::string sweep_ktest = "1,5,10,15", sweep_csv = "sweep.csv", sweep_svg = "sweep.svg", sweep_md;
  std::size_t sweep_episodes = 0, sweep_queries = 1;
  std::uint64_t sweep_seed = 0;
  sweep->add_option("--run", runs, "label=checkpoint; repeat a label for several run seeds")->required();
  sweep->add_option("--ktest", sweep_ktest, "Comma-separated K_test values")->capture_default_str();
  sweep->add_option("--episodes", sweep_episodes, "Episodes per K_test and run (default 10000)");
  sweep->add_option("--queries", sweep_queries, "Queries per episode")->capture_default_str();
  sweep->add_option("--seed", sweep_seed, "Evaluation seed")->capture_default_str();
  sweep->add_option("--csv", sweep_csv, "Report CSV path")->capture_default_str();
  sweep->add_option("--svg", sweep_svg, "Plot path")->capture_default_str();
  sweep->add_option("--markdown", sweep_md, "Markdown table path");

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full episode loss");
  ConfigArgs grad_cfg;
  grad_cfg.add_to(gradcheck);
  std::uint64_t grad_seed = 0;
  double eps = 1e-5, threshold = 1e-4;
  gradcheck->add_option("--seed", grad_seed, "Episode and initialization seed")->capture_default_str();
  gradcheck->add_option("--eps", eps, "Central-difference step")->capture_default_str();
  gradcheck->add_option("--threshold", threshold, "Maximum accepted relative error")->capture_default_str();

  // make-synthetic
  auto* make = app.add_subcommand("make-synthetic", "Write synthetic clusters as an image-directory dataset");
  ConfigArgs make_cfg;
  make_cfg.add_to(make);
  std::string out_dir;
  std::size_t per_class = 20;
  make->add_option("--out", out_dir, "Output directory")->required();
  make->add_option("--examples", per_class, "Examples per class")->capture_default_str();

  // inspect-checkpoint
  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header and tensors");
  std::string inspect_path;
  inspect->add_option("path", inspect_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitError;
  }

  try {
    if (*train) {
      ConfigPtr cfg = train_cfg.build();
      check(srwm_config_set(cfg.get(), "seed", std::to_string(train_seed).c_str()), "train");
      check(srwm_config_validate(cfg.get()), "train");
      srwm_train_options opts{};
      opts.checkpoint_path = checkpoint.c_str();
      opts.metrics_path = metrics.empty() ? nullptr : metrics.c_str();
      opts.resume_path = resume.empty() ? nullptr : resume.c_str();
      opts.stop_at = stop_at;
      opts.log_every = log_every;
      srwm_train_summary summary{};
      check(srwm_train(cfg.get(), &opts, &summary), "train");
      std::printf("trained %zu steps; final loss %.4f, student acc %.3f, teacher acc %.3f; checkpoint %s\n",
                  summary.steps, summary.final_loss, summary.final_acc_student, summary.final_acc_teacher,
                  checkpoint.c_str());
    } else if (*eval || *sweep) {
      const bool is_eval = eval->parsed();
      std::vector<std::string> labels, paths;
      if (is_eval) {
        labels.push_back("checkpoint");
        paths.push_back(eval_ckpt);
      } else {
        for (const auto& r : runs) {
          const auto eq = r.find('=');
          if (eq == std::string::npos || eq == 0 || eq + 1 == r.size()) {
            std::fprintf(stderr, "srwm sweep: --run expects label=checkpoint, got '%s'\n", r.c_str());
            return kExitError;
          }
          labels.push_back(r.substr(0, eq));
          paths.push_back(r.substr(eq + 1));
        }
      }
      const auto ks = parse_k_list(is_eval ? ktest : sweep_ktest);
      std::vector<const char*> label_ptrs, path_ptrs;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        label_ptrs.push_back(labels[i].c_str());
        path_ptrs.push_back(paths[i].c_str());
      }
      srwm_eval_options opts{};
      opts.episodes = is_eval ? episodes : sweep_episodes;
      opts.queries = is_eval ? queries : sweep_queries;
      opts.seed = is_eval ? eval_seed : sweep_seed;
      const std::string& csv = is_eval ? eval_out : sweep_csv;
      const std::string& svg = is_eval ? eval_svg : sweep_svg;
      char* md = nullptr;
      check(srwm_sweep(label_ptrs.data(), path_ptrs.data(), labels.size(), ks.data(), ks.size(), &opts, csv.c_str(),
                       svg.empty() ? nullptr : svg.c_str(), sweep_md.empty() || is_eval ? nullptr : sweep_md.c_str(),
                       &md),
            is_eval ? "eval" : "sweep");
      print_report(take_string(md));
      std::printf("report written to %s\n", csv.c_str());
    } else if (*gradcheck) {
      if (grad_cfg.preset.empty() && grad_cfg.config_file.empty()) grad_cfg.preset = "micro";
      ConfigPtr cfg = grad_cfg.build();
      srwm_gradcheck_result r{};
      check(srwm_gradcheck(cfg.get(), grad_seed, eps, &r), "gradcheck");
      std::printf("max relative error %.3e over %zu parameters (threshold %.1e)\n", r.max_rel_error, r.checked,
                  threshold);
      if (!(r.max_rel_error < threshold)) {
        std::printf("FAIL\n");
        return kExitGradcheck;
      }
      std::printf("OK\n");
    } else if (*make) {
      ConfigPtr cfg = make_cfg.build();
      std::size_t files = 0;
      check(srwm_make_synthetic(cfg.get(), out_dir.c_str(), per_class, &files), "make-synthetic");
      std::printf("wrote %zu files and train.tsv/test.tsv to %s\n", files, out_dir.c_str());
    } else if (*inspect) {
      srwm_checkpoint* raw = nullptr;
      check(srwm_checkpoint_open(inspect_path.c_str(), &raw), "inspect-checkpoint");
      CheckpointPtr ckpt(raw);
      char* text = nullptr;
      check(srwm_checkpoint_describe(ckpt.get(), &text), "inspect-checkpoint");
      std::printf("%s", take_string(text).c_str());
    }
  } catch (const Failure& f) {
    return f.code;
  }
  return 0;
}
