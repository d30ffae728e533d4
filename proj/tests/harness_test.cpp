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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "srwm/fwtn.hpp"
#include "srwm/harness.hpp"
#include "srwm/parallel.hpp"
#include "srwm/trainer.hpp"
#include "test_util.hpp"

namespace srwm {
namespace {

using testing::TempDir;

TrainConfig tiny_five_way() {
  TrainConfig c = testing::micro_config();
  c.n_way = 5;
  c.k_shot = 1;
  c.k_extra = 1;
  c.data.synth_train_classes = 20;
  c.data.synth_test_classes = 10;
  return c;
}

TEST(Evaluate, UntrainedModelIsAtChance) {
  const TrainConfig c = tiny_five_way();
  const auto state = init_training<double>(c, c.data.synth_dim);
  const auto sources = make_sources(c.data);
  EvalOptions o;
  o.n_way = 5;
  o.k_test = 1;
  o.episodes = 10000;
  o.seed = 3;
  const EvalResult r = evaluate(state.params, *sources.test, o);
  EXPECT_EQ(r.total, 10000u);
  const double sd = std::sqrt(0.2 * 0.8 / 10000.0);
  EXPECT_NEAR(r.accuracy(), 0.2, 4 * sd);
}

TEST(Evaluate, ReproducibleAndSeedSensitive) {
  const TrainConfig c = tiny_five_way();
  const auto state = init_training<double>(c, c.data.synth_dim);
  const auto sources = make_sources(c.data);
  EvalOptions o;
  o.n_way = 5;
  o.k_test = 2;
  o.queries = 3;
  o.episodes = 300;
  o.seed = 1;
  const EvalResult a = evaluate(state.params, *sources.test, o);
  o.workers = 1;
  const EvalResult b = evaluate(state.params, *sources.test, o);
  EXPECT_EQ(a.correct, b.correct);
  EXPECT_EQ(a.total, 900u);
  std::vector<std::size_t> per_seed;
  for (std::uint64_t s = 2; s < 6; ++s) {
    o.seed = s;
    per_seed.push_back(evaluate(state.params, *sources.test, o).correct);
  }
  EXPECT_GT(std::set<std::size_t>(per_seed.begin(), per_seed.end()).size(), 1u);
}

TEST(Evaluate, LongEpisodesAreRejected) {
  const TrainConfig c = tiny_five_way();
  const auto state = init_training<double>(c, c.data.synth_dim);
  const auto sources = make_sources(c.data);
  EvalOptions o;
  o.n_way = 5;
  o.k_test = 10;
  o.max_unroll = 50;
  EXPECT_THROW(evaluate(state.params, *sources.test, o), ConfigError);
  o.max_unroll = 51;
  o.episodes = 2;
  EXPECT_NO_THROW(evaluate(state.params, *sources.test, o));
  o.n_way = 4;
  EXPECT_THROW(evaluate(state.params, *sources.test, o), ConfigError);
}

class TrainedMicro : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    TrainConfig c = testing::micro_config(3);
    c.steps = 300;
    c.batch_size = 8;
    c.lr_peak = 3e-3;
    c.warmup = 20;
    c.data.synth_spread = 0.2;
    state_ = new TrainingState<double>(init_training<double>(c, c.data.synth_dim));
    train(*state_, *make_sources(c.data).train);
    dir_ = new TempDir("trained");
    save_checkpoint(dir_->path() / "m.ckpt", *state_);
  }
  static void TearDownTestSuite() {
    delete state_;
    delete dir_;
  }
  static std::filesystem::path checkpoint() { return dir_->path() / "m.ckpt"; }
  static TrainingState<double>* state_;
  static TempDir* dir_;
};
TrainingState<double>* TrainedMicro::state_ = nullptr;
TempDir* TrainedMicro::dir_ = nullptr;

TEST_F(TrainedMicro, AccuracyInvariantToLabelMaps) {
  const auto sources = make_sources(state_->config.data);
  const std::size_t n = 3, episodes = 4000;
  std::vector<Episode> base, relabeled;
  std::mt19937_64 rng(17);
  for (std::size_t i = 0; i < episodes; ++i) {
    Episode ep = sample_episode(*sources.test, n, 2, 0, 1, derive_seed(5, i));
    Episode moved = ep;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t l = 0; l < n; ++l) moved.label_to_class[perm[l]] = ep.label_to_class[l];
    for (auto& s : moved.support) s.label = perm[s.label];
    for (auto& q : moved.queries) q.label = perm[q.label];
    base.push_back(std::move(ep));
    relabeled.push_back(std::move(moved));
  }
  auto total = [&](const std::vector<Episode>& eps) {
    const auto hits = evaluate_episodes<double>(state_->params, eps, false);
    return static_cast<double>(std::accumulate(hits.begin(), hits.end(), std::size_t{0})) / eps.size();
  };
  const double a = total(base), b = total(relabeled);
  EXPECT_GT(a, 0.5);
  const double ci = 1.96 * std::sqrt(a * (1 - a) / episodes);
  EXPECT_NEAR(a, b, 2 * ci);
}

TEST_F(TrainedMicro, EvaluationLeavesCheckpointUntouched) {
  const auto before = read_file(checkpoint());
  const auto mtime = std::filesystem::last_write_time(checkpoint());
  EvalOptions o;
  o.k_test = 2;
  o.episodes = 200;
  const EvalResult r = evaluate_checkpoint(checkpoint(), o);
  EXPECT_EQ(r.episodes, 200u);
  EXPECT_EQ(read_file(checkpoint()), before);
  EXPECT_EQ(std::filesystem::last_write_time(checkpoint()), mtime);
}

TEST_F(TrainedMicro, AccuracyGrowsWithShots) {
  EvalOptions o;
  o.episodes = 2000;
  o.seed = 9;
  o.k_test = 1;
  const double one = evaluate_checkpoint(checkpoint(), o).accuracy();
  o.k_test = 5;
  const double five = evaluate_checkpoint(checkpoint(), o).accuracy();
  EXPECT_GT(five, one - 0.02);
}

TEST_F(TrainedMicro, SweepWritesFourRowReport) {
  const std::vector<SweepGroup> groups{{"micro", {checkpoint()}}};
  const std::vector<std::size_t> ks{1, 5, 10, 15};
  EvalOptions o;
  o.episodes = 50;
  const EvalReport report = sweep_report(groups, ks, o);
  ASSERT_EQ(report.rows.size(), 4u);
  std::istringstream csv(report.csv());
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "config,k_test,mean_acc,std_acc,num_runs,episodes,binom_ci95");
  std::size_t lines = 0;
  while (std::getline(csv, line)) {
    ++lines;
    EXPECT_EQ(line.rfind("micro,", 0), 0u) << line;
  }
  EXPECT_EQ(lines, 4u);
  for (const auto& r : report.rows) {
    EXPECT_GE(r.mean(), 0.0);
    EXPECT_LE(r.mean(), 100.0);
    EXPECT_EQ(r.episodes, 50u);
  }
  EXPECT_NE(report.svg().find("<polyline"), std::string::npos);
}

TEST(Report, StatisticsAndPairing) {
  EvalReport rep;
  rep.rows.push_back({"base", 5, {60.0, 62.0, 64.0}, 1000, 1000});
  rep.rows.push_back({"boot", 5, {61.0, 64.0, 64.0}, 1000, 1000});
  const EvalRow& r = rep.rows[0];
  EXPECT_DOUBLE_EQ(r.mean(), 62.0);
  EXPECT_DOUBLE_EQ(r.std_dev(), 2.0);
  EXPECT_NEAR(r.binomial_ci95(), 1.96 * std::sqrt(0.62 * 0.38 / 1000) * 100, 1e-12);
  const PairedDifference d = paired_difference(rep, "base", "boot", 5);
  EXPECT_EQ(d.runs, 3u);
  EXPECT_DOUBLE_EQ(d.mean, 1.0);
  EXPECT_DOUBLE_EQ(d.std_dev, 1.0);
  const std::string md = rep.markdown();
  EXPECT_NE(md.find("| 5 | 62.00 ± 2.00 | 63.00 ± 1.73 | 1.00 ± 1.00 |"), std::string::npos) << md;
  EXPECT_NE(md.find("boot - base (paired)"), std::string::npos);
  EvalRow single{"x", 1, {50.0}, 10, 10};
  EXPECT_EQ(single.std_dev(), 0.0);
}

TEST(Report, CsvQuotesAwkwardLabels) {
  EvalReport rep;
  rep.rows.push_back({"a,b", 1, {50.0}, 10, 10});
  EXPECT_NE(rep.csv().find("\"a,b\",1,50.0000,0.0000,1,10,"), std::string::npos) << rep.csv();
}

TEST(Tools, GradcheckOnMicroPreset) {
  const TrainConfig c = testing::micro_config();
  const GradCheckReport r = gradcheck_config(c, 1);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_EQ(r.checked, parameter_count(c.model_config()));
}

TEST(Tools, MakeSyntheticDatasetRoundTrips) {
  TempDir dir("synth");
  DataConfig d;
  d.synth_dim = 6;
  d.synth_train_classes = 4;
  d.synth_test_classes = 3;
  const std::size_t files = make_synthetic_dataset(d, dir.path(), 5);
  EXPECT_EQ(files, 7u * 5u);
  auto train = image_directory_source(dir.path(), dir.path() / "train.tsv", Split::kTrain);
  auto test = image_directory_source(dir.path(), dir.path() / "test.tsv", Split::kTest);
  EXPECT_EQ(train->num_classes(), 4u);
  EXPECT_EQ(test->num_classes(), 3u);
  EXPECT_EQ(train->input_dim(), 6u);
  EXPECT_TRUE(disjoint_classes(*train, *test));
  const auto reference = make_sources(d);
  const auto x = train->example(2, 3), y = reference.train->example(2, 3);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(x[i], static_cast<double>(static_cast<float>(y[i])));
}

}  // namespace
}  // namespace srwm
