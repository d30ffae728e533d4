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

#include <cmath>
#include <random>
#include <vector>

#include "srwm/episodes.hpp"
#include "srwm/objective.hpp"
#include "test_util.hpp"

namespace srwm {
namespace {

using testing::random_tensor;

Var<double> probs(Tape<double>& tape, std::initializer_list<double> p, bool grad = false) {
  return tape.leaf(Tensor<double>::vector(p), grad);
}

TEST(CrossEntropy, UniformPrediction) {
  Tape<double> tape;
  auto ce = cross_entropy(one_hot(tape, 5, 2), probs(tape, {0.2, 0.2, 0.2, 0.2, 0.2}));
  EXPECT_NEAR(ce.value().item(), std::log(5.0), 1e-15);
}

TEST(CrossEntropy, ConfidentPrediction) {
  Tape<double> tape;
  auto ce = cross_entropy(one_hot(tape, 3, 0), probs(tape, {0.7, 0.2, 0.1}));
  EXPECT_NEAR(ce.value().item(), 0.35667494393873245, 1e-14);
}

TEST(CrossEntropy, ZeroProbabilityIsFloored) {
  Tape<double> tape;
  auto ce = cross_entropy(one_hot(tape, 2, 1), probs(tape, {1.0, 0.0}));
  EXPECT_NEAR(ce.value().item(), -std::log(kProbabilityFloor), 1e-9);
}

TEST(MeanOf, SingleTermIsReturnedUnchanged) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::scalar(1.5));
  std::vector<Var<double>> one{x};
  EXPECT_EQ(mean_of<double>(one).id(), x.id());
  std::vector<Var<double>> three{x, x, tape.leaf(Tensor<double>::scalar(3.0))};
  EXPECT_DOUBLE_EQ(mean_of<double>(three).value().item(), 2.0);
}

TEST(LossWeights, Validation) {
  EXPECT_THROW((LossWeights{0, 0, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossWeights{1, -1, 0}.validate()), std::invalid_argument);
  EXPECT_THROW((LossWeights{1, NAN, 0}.validate()), std::invalid_argument);
  EXPECT_NO_THROW((LossWeights{0, 5, 0}.validate()));
}

// Scalar form of the three-term loss for one query.
double scalar_loss(const std::vector<double>& ps, const std::vector<double>& pt, std::size_t y, double b1, double b2,
                   double b3) {
  double distill = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) distill -= pt[i] * std::log(ps[i]);
  return -b1 * std::log(ps[y]) + b2 * distill - b3 * std::log(pt[y]);
}

TEST(BootstrappedLoss, MatchesScalarOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    Tape<double> tape;
    std::vector<QueryOutputs<double>> outs;
    double expected = 0.0;
    const std::size_t m = 1 + trial % 3;
    for (std::size_t j = 0; j < m; ++j) {
      auto ps = softmax(tape.leaf(random_tensor({3}, rng)));
      auto pt = softmax(tape.leaf(random_tensor({3}, rng)));
      const std::size_t y = rng() % 3;
      outs.push_back({ps, pt, one_hot(tape, 3, y), ps, pt});
      expected += scalar_loss(ps.value().storage(), pt.value().storage(), y, 1, 5, 1);
    }
    expected /= static_cast<double>(m);
    const auto terms = bootstrapped_loss<double>(outs, {1, 5, 1});
    EXPECT_NEAR(terms.total.value().item(), expected, 1e-12 * std::max(1.0, expected));
  }
}

TEST(BootstrappedLoss, ZeroWeightTermsAreLeftOut) {
  Tape<double> tape;
  auto ps = softmax(tape.leaf(Tensor<double>::vector({0.1, 0.5, -0.2})));
  auto pt = softmax(tape.leaf(Tensor<double>::vector({1.0, 0.0, 0.0})));
  std::vector<QueryOutputs<double>> outs{{ps, pt, one_hot(tape, 3, 1), ps, pt}};
  const auto only_t1 = bootstrapped_loss<double>(outs, {1, 0, 0});
  EXPECT_EQ(only_t1.total.value().item(), only_t1.student_ce.value().item());
  const auto only_t2 = bootstrapped_loss<double>(outs, {0, 2, 0});
  EXPECT_EQ(only_t2.total.value().item(), 2 * only_t2.distill.value().item());
}

TEST(StopGradient, TwoBranchProbeHasZeroTeacherGradient) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Tape<double> tape;
    auto ws = tape.leaf(random_tensor({4, 6}, rng));
    auto wt = tape.leaf(random_tensor({4, 6}, rng));
    auto x = tape.constant(random_tensor({6}, rng));
    auto ps = softmax(matvec(ws, x));
    auto pt = softmax(matvec(wt, x));
    std::vector<QueryOutputs<double>> outs{{ps, pt, one_hot(tape, 4, 0), ps, pt}};
    const auto g = tape.backward(bootstrapped_loss<double>(outs, {0, 1, 0}).total);
    for (double v : g[wt].storage()) {
      EXPECT_EQ(v, 0.0);
      EXPECT_FALSE(std::signbit(v));
    }
    double norm = 0.0;
    for (double v : g[ws].storage()) norm += v * v;
    EXPECT_GT(norm, 0.0);
  }
}

class Rollouts : public ::testing::Test {
 protected:
  Rollouts() : splits(synthetic_splits(spec(), 12, 0, 6)) {
    config.input_dim = 8;
    config.n_way = 3;
    config.d_model = 16;
    config.heads = 2;
    config.d_ff = 32;
    config.blocks = 1;
    config.activation = Activation::kSoftplus;
    params = init_params<double>(config, 21);
  }
  static SyntheticSpec spec() {
    SyntheticSpec s;
    s.dim = 8;
    s.examples_per_class = 20;
    s.seed = 5;
    return s;
  }
  Episode episode(std::uint64_t seed, std::size_t k_extra = 1, std::size_t queries = 2) const {
    return sample_episode(*splits.train, 3, 2, k_extra, queries, seed);
  }
  SyntheticSplits splits;
  ModelConfig config;
  ModelParams<double> params;
};

TEST_F(Rollouts, TotalDecomposesIntoTerms) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const LossWeights w{0.3 + s * 0.1, 5.0 * (s % 3), 0.5 * (s % 2)};
    Tape<double> tape;
    const auto m = ModelVars<double>::bind(tape, params, true);
    const auto r = episode_rollout_loss(m, episode(s), w);
    const double recomposed = w.beta1 * r.diagnostics.t1 + w.beta2 * r.diagnostics.t2 + w.beta3 * r.diagnostics.t3;
    EXPECT_NEAR(r.diagnostics.loss, recomposed, 1e-10);
  }
}

TEST_F(Rollouts, LossGrowsWithDistillationWeight) {
  const Episode ep = episode(3);
  double previous = -1.0;
  for (double b2 : {0.0, 0.5, 1.0, 2.0, 5.0, 10.0}) {
    Tape<double> tape;
    const auto m = ModelVars<double>::bind(tape, params, true);
    const double loss = episode_rollout_loss(m, ep, {1, b2, 1}).diagnostics.loss;
    EXPECT_GE(loss, previous);
    previous = loss;
  }
}

TEST_F(Rollouts, DistillationGradientIgnoresTeacherBranch) {
  // The beta2-only gradient must equal that of a graph where the teacher's
  // distribution is a plain constant: the teacher branch adds nothing.
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Episode ep = episode(s);
    Tape<double> t1;
    const auto m1 = ModelVars<double>::bind(t1, params, true);
    const auto r1 = episode_rollout_loss(m1, ep, {0, 1, 0});
    const auto g1 = t1.backward(r1.loss);

    Tape<double> t2;
    const auto m2 = ModelVars<double>::bind(t2, params, true);
    RolloutOptions frozen;
    frozen.frozen_teacher = r1.diagnostics.distill_teacher;
    const auto r2 = episode_rollout_loss(m2, ep, {0, 1, 0}, frozen);
    const auto g2 = t2.backward(r2.loss);

    EXPECT_EQ(r1.diagnostics.loss, r2.diagnostics.loss);
    const auto l1 = m1.leaves(), l2 = m2.leaves();
    for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_TRUE(bitwise_equal(g1[l1[i]], g2[l2[i]])) << "leaf " << i;
  }
}

TEST_F(Rollouts, ContinuationOnlyReachesStudentThroughTeacherTerms) {
  // Perturbing a continuation example leaves T1 exactly unchanged.
  Episode ep = episode(8);
  Tape<double> t1;
  const auto base = episode_rollout_loss(ModelVars<double>::bind(t1, params, false), ep, {1, 1, 1});
  ep.continuation[0].input[0] += 0.3;
  Tape<double> t2;
  const auto moved = episode_rollout_loss(ModelVars<double>::bind(t2, params, false), ep, {1, 1, 1});
  EXPECT_EQ(base.diagnostics.t1, moved.diagnostics.t1);
  EXPECT_NE(base.diagnostics.t3, moved.diagnostics.t3);
}

TEST_F(Rollouts, NoContinuationMeansTeacherIsStudent) {
  Tape<double> tape;
  const auto m = ModelVars<double>::bind(tape, params, false);
  const auto r = episode_rollout_loss(m, episode(1, 0), {1, 0, 0});
  EXPECT_EQ(r.diagnostics.t1, r.diagnostics.t3);
  EXPECT_EQ(r.diagnostics.acc_student, r.diagnostics.acc_teacher);
  EXPECT_THROW(episode_rollout_loss(m, episode(1, 0), {1, 1, 0}), ConfigError);
}

TEST_F(Rollouts, FrozenTeacherSizeIsChecked) {
  Tape<double> tape;
  const auto m = ModelVars<double>::bind(tape, params, false);
  RolloutOptions o;
  o.frozen_teacher = {{0.2, 0.3, 0.5}};
  EXPECT_THROW(episode_rollout_loss(m, episode(1, 1, 2), {1, 1, 0}, o), ConfigError);
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(Tensor<double>::vector({0.1, 0.5, 0.5})), 1u);
  EXPECT_EQ(argmax(Tensor<double>::vector({2.0})), 0u);
}

}  // namespace
}  // namespace srwm
