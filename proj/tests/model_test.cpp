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

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <vector>

#include "srwm/model.hpp"
#include "srwm_oracle.hpp"
#include "test_util.hpp"

namespace srwm {
namespace {

using testing::random_tensor;
using testing::rel_error;

Tensor<double> random_srwm_weights(std::size_t d_in, std::size_t d_out, std::mt19937_64& rng) {
  return random_tensor({d_out + 2 * d_in + 1, d_in}, rng, 1.0);
}

TEST(SrwmStep, MatchesScalarOracle) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t d_in = 1 + trial % 4;
    const std::size_t d_out = 1 + (trial / 4) % 5;
    const Tensor<double> w = random_srwm_weights(d_in, d_out, rng);
    const Tensor<double> x = random_tensor({d_in}, rng);
    const auto [y, w_new] = srwm_step(w, x);
    const oracle::Step ref = oracle::srwm_step(w.storage(), w.rows(), d_in, x.storage());
    ASSERT_EQ(y.size(), d_out);
    for (std::size_t i = 0; i < d_out; ++i) EXPECT_LT(rel_error(y[i], ref.y[i]), 1e-12);
    for (std::size_t i = 0; i < w_new.size(); ++i) EXPECT_LT(rel_error(w_new[i], ref.w[i]), 1e-12);
  }
}

TEST(SrwmStep, SoftmaxOnInputVariant) {
  std::mt19937_64 rng(3);
  const Tensor<double> w = random_srwm_weights(3, 3, rng);
  const Tensor<double> x = random_tensor({3}, rng);
  const auto [y, w_new] = srwm_step(w, x, true);
  const oracle::Step ref = oracle::srwm_step(w.storage(), w.rows(), 3, oracle::softmax(x.storage()));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_LT(rel_error(y[i], ref.y[i]), 1e-12);
}

TEST(SrwmStep, IdenticalKeyAndQueryLeaveWeightsUnchanged) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t d = 1 + trial % 6;
    Tensor<double> w = random_srwm_weights(d, d, rng);
    for (std::size_t j = 0; j < d; ++j) {
      for (std::size_t i = 0; i < d; ++i) w(2 * d + i, j) = w(d + i, j);
    }
    const auto [y, w_new] = srwm_step(w, random_tensor({d}, rng));
    EXPECT_TRUE(bitwise_equal(w, w_new));
  }
}

TEST(SrwmStep, UpdateRankIsBounded) {
  std::mt19937_64 rng(23);
  for (int rollout = 0; rollout < 50; ++rollout) {
    const std::size_t d = 2 + rollout % 5;
    const Tensor<double> w0 = random_srwm_weights(d, d, rng);
    Tensor<double> w = w0;
    for (std::size_t t = 1; t <= d + 2; ++t) {
      w = srwm_step(w, random_tensor({d}, rng)).second;
      Eigen::MatrixXd diff(w.rows(), w.cols());
      for (std::size_t i = 0; i < w.rows(); ++i)
        for (std::size_t j = 0; j < w.cols(); ++j) diff(i, j) = w(i, j) - w0(i, j);
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(diff);
      const auto& s = svd.singularValues();
      Eigen::Index rank = 0;
      for (Eigen::Index i = 0; i < s.size(); ++i) rank += s(i) > 1e-8 ? 1 : 0;
      EXPECT_LE(static_cast<std::size_t>(rank), std::min(t, d)) << "rollout " << rollout << " step " << t;
    }
  }
}

TEST(SrwmStep, RejectsBadShapes) {
  EXPECT_THROW(srwm_step(Tensor<double>({4, 2}), Tensor<double>({2})), ShapeError);
  EXPECT_THROW(srwm_step(Tensor<double>({7, 2}), Tensor<double>({3})), ShapeError);
}

TEST(Init, LearningRateRowStartsSmall) {
  ModelConfig c;
  const auto p = init_params<double>(c, 1);
  const std::size_t dh = c.head_dim();
  for (const auto& blk : p.blocks) {
    for (const auto& w : blk.srwm.w0) {
      for (std::size_t j = 0; j < dh; ++j) {
        EXPECT_EQ(w(3 * dh, j), kBetaRowInit);
        EXPECT_NEAR(1.0 / (1.0 + std::exp(-w(3 * dh, j))), 0.1192, 1e-4);
      }
    }
  }
}

TEST(Init, UnknownLabelRowIsZero) {
  ModelConfig c;
  const auto p = init_params<double>(c, 9);
  for (std::size_t j = 0; j < c.d_model; ++j) EXPECT_EQ(p.label_table(c.n_way, j), 0.0);
  EXPECT_EQ(p.label_table.rows(), c.n_way + 1);
}

TEST(Init, DeterministicInSeed) {
  ModelConfig c;
  auto a = init_params<double>(c, 5), b = init_params<double>(c, 5), d = init_params<double>(c, 6);
  auto ta = a.tensors(), tb = b.tensors(), td = d.tensors();
  bool any_diff = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(*ta[i], *tb[i]));
    any_diff = any_diff || !(*ta[i] == *td[i]);
  }
  EXPECT_TRUE(any_diff);
}

std::size_t enumerated_count(const ModelConfig& c) {
  std::size_t n = 0;
  const auto p = init_params<float>(c, 0);
  p.visit([&](const std::string&, const Tensor<float>& t) { n += t.size(); });
  return n;
}

TEST(ParameterCount, FormulaMatchesEnumeration) {
  ModelConfig full;
  full.input_dim = 64;
  full.d_model = 256;
  full.heads = 16;
  full.d_ff = 2048;
  full.blocks = 3;
  EXPECT_EQ(parameter_count(full), enumerated_count(full));

  ModelConfig desk;
  EXPECT_EQ(parameter_count(desk), enumerated_count(desk));
  desk.merge_projection = false;
  EXPECT_EQ(parameter_count(desk), enumerated_count(desk));
}

TEST(ParameterCount, FullArchitectureByHand) {
  ModelConfig c;
  c.input_dim = 64;
  c.n_way = 5;
  c.d_model = 256;
  c.heads = 16;
  c.d_ff = 2048;
  c.blocks = 3;
  const std::size_t dh = 16;
  const std::size_t block = 4 * 256 + 16 * (3 * dh + 1) * dh + 256 * 256 + 256 + 2 * 256 * 2048 + 2048 + 256;
  const std::size_t expected = 256 * 64 + 256 + 6 * 256 + 3 * block + 2 * 256 + 5 * 256 + 5;
  EXPECT_EQ(parameter_count(c), expected);
}

TEST(ModelConfig, ValidateListsProblems) {
  ModelConfig c;
  c.d_model = 30;
  c.heads = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.n_way = 3;
  c.d_model = 8;
  c.heads = 2;
  c.d_ff = 12;
  c.blocks = 2;
  return c;
}

std::vector<Var<double>> encode(Tape<double>& tape, const ModelVars<double>& m, const std::vector<Tensor<double>>& xs,
                                const std::vector<std::size_t>& labels) {
  std::vector<Var<double>> out;
  for (std::size_t t = 0; t < xs.size(); ++t) out.push_back(encode_step(m, tape.leaf_view(xs[t], false), labels[t]));
  return out;
}

TEST(Model, SnapshotContinuationEqualsReplay) {
  const ModelConfig c = small_config();
  std::mt19937_64 rng(77);
  for (int episode = 0; episode < 20; ++episode) {
    const auto params = init_params<double>(c, 100 + episode);
    const std::size_t prefix = 3 + episode % 5, suffix = 2 + episode % 3;
    std::vector<Tensor<double>> xs;
    std::vector<std::size_t> labels;
    for (std::size_t t = 0; t < prefix + suffix; ++t) {
      xs.push_back(random_tensor({c.input_dim}, rng));
      labels.push_back(rng() % (c.n_way + 1));
    }

    Tape<double> t1;
    const auto m1 = ModelVars<double>::bind(t1, params, true);
    const auto steps1 = encode(t1, m1, xs, labels);
    ModelState<double> s1 = initial_state(m1);
    model_forward<double>(m1, s1, std::span(steps1).first(prefix));
    ModelState<double> branch = snapshot_state(s1);
    model_forward<double>(m1, s1, std::span(steps1).first(prefix));  // advance the original further
    const auto out_branch = model_forward<double>(m1, branch, std::span(steps1).subspan(prefix));

    Tape<double> t2;
    const auto m2 = ModelVars<double>::bind(t2, params, true);
    const auto steps2 = encode(t2, m2, xs, labels);
    ModelState<double> s2 = initial_state(m2);
    const auto out_replay = model_forward<double>(m2, s2, steps2);

    for (std::size_t i = 0; i < suffix; ++i) {
      EXPECT_TRUE(bitwise_equal(out_branch[i].value(), out_replay[prefix + i].value())) << "episode " << episode;
    }
    for (std::size_t b = 0; b < c.blocks; ++b) {
      for (std::size_t h = 0; h < c.heads; ++h) {
        EXPECT_TRUE(bitwise_equal(branch[b].weights[h].value(), s2[b].weights[h].value()));
      }
    }
  }
}

TEST(Model, OutputsDependOnlyOnThePrefix) {
  const ModelConfig c = small_config();
  const auto params = init_params<double>(c, 4);
  std::mt19937_64 rng(8);
  std::vector<Tensor<double>> xs;
  std::vector<std::size_t> labels;
  for (int t = 0; t < 8; ++t) {
    xs.push_back(random_tensor({c.input_dim}, rng));
    labels.push_back(t % c.n_way);
  }
  auto run = [&](const std::vector<Tensor<double>>& inputs) {
    Tape<double> tape;
    const auto m = ModelVars<double>::bind(tape, params, false);
    auto s = initial_state(m);
    std::vector<Tensor<double>> out;
    for (const auto& v : model_forward<double>(m, s, encode(tape, m, inputs, labels))) out.push_back(v.value());
    return out;
  };
  const auto base = run(xs);
  auto perturbed_inputs = xs;
  perturbed_inputs[5][0] += 0.5;
  const auto perturbed = run(perturbed_inputs);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_TRUE(bitwise_equal(base[t], perturbed[t]));
  for (std::size_t t = 5; t < 8; ++t) EXPECT_FALSE(base[t] == perturbed[t]);
}

TEST(Model, InferenceSessionMatchesTapeForward) {
  const ModelConfig c = small_config();
  const auto params = init_params<double>(c, 12);
  std::mt19937_64 rng(2);
  std::vector<Tensor<double>> xs;
  std::vector<std::size_t> labels;
  for (int t = 0; t < 10; ++t) {
    xs.push_back(random_tensor({c.input_dim}, rng));
    labels.push_back(t % (c.n_way + 1));
  }
  Tape<double> tape;
  const auto m = ModelVars<double>::bind(tape, params, false);
  auto s = initial_state(m);
  const auto expected = model_forward<double>(m, s, encode(tape, m, xs, labels));

  InferenceSession<double> session(params);
  std::size_t nodes = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    EXPECT_TRUE(bitwise_equal(session.feed(xs[t], labels[t]), expected[t].value()));
    if (t == 0) nodes = session.scratch_nodes();
    EXPECT_EQ(session.scratch_nodes(), nodes);
  }
  EXPECT_EQ(session.state().step, xs.size());
}

TEST(Model, InferenceStateSizeIsConstant) {
  const ModelConfig c = small_config();
  const auto params = init_params<double>(c, 1);
  InferenceSession<double> session(params);
  const std::size_t expected = c.blocks * c.heads * c.srwm_rows() * c.head_dim() * sizeof(double);
  EXPECT_EQ(session.state().bytes(), expected);
  std::mt19937_64 rng(0);
  for (int t = 0; t < 200; ++t) session.feed(random_tensor({c.input_dim}, rng), c.n_way);
  EXPECT_EQ(session.state().bytes(), expected);
  session.reset();
  EXPECT_EQ(session.state().step, 0u);
}

TEST(Model, LabelOutOfRangeRejected) {
  const ModelConfig c = small_config();
  const auto params = init_params<double>(c, 1);
  InferenceSession<double> session(params);
  EXPECT_THROW(session.feed(Tensor<double>({c.input_dim}), c.n_way + 1), std::out_of_range);
}

TEST(Model, FromLeavesRejectsWrongCount) {
  const auto params = init_params<double>(small_config(), 1);
  Tape<double> tape;
  std::vector<Var<double>> leaves{tape.leaf(Tensor<double>({2}))};
  EXPECT_THROW(ModelVars<double>::from_leaves(params, leaves), ShapeError);
}

TEST(Model, SinglePrecisionTracksDouble) {
  const ModelConfig c = small_config();
  const auto pd = init_params<double>(c, 3);
  const auto pf = init_params<float>(c, 3);
  InferenceSession<double> sd(pd);
  InferenceSession<float> sf(pf);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const Tensor<double> x = random_tensor({c.input_dim}, rng);
    const auto a = sd.feed(x, 0);
    const auto b = sf.feed(x.cast<float>(), 0);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-4);
  }
}

}  // namespace
}  // namespace srwm
