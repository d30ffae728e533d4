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

// Exercises the shared library through its C header only.

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "srwm/srwm.h"

namespace {

namespace fs = std::filesystem;

std::string take(char* s) {
  std::string out = s ? s : "";
  srwm_string_free(s);
  return out;
}

class CApi : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("srwm_capi_" + std::to_string(::getpid()) + "_" +
                                       ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir);
    ASSERT_EQ(srwm_config_create("micro", &config), SRWM_OK);
  }
  void TearDown() override {
    srwm_config_free(config);
    fs::remove_all(dir);
  }
  std::string path(const char* name) const { return (dir / name).string(); }
  fs::path dir;
  srwm_config* config = nullptr;
};

TEST_F(CApi, StatusNames) {
  EXPECT_STREQ(srwm_status_name(SRWM_OK), "ok");
  EXPECT_NE(std::string(srwm_status_name(SRWM_ERR_CONFIG)), "");
}

TEST_F(CApi, NullArgumentsAreRejected) {
  EXPECT_EQ(srwm_config_create(nullptr, nullptr), SRWM_ERR_ARGUMENT);
  EXPECT_EQ(srwm_config_set(nullptr, "a", "b"), SRWM_ERR_ARGUMENT);
  EXPECT_EQ(srwm_train(config, nullptr, nullptr), SRWM_ERR_ARGUMENT);
  EXPECT_NE(std::string(srwm_last_error()), "");
  srwm_config_free(nullptr);
  srwm_checkpoint_free(nullptr);
  srwm_string_free(nullptr);
}

TEST_F(CApi, UnknownKeyIsConfigError) {
  EXPECT_EQ(srwm_config_set(config, "bogus", "1"), SRWM_ERR_CONFIG);
  EXPECT_NE(std::string(srwm_last_error()).find("bogus"), std::string::npos);
  EXPECT_EQ(srwm_config_set(config, "steps", "abc"), SRWM_ERR_CONFIG);
  EXPECT_EQ(srwm_config_create("enormous", &config), SRWM_ERR_CONFIG);
}

TEST_F(CApi, MissingConfigFileIsIoError) {
  EXPECT_EQ(srwm_config_load(config, path("nope.cfg").c_str()), SRWM_ERR_IO);
}

TEST_F(CApi, ConfigFileAndSerialize) {
  {
    FILE* f = std::fopen(path("c.cfg").c_str(), "w");
    std::fputs("# comment\nsteps = 7\nlr_peak = 0.002\n", f);
    std::fclose(f);
  }
  ASSERT_EQ(srwm_config_load(config, path("c.cfg").c_str()), SRWM_OK);
  char* text = nullptr;
  ASSERT_EQ(srwm_config_serialize(config, &text), SRWM_OK);
  const std::string s = take(text);
  EXPECT_NE(s.find("steps=7\n"), std::string::npos);
  EXPECT_NE(s.find("lr_peak=0.002\n"), std::string::npos);
  EXPECT_NE(s.find("d_model=16\n"), std::string::npos);
  EXPECT_EQ(srwm_config_validate(config), SRWM_OK);
  ASSERT_EQ(srwm_config_set(config, "k_shot", "0"), SRWM_OK);
  EXPECT_EQ(srwm_config_validate(config), SRWM_ERR_CONFIG);
}

TEST_F(CApi, TrainEvaluateDescribe) {
  ASSERT_EQ(srwm_config_set(config, "steps", "12"), SRWM_OK);
  ASSERT_EQ(srwm_config_set(config, "seed", "5"), SRWM_OK);
  const std::string ckpt = path("m.ckpt"), metrics = path("m.csv");
  srwm_train_options opts{};
  opts.checkpoint_path = ckpt.c_str();
  opts.metrics_path = metrics.c_str();
  srwm_train_summary summary{};
  ASSERT_EQ(srwm_train(config, &opts, &summary), SRWM_OK) << srwm_last_error();
  EXPECT_EQ(summary.steps, 12u);
  EXPECT_GT(summary.final_loss, 0.0);

  srwm_checkpoint* c = nullptr;
  ASSERT_EQ(srwm_checkpoint_open(ckpt.c_str(), &c), SRWM_OK);
  char* text = nullptr;
  ASSERT_EQ(srwm_checkpoint_describe(c, &text), SRWM_OK);
  EXPECT_NE(take(text).find("readout.weight"), std::string::npos);

  srwm_eval_options eo{};
  eo.episodes = 100;
  eo.seed = 3;
  double a = -1, b = -1;
  ASSERT_EQ(srwm_evaluate(c, 2, &eo, &a), SRWM_OK);
  ASSERT_EQ(srwm_evaluate(c, 2, &eo, &b), SRWM_OK);
  EXPECT_EQ(a, b);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 1.0);
  EXPECT_EQ(srwm_evaluate(c, 1000, &eo, &a), SRWM_ERR_CONFIG);
  srwm_checkpoint_free(c);

  const char* labels[] = {"x"};
  const char* paths[] = {ckpt.c_str()};
  const size_t ks[] = {1, 2};
  char* md = nullptr;
  const std::string csv = path("r.csv");
  ASSERT_EQ(srwm_sweep(labels, paths, 1, ks, 2, &eo, csv.c_str(), nullptr, nullptr, &md), SRWM_OK);
  EXPECT_NE(take(md).find("| K_test |"), std::string::npos);
  EXPECT_TRUE(fs::exists(csv));
}

TEST_F(CApi, ResumeRejectsOtherArchitecture) {
  ASSERT_EQ(srwm_config_set(config, "steps", "4"), SRWM_OK);
  const std::string ckpt = path("m.ckpt");
  srwm_train_options opts{};
  opts.checkpoint_path = ckpt.c_str();
  ASSERT_EQ(srwm_train(config, &opts, nullptr), SRWM_OK) << srwm_last_error();
  ASSERT_EQ(srwm_config_set(config, "d_ff", "64"), SRWM_OK);
  ASSERT_EQ(srwm_config_set(config, "steps", "8"), SRWM_OK);
  opts.resume_path = ckpt.c_str();
  EXPECT_EQ(srwm_train(config, &opts, nullptr), SRWM_ERR_FORMAT);
  EXPECT_NE(std::string(srwm_last_error()).find("d_ff"), std::string::npos) << srwm_last_error();
}

TEST_F(CApi, CorruptCheckpointIsFormatError) {
  FILE* f = std::fopen(path("bad.ckpt").c_str(), "wb");
  std::fputs("SRWMxxxx", f);
  std::fclose(f);
  srwm_checkpoint* c = nullptr;
  EXPECT_EQ(srwm_checkpoint_open(path("bad.ckpt").c_str(), &c), SRWM_ERR_FORMAT);
  EXPECT_EQ(c, nullptr);
  EXPECT_EQ(srwm_checkpoint_open(path("absent.ckpt").c_str(), &c), SRWM_ERR_IO);
}

TEST_F(CApi, GradcheckAndTools) {
  srwm_gradcheck_result r{};
  ASSERT_EQ(srwm_gradcheck(config, 1, 1e-5, &r), SRWM_OK);
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_GT(r.checked, 1000u);

  size_t files = 0;
  ASSERT_EQ(srwm_make_synthetic(config, path("data").c_str(), 3, &files), SRWM_OK);
  EXPECT_EQ(files, 45u);

  double ceiling = 0.0;
  ASSERT_EQ(srwm_bayes_ceiling(config, 500, 1, &ceiling), SRWM_OK);
  EXPECT_GT(ceiling, 0.5);
  EXPECT_LE(ceiling, 1.0);
}

}  // namespace
