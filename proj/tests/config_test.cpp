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

#include <fstream>

#include "srwm/config.hpp"
#include "test_util.hpp"

namespace srwm {
namespace {

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

TEST(KeyValues, ParsesCommentsAndSpacing) {
  const auto kv = KeyValues::parse("# header\n\n  n_way =  7 \nk_shot=2\nn_way = 9\n", "cfg");
  EXPECT_EQ(kv.get("n_way"), "9");
  EXPECT_EQ(kv.get("k_shot"), "2");
  EXPECT_FALSE(kv.get("steps").has_value());
  EXPECT_EQ(kv.entries().size(), 2u);
}

TEST(KeyValues, SyntaxErrorNamesLine) {
  const std::string msg = message_of([] { KeyValues::parse("n_way = 5\nnonsense\n", "file.cfg"); });
  EXPECT_NE(msg.find("file.cfg:2"), std::string::npos) << msg;
}

TEST(KeyValues, SerializeRoundTrip) {
  KeyValues kv;
  kv.set("b", "2");
  kv.set_assignment("a = x y");
  const auto back = KeyValues::parse(kv.serialize(), "s");
  EXPECT_EQ(back.entries(), kv.entries());
  EXPECT_EQ(kv.serialize(), "b=2\na=x y\n");
}

TEST(FormatDouble, ShortestRoundTrip) {
  EXPECT_EQ(format_double(0.001), "0.001");
  EXPECT_EQ(format_double(5), "5");
  const double v = 0.1 + 0.2;
  EXPECT_EQ(std::stod(format_double(v)), v);
}

TEST(TrainConfig, UnknownKeyIsAnError) {
  KeyValues kv;
  kv.set("n_wya", "5");
  const std::string msg = message_of([&] { TrainConfig::from_key_values(kv); });
  EXPECT_NE(msg.find("unknown config key 'n_wya'"), std::string::npos) << msg;
}

TEST(TrainConfig, MalformedValueNamesKey) {
  KeyValues kv;
  kv.set("steps", "-3");
  EXPECT_NE(message_of([&] { TrainConfig::from_key_values(kv); }).find("steps"), std::string::npos);
  kv = {};
  kv.set("merge_projection", "maybe");
  EXPECT_NE(message_of([&] { TrainConfig::from_key_values(kv); }).find("merge_projection"), std::string::npos);
  kv = {};
  kv.set("lr_peak", "nan");
  EXPECT_THROW(TrainConfig::from_key_values(kv), ConfigError);
}

TEST(TrainConfig, KeyValueRoundTrip) {
  TrainConfig c = TrainConfig::from_key_values(preset("micro"));
  c.seed = 123456789012345ULL;
  c.lr_peak = 3.3e-4;
  c.precision = Precision::kF32;
  c.data.input_mode = InputMode::kPatchMean;
  const TrainConfig back = TrainConfig::from_key_values(c.to_key_values());
  EXPECT_EQ(back.to_key_values().serialize(), c.to_key_values().serialize());
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.lr_peak, c.lr_peak);
}

TEST(TrainConfig, ValidateListsEveryProblem) {
  TrainConfig c;
  c.k_shot = 0;
  c.heads = 5;
  c.loss = {1, 2, 0};
  const std::string msg = message_of([&] { c.validate(); });
  EXPECT_NE(msg.find("k_shot"), std::string::npos) << msg;
  EXPECT_NE(msg.find("heads"), std::string::npos) << msg;
  EXPECT_NE(msg.find("k_extra"), std::string::npos) << msg;
}

TEST(TrainConfig, EpisodeLengthLimit) {
  TrainConfig c;
  c.n_way = 5;
  c.k_shot = 10;
  c.k_extra = 0;
  c.max_unroll = 50;
  EXPECT_THROW(c.validate(), ConfigError);
  c.max_unroll = 51;
  EXPECT_NO_THROW(c.validate());
}

TEST(Presets, MatchDocumentedShapes) {
  const TrainConfig full = TrainConfig::from_key_values(preset("full"));
  EXPECT_EQ(full.blocks, 3u);
  EXPECT_EQ(full.d_model, 256u);
  EXPECT_EQ(full.heads, 16u);
  EXPECT_EQ(full.d_ff, 2048u);
  const TrainConfig desk = TrainConfig::from_key_values(preset("desk"));
  EXPECT_EQ(desk.blocks, 2u);
  EXPECT_EQ(desk.d_model, 64u);
  EXPECT_EQ(desk.heads, 4u);
  EXPECT_EQ(desk.steps, 10000u);
  const TrainConfig micro = TrainConfig::from_key_values(preset("micro"));
  EXPECT_EQ(micro.activation, Activation::kSoftplus);
  EXPECT_EQ(micro.k_extra, 1u);
  for (const auto* name : {"full", "desk", "micro"}) {
    EXPECT_NO_THROW(TrainConfig::from_key_values(preset(name)).validate()) << name;
  }
  EXPECT_THROW(preset("huge"), ConfigError);
}

TEST(TrainConfig, ModelConfigTakesSyntheticDim) {
  TrainConfig c;
  c.data.synth_dim = 12;
  EXPECT_EQ(c.model_config().input_dim, 12u);
  c.data.dataset = "directory";
  EXPECT_THROW(c.model_config(), ConfigError);
}

TEST(Sources, DirectoryManifestsMustBeDisjoint) {
  testing::TempDir dir("cfg");
  std::filesystem::create_directories(dir.path() / "a");
  std::vector<std::uint8_t> px(4, 1);
  {
    std::ofstream f(dir.path() / "a" / "0.bin", std::ios::binary);
  }
  DataConfig d;
  d.dataset = "directory";
  d.data_root = dir.path().string();
  d.train_manifest = (dir / "missing.tsv").string();
  d.test_manifest = d.train_manifest;
  EXPECT_ANY_THROW(make_sources(d));
}

}  // namespace
}  // namespace srwm
