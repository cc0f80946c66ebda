// Copyright 2026 The Rollback Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "rollback/checkpoint.hpp"

namespace rollback {
namespace {

std::string serialize(const Container& c) {
  std::ostringstream os(std::ios::binary);
  write_container(os, c);
  return os.str();
}

Container parse(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_container(is);
}

std::string format_error(const std::string& bytes) {
  try {
    parse(bytes);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

TEST(Container, ExactByteLayout) {
  Container c;
  c.meta.emplace_back("k", "v");
  c.entries.push_back({"t", {2}, {1.0f, -2.0f}});
  const std::string bytes = serialize(c);
  const std::string expected = std::string("RBTC") + std::string("\x01\x00\x00\x00", 4) +  // version
                               std::string("\x01\x00\x00\x00", 4) +                        // meta count
                               std::string("\x01\x00\x00\x00", 4) + "k" +                  //
                               std::string("\x01\x00\x00\x00", 4) + "v" +                  //
                               std::string("\x01\x00\x00\x00", 4) +                        // entries
                               std::string("\x01\x00\x00\x00", 4) + "t" +                  //
                               std::string("\x01\x00\x00\x00", 4) +                        // rank
                               std::string("\x02\x00\x00\x00\x00\x00\x00\x00", 8) +        // dim
                               std::string("\x00\x00\x80\x3f", 4) +                        // 1.0f
                               std::string("\x00\x00\x00\xc0", 4);                         // -2.0f
  EXPECT_EQ(bytes, expected);
}

TEST(Container, RoundTripIsBitExact) {
  Container c;
  c.meta.emplace_back("kind", "test");
  c.entries.push_back({"special", {5},
                       {0.0f, -0.0f, std::numeric_limits<float>::denorm_min(), std::numeric_limits<float>::infinity(),
                        std::numeric_limits<float>::quiet_NaN()}});
  c.entries.push_back({"scalar", {}, {3.0f}});
  const std::string bytes = serialize(c);
  EXPECT_EQ(serialize(parse(bytes)), bytes);
  const Container back = parse(bytes);
  EXPECT_TRUE(std::signbit(back.at("special").values[1]));
  EXPECT_TRUE(std::isnan(back.at("special").values[4]));
  EXPECT_EQ(back.meta_at("kind"), "test");
}

TEST(Container, Errors) {
  Container c;
  c.entries.push_back({"w", {3}, {1, 2, 3}});
  const std::string good = serialize(c);

  EXPECT_NE(format_error("XXXX" + good.substr(4)).find("bad magic at offset 0"), std::string::npos);

  std::string v2 = good;
  v2[4] = 2;
  EXPECT_NE(format_error(v2).find("unsupported container version 2 at offset 4"), std::string::npos);

  for (std::size_t cut : {std::size_t{2}, std::size_t{9}, good.size() - 1}) {
    const std::string msg = format_error(good.substr(0, cut));
    EXPECT_NE(msg.find("offset"), std::string::npos) << cut << ": " << msg;
  }
  EXPECT_FALSE(format_error(good + "x").empty());

  Container bad;
  bad.entries.push_back({"w", {2}, {1}});
  EXPECT_THROW(serialize(bad), ShapeError);
  EXPECT_THROW(c.at("nope"), FormatError);
  EXPECT_THROW(c.meta_at("nope"), FormatError);
}

TEST(Checkpoint, ParamsRoundTripBitExact) {
  NetworkConfig cfg;
  cfg.num_classes = 7;
  cfg.embedding_width = 12;
  const auto params = build_network<float>(cfg, 5);
  const auto back = params_from_container<float>(parse(serialize(params_to_container(params))));
  EXPECT_EQ(back.config.num_classes, 7u);
  EXPECT_EQ(back.config.embedding_width, 12u);
  EXPECT_EQ(params_fingerprint(back), params_fingerprint(params));
  const auto a = state_groups(params), b = state_groups(back);
  for (std::size_t g = 0; g < a.size(); ++g)
    for (std::size_t t = 0; t < a[g].tensors.size(); ++t)
      EXPECT_TRUE(bit_equal(*a[g].tensors[t].tensor, *b[g].tensors[t].tensor));
}

TEST(Checkpoint, FingerprintTracksValues) {
  auto params = build_network<float>(NetworkConfig{}, 5);
  const auto h = params_fingerprint(params);
  params.classifier.class_bias[0] += 1.0f;
  EXPECT_NE(params_fingerprint(params), h);
}

TEST(Checkpoint, WrongShapeRejected) {
  NetworkConfig cfg;
  auto c = params_to_container(build_network<float>(cfg, 1));
  for (auto& e : c.entries)
    if (e.name == "FC/logits.weight") {
      e.shape = {1, e.values.size()};
    }
  EXPECT_THROW(params_from_container<float>(c), ShapeError);
}

}  // namespace
}  // namespace rollback
