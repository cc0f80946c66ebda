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

#include "rollback/tensor.hpp"

namespace rollback {
namespace {

TEST(Tensor, SizeMatchesShapeProduct) {
  Tensor<float> t(Shape{2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(shape_str(t.shape()), "[2x3x4]");
  for (float v : t.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Tensor, ScalarHasEmptyShape) {
  Tensor<double> s(Shape{}, 3.5);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0], 3.5);
}

TEST(Tensor, RejectsZeroDimension) {
  EXPECT_THROW(Tensor<float>(Shape{2, 0}), ShapeError);
}

TEST(Tensor, RejectsValueCountMismatch) {
  try {
    Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_STREQ(e.kind(), "shape");
    EXPECT_NE(std::string(e.what()).find("[2x2]"), std::string::npos);
  }
}

TEST(Tensor, ReshapeKeepsValues) {
  Tensor<float> t(Shape{2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[4], 5.0f);
  EXPECT_THROW(t.reshaped({4, 2}), ShapeError);
}

TEST(Tensor, BitEqualDistinguishesSignedZero) {
  Tensor<float> a(Shape{1}, 0.0f);
  Tensor<float> b(Shape{1}, -0.0f);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(bit_equal(a, b));
  EXPECT_TRUE(bit_equal(a, a));
}

TEST(Tensor, CastPreservesShape) {
  Tensor<float> a(Shape{2}, std::vector<float>{0.5f, -1.25f});
  const auto d = tensor_cast<double>(a);
  EXPECT_EQ(d.shape(), a.shape());
  EXPECT_EQ(d[1], -1.25);
}

}  // namespace
}  // namespace rollback
