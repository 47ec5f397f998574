// Copyright 2026 The qsim Authors. All Rights Reserved.
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

#include "qsim/quant.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace qsim {
namespace {

const NumericFormat kInt4 = NumericFormat::integer(4);
const NumericFormat kInt8 = NumericFormat::integer(8);

TEST(ScaleFromAlpha, Examples) {
  EXPECT_EQ(scale_from_alpha(1.0, kInt4), 7.0);
  EXPECT_EQ(scale_from_alpha(7.0, kInt4), 1.0);
  EXPECT_EQ(scale_from_alpha(2.0, kInt8, SignedMode::UnsignedNonNegative), 127.5);
  EXPECT_EQ(scale_from_alpha(6.0, NumericFormat::e2m1()), 1.0);
  EXPECT_EQ(scale_from_alpha(448.0, NumericFormat::e4m3()), 1.0);
}

TEST(ScaleFromAlpha, RejectsNonpositiveAlpha) {
  EXPECT_THROW(scale_from_alpha(0.0, kInt4), ValueError);
  EXPECT_THROW(scale_from_alpha(-1.0, kInt4), ValueError);
}

TEST(QuantizeInt, Examples) {
  EXPECT_EQ(quantize_int(0.5, 7.0, 4), 4);  // 3.5 ties to even
  EXPECT_EQ(quantize_int(10.0, 7.0, 4), 7);
  EXPECT_EQ(quantize_int(-10.0, 7.0, 4), -7);
  EXPECT_EQ(quantize_int(0.0, 3.0, 8), 0);
  EXPECT_EQ(quantize_int(-1.0, 3.0, 8, SignedMode::UnsignedNonNegative), 0);
  EXPECT_EQ(quantize_int(100.0, 3.0, 8, SignedMode::UnsignedNonNegative), 255);
}

TEST(Dequantize, Examples) {
  EXPECT_EQ(dequantize(7, 7.0), 1.0);
  EXPECT_DOUBLE_EQ(dequantize(4, 7.0), 4.0 / 7.0);
  EXPECT_EQ(dequantize(-7, 3.5), -2.0);
  EXPECT_THROW(dequantize(1, 0.0), ValueError);
}

TEST(Qdq, PerTensorInt4Example) {
  const Tensor t = Tensor::vector({0.5, -0.25, 1.0});
  const Tensor out = qdq_per_tensor(t, kInt4, 1.0);
  EXPECT_DOUBLE_EQ(out[0], 4.0 / 7.0);
  EXPECT_DOUBLE_EQ(out[1], -2.0 / 7.0);
  EXPECT_EQ(out[2], 1.0);
}

TEST(Qdq, E2M1Example) {
  const Tensor out = qdq_per_tensor(Tensor::vector({2.0}), NumericFormat::e2m1(), 6.0);
  EXPECT_EQ(out[0], 2.0);
}

TEST(Qdq, GridPointsAreFixed) {
  const double alpha = 3.0;
  const double s = scale_from_alpha(alpha, kInt4);
  Tensor t({15});
  for (int q = -7; q <= 7; ++q) t[static_cast<std::size_t>(q + 7)] = q / s;
  const Tensor out = qdq_per_tensor(t, kInt4, alpha);
  for (std::size_t i = 0; i < t.numel(); ++i) EXPECT_NEAR(out[i], t[i], 1e-15);
}

TEST(Qdq, PerChannelUsesOneThresholdPerSlice) {
  const Tensor w = Tensor::matrix({{1.0, -4.0}, {2.0, 1.0}});
  QuantSpec spec;
  spec.format = kInt4;
  spec.granularity = Granularity::per_channel(0);
  const ScaleSet scales = absmax_scales(w, spec);
  ASSERT_EQ(scales.alphas, (std::vector<double>{4.0, 2.0}));
  const Tensor out = qdq(w, spec, scales);
  EXPECT_DOUBLE_EQ(out.at(0, 0), 2.0 * 4.0 / 7.0);
  EXPECT_EQ(out.at(0, 1), -4.0);
  EXPECT_EQ(out.at(1, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.at(1, 1), 2.0 * 4.0 / 7.0);
}

TEST(Qdq, ShapeAndScaleErrors) {
  QuantSpec spec;
  spec.format = kInt4;
  spec.granularity = Granularity::per_channel(1);
  const Tensor t({2, 3}, 1.0);
  EXPECT_THROW(qdq(t, spec, ScaleSet{spec.granularity, {1.0, 1.0}}), ShapeError);
  EXPECT_THROW(qdq(t, spec, ScaleSet{Granularity::per_tensor(), {1.0}}), ShapeError);
  EXPECT_THROW(qdq(t, spec, ScaleSet{spec.granularity, {1.0, 0.0, 1.0}}), ValueError);
  spec.granularity = Granularity::per_channel(2);
  EXPECT_THROW(absmax_scales(t, spec), ShapeError);
}

TEST(Qdq, PassThroughLeavesValuesAlone) {
  QuantSpec spec;
  spec.format = NumericFormat::fp32();
  const Tensor t = Tensor::vector({0.1, -1e10, 3.3});
  EXPECT_EQ(qdq(t, spec, ScaleSet{}), t);
}

TEST(Qdq, UnsignedModeClampsNegatives) {
  const Tensor out = qdq_per_tensor(Tensor::vector({-1.0, 0.0, 1.0, 2.0}), kInt4, 1.5,
                                    SignedMode::UnsignedNonNegative);
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 10.0 / 10.0);  // s = 15 / 1.5 = 10
  EXPECT_EQ(out[3], 1.5);
}

TEST(Granularity, StringRoundTrip) {
  for (const auto& g : {Granularity::per_tensor(), Granularity::per_channel(3),
                        Granularity::blocks(64, Orientation::Rows),
                        Granularity::blocks(7, Orientation::Columns)}) {
    EXPECT_EQ(Granularity::parse(g.to_string()), g);
  }
  EXPECT_THROW(Granularity::parse("block:x:rows"), ParseError);
  EXPECT_THROW(Granularity::parse("blob"), ParseError);
  EXPECT_THROW(Granularity::blocks(0, Orientation::Rows), ValueError);
}

TEST(UnitMap, BlockPartitions) {
  // 3x2 matrix, n = 2, columns: blocks {rows 0-1, row 2} per column.
  const auto cols = unit_map({3, 2}, Granularity::blocks(2, Orientation::Columns));
  EXPECT_EQ(cols, (std::vector<std::size_t>{0, 1, 0, 1, 2, 3}));
  EXPECT_EQ(unit_count({3, 2}, Granularity::blocks(2, Orientation::Columns)), 4u);
  const auto rows = unit_map({2, 3}, Granularity::blocks(2, Orientation::Rows));
  EXPECT_EQ(rows, (std::vector<std::size_t>{0, 0, 1, 2, 2, 3}));
}

// Properties over seeded random inputs.

TEST(QdqProperty, SymmetricIntErrorBoundAndSaturation) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> log_alpha(-10.0, 10.0);
  std::uniform_int_distribution<int> bits(2, 16);
  for (int i = 0; i < 20000; ++i) {
    const double alpha = std::exp2(log_alpha(rng));
    const int b = bits(rng);
    const auto f = NumericFormat::integer(b);
    const ScalarQuantizer q(f, alpha);
    const double x = 1.5 * alpha * unit(rng);
    const double y = q(x);
    if (std::fabs(x) <= alpha) {
      EXPECT_LE(std::fabs(y - x), alpha / (2.0 * (std::ldexp(1.0, b - 1) - 1.0)));
    } else {
      EXPECT_EQ(y, std::copysign(alpha, x));
    }
    EXPECT_EQ(q(y), y);
  }
}

TEST(QdqProperty, MonotoneUnderSharedScale) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (const char* name : {"int4", "int8", "e2m1", "e1m2", "e4m3"}) {
    const ScalarQuantizer q(parse_format(name), 2.0);
    for (int i = 0; i < 5000; ++i) {
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      EXPECT_LE(q(a), q(b)) << name;
    }
  }
}

TEST(QdqProperty, IdempotentForEveryGranularity) {
  std::mt19937_64 rng(3);
  std::student_t_distribution<double> heavy(2.0);
  Tensor t({12, 10});
  for (auto& v : t.storage()) v = heavy(rng);
  for (const auto& g : {Granularity::per_tensor(), Granularity::per_channel(0),
                        Granularity::per_channel(1), Granularity::blocks(4, Orientation::Columns),
                        Granularity::blocks(3, Orientation::Rows)}) {
    for (const char* name : {"int4", "e2m1", "e4m3", "bf16"}) {
      QuantSpec spec;
      spec.format = parse_format(name);
      spec.granularity = g;
      const ScaleSet scales = absmax_scales(t, spec);
      const Tensor once = qdq(t, spec, scales);
      EXPECT_EQ(qdq(once, spec, scales), once) << name << " " << g.to_string();
    }
  }
}

TEST(QdqProperty, DequantizedValueWithinHalfStepOfClippedInput) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-4.0, 4.0);
  const double alpha = 2.5;
  for (int b : {3, 4, 8}) {
    const double s = scale_from_alpha(alpha, NumericFormat::integer(b));
    for (int i = 0; i < 2000; ++i) {
      const double x = u(rng);
      const double back = dequantize(quantize_int(x, s, b), s);
      EXPECT_LE(std::fabs(back - std::clamp(x, -alpha, alpha)), 0.5 / s + 1e-15);
    }
  }
}

}  // namespace
}  // namespace qsim
