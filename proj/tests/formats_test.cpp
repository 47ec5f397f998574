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

#include "qsim/formats.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "oracles.hpp"

namespace qsim {
namespace {

std::vector<double> positive_half(const ValueTable& t) {
  std::vector<double> out;
  for (double v : t.values)
    if (v >= 0.0) out.push_back(v);
  return out;
}

TEST(Enumerate, E2M1HasSixteenCodesAndFifteenValues) {
  const auto table = enumerate(NumericFormat::e2m1());
  EXPECT_EQ(positive_half(table), (std::vector<double>{0, 0.5, 1, 1.5, 2, 3, 4, 6}));
  EXPECT_EQ(table.size(), 15u);  // +0 and -0 collapse
  EXPECT_EQ(NumericFormat::e2m1().max_finite(), 6.0);
}

TEST(Enumerate, E1M2UsesBiasZero) {
  const auto f = NumericFormat::e1m2();
  EXPECT_EQ(f.bias, 0);
  EXPECT_EQ(positive_half(enumerate(f)),
            (std::vector<double>{0, 0.5, 1, 1.5, 2, 2.5, 3, 3.5}));
}

TEST(Enumerate, E4M3TopsOutAt448) {
  const auto table = enumerate(NumericFormat::e4m3());
  EXPECT_EQ(table.values.back(), 448.0);
  EXPECT_EQ(table.values.front(), -448.0);
  // 256 codes, minus the two NaN codes, minus the duplicate zero.
  EXPECT_EQ(table.size(), 253u);
  EXPECT_EQ(table.values[table.size() / 2 + 1], std::ldexp(1.0, -9));  // smallest subnormal
}

TEST(Enumerate, SymmetricInt4) {
  const auto table = enumerate(NumericFormat::integer(4));
  ASSERT_EQ(table.size(), 15u);
  for (int i = 0; i < 15; ++i) EXPECT_EQ(table.values[i], i - 7.0);
}

TEST(Enumerate, RejectsWideFormats) {
  EXPECT_THROW(enumerate(NumericFormat::integer(17)), ValueError);
  EXPECT_THROW(enumerate(NumericFormat::fp32()), ValueError);
  EXPECT_NO_THROW(enumerate(NumericFormat::bf16()));
}

TEST(Enumerate, TableIsSortedSymmetricWithZero) {
  for (const char* name : {"int2", "int8", "e2m1", "e1m2", "e4m3", "e3m2", "e5m2", "e2m3b3"}) {
    const auto t = enumerate(parse_format(name));
    EXPECT_TRUE(std::is_sorted(t.values.begin(), t.values.end()));
    EXPECT_EQ(std::adjacent_find(t.values.begin(), t.values.end()), t.values.end()) << name;
    EXPECT_TRUE(std::binary_search(t.values.begin(), t.values.end(), 0.0));
    for (std::size_t i = 0; i < t.size(); ++i) {
      EXPECT_EQ(t.values[i], -t.values[t.size() - 1 - i]) << name;
    }
    EXPECT_EQ(t.values.back(), t.format.max_finite()) << name;
  }
}

TEST(RoundToFormat, E2M1Examples) {
  const auto f = NumericFormat::e2m1();
  EXPECT_EQ(round_to_format(0.7, f), 0.5);
  EXPECT_EQ(round_to_format(5.1, f), 6.0);
  EXPECT_EQ(round_to_format(0.0, f), 0.0);
  EXPECT_EQ(round_to_format(1000.0, f), 6.0);
  EXPECT_EQ(round_to_format(-1000.0, f), -6.0);
  // Ties: 5 sits between 4 (mantissa 0) and 6 (mantissa 1).
  EXPECT_EQ(round_to_format(5.0, f), 4.0);
  EXPECT_EQ(round_to_format(0.25, f), 0.0);
  EXPECT_EQ(round_to_format(0.75, f), 1.0);
}

TEST(RoundToFormat, E4M3SaturatesPastReservedCode) {
  const auto f = NumericFormat::e4m3();
  EXPECT_EQ(round_to_format(464.0, f), 448.0);
  EXPECT_EQ(round_to_format(470.0, f), 448.0);
  EXPECT_EQ(round_to_format(1e6, f), 448.0);
}

TEST(RoundToFormat, IntegerRoundsHalfToEven) {
  const auto f = NumericFormat::integer(4);
  EXPECT_EQ(round_to_format(2.5, f), 2.0);
  EXPECT_EQ(round_to_format(3.5, f), 4.0);
  EXPECT_EQ(round_to_format(-6.5, f), -6.0);
  EXPECT_EQ(round_to_format(9.0, f), 7.0);
}

TEST(RoundToFormat, WithoutSubnormalsFlushesBelowHalfMinNormal) {
  auto f = NumericFormat::e2m1();
  f.supports_subnormals = false;
  EXPECT_EQ(round_to_format(0.4, f), 0.0);
  EXPECT_EQ(round_to_format(0.6, f), 1.0);
  const auto table = enumerate(f);
  for (double x : testing::format_probes(table, 3000, 5)) {
    EXPECT_EQ(round_to_format(x, f), testing::nearest_in_table(x, table)) << x;
  }
}

TEST(RoundToFormat, Fp32IsPassThrough) {
  EXPECT_EQ(round_to_format(0.1, NumericFormat::fp32()), 0.1);
}

TEST(RoundToBf16, Examples) {
  EXPECT_EQ(round_to_bf16(2.0), 2.0);
  EXPECT_EQ(round_to_bf16(1.0 + std::ldexp(1.0, -8)), 1.0);
  EXPECT_EQ(round_to_bf16(1.0 + 3 * std::ldexp(1.0, -8)), 1.0 + std::ldexp(1.0, -6));
  EXPECT_EQ(round_to_bf16(-3.0), -3.0);
}

TEST(RoundToBf16, UpwardIsSmallestBf16NotBelow) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> mag(-30.0, 30.0);
  for (int i = 0; i < 5000; ++i) {
    const double x = std::exp2(mag(rng));
    const double up = round_to_bf16_up(x);
    EXPECT_GE(up, x);
    EXPECT_EQ(round_to_bf16(up), up);
    EXPECT_LE(up, x * (1.0 + std::ldexp(1.0, -7)));
    // The bf16 value one code below `up` is already below x.
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(up));
    const float prev = std::bit_cast<float>(((bits >> 16) - 1) << 16);
    EXPECT_LT(static_cast<double>(prev), x);
  }
}

TEST(RoundToFormat, AgreesWithTableOracle) {
  for (const char* name : {"int4", "int8", "e2m1", "e1m2", "e4m3", "e3m2", "e2m3b2"}) {
    const auto f = parse_format(name);
    const auto table = enumerate(f);
    for (double x : testing::format_probes(table, 20000, 42)) {
      ASSERT_EQ(round_to_format(x, f), testing::nearest_in_table(x, table))
          << name << " x=" << x;
    }
  }
}

TEST(RoundToFormat, IdempotentFixedPointsAndOddSymmetry) {
  for (const char* name : {"int3", "e2m1", "e1m2", "e4m3", "e5m2"}) {
    const auto f = parse_format(name);
    const auto table = enumerate(f);
    for (double v : table.values) EXPECT_EQ(round_to_format(v, f), v) << name;
    for (double x : testing::format_probes(table, 5000, 7)) {
      const double r = round_to_format(x, f);
      EXPECT_EQ(round_to_format(r, f), r);
      EXPECT_EQ(round_to_format(-x, f), -r);
    }
  }
}

TEST(ParseFormat, KnownNames) {
  EXPECT_EQ(parse_format("int4"), NumericFormat::integer(4));
  EXPECT_EQ(parse_format("INT8"), NumericFormat::integer(8));
  EXPECT_EQ(parse_format("e2m1"), NumericFormat::e2m1());
  EXPECT_EQ(parse_format("e1m2"), NumericFormat::e1m2());
  EXPECT_EQ(parse_format("e4m3"), NumericFormat::e4m3());
  EXPECT_EQ(parse_format("bf16"), NumericFormat::bf16());
  EXPECT_TRUE(parse_format("fp32").is_passthrough());
  const auto f = parse_format("e3m4b5");
  EXPECT_EQ(f.bias, 5);
  EXPECT_EQ(f.name(), "e3m4b5");
  EXPECT_EQ(parse_format("e3m2b-1").bias, -1);
}

TEST(ParseFormat, NamesRoundTrip) {
  for (const char* name : {"int2", "int16", "e2m1", "e4m3", "e5m10", "bf16", "fp32", "e3m3b1"}) {
    EXPECT_EQ(parse_format(name).name(), name);
  }
}

TEST(ParseFormat, ErrorsCarryPosition) {
  try {
    parse_format("e4x3");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 2u);
  }
  try {
    parse_format("int4z");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.position(), 4u);
  }
  EXPECT_THROW(parse_format(""), ParseError);
  EXPECT_THROW(parse_format("float8"), ParseError);
  EXPECT_THROW(parse_format("int1"), ParseError);
  EXPECT_THROW(parse_format("int"), ParseError);
  EXPECT_THROW(parse_format("e0m3"), ParseError);
  EXPECT_THROW(parse_format("e20m20"), ParseError);
}

}  // namespace
}  // namespace qsim
