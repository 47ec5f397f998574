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

// Integer and ExMy floating-point number formats, emulated on doubles.
//
// Only the set of representable values matters here; nothing is ever packed
// into bits. Float formats follow an IEEE-like layout with an implicit leading
// one, bias 2^(E-1)-1 unless overridden, and gradual underflow. Narrow formats
// have no infinities and saturate on overflow. The 8-bit-and-wider ExMy
// formats additionally reserve the all-ones exponent/all-ones mantissa code
// for NaN, which makes e4m3 top out at 448.

#ifndef QSIM_FORMATS_HPP_
#define QSIM_FORMATS_HPP_

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "qsim/error.hpp"

namespace qsim {

enum class FormatKind { Integer, Float };

struct NumericFormat {
  FormatKind kind = FormatKind::Integer;
  int bits = 8;       // Integer: total width including sign.
  int exp_bits = 0;   // Float
  int mant_bits = 0;  // Float
  int bias = 0;       // Float
  bool finite_only = true;
  bool supports_subnormals = true;
  // Float only: the all-ones exponent + all-ones mantissa code is NaN.
  bool reserve_nan_code = false;

  static NumericFormat integer(int bits) {
    if (bits < 2 || bits > 32) {
      throw ValueError("integer format width must be in [2, 32], got " +
                       std::to_string(bits));
    }
    NumericFormat f;
    f.kind = FormatKind::Integer;
    f.bits = bits;
    return f;
  }

  static int default_bias(int exp_bits) { return (1 << (exp_bits - 1)) - 1; }

  static NumericFormat floating(int exp_bits, int mant_bits) {
    return floating(exp_bits, mant_bits, default_bias(std::max(exp_bits, 1)));
  }

  static NumericFormat floating(int exp_bits, int mant_bits, int bias) {
    if (exp_bits < 1 || mant_bits < 1 || 1 + exp_bits + mant_bits > 32) {
      throw ValueError("float format needs E >= 1, M >= 1 and 1+E+M <= 32, got e" +
                       std::to_string(exp_bits) + "m" + std::to_string(mant_bits));
    }
    NumericFormat f;
    f.kind = FormatKind::Float;
    f.bits = 1 + exp_bits + mant_bits;
    f.exp_bits = exp_bits;
    f.mant_bits = mant_bits;
    f.bias = bias;
    f.finite_only = true;
    f.reserve_nan_code = f.bits >= 8;
    return f;
  }

  static NumericFormat e2m1() { return floating(2, 1); }
  static NumericFormat e1m2() { return floating(1, 2); }
  static NumericFormat e4m3() { return floating(4, 3); }

  static NumericFormat bf16() {
    NumericFormat f = floating(8, 7);
    f.finite_only = false;
    f.reserve_nan_code = false;
    return f;
  }

  static NumericFormat fp32() {
    NumericFormat f = floating(8, 23);
    f.finite_only = false;
    f.reserve_nan_code = false;
    return f;
  }

  bool is_integer() const { return kind == FormatKind::Integer; }
  bool is_float() const { return kind == FormatKind::Float; }

  /// fp32 on this engine means "leave the value alone".
  bool is_passthrough() const {
    return is_float() && exp_bits == 8 && mant_bits == 23 && !finite_only;
  }

  /// Formats with an 8-bit exponent are applied directly, without a clip
  /// threshold or scale.
  bool is_unscaled() const { return is_float() && exp_bits >= 8; }

  /// Largest representable exponent field that still encodes finite values.
  int top_exponent_field() const {
    const int all_ones = (1 << exp_bits) - 1;
    return finite_only ? all_ones : all_ones - 1;
  }

  /// Largest finite magnitude.
  double max_finite() const {
    if (is_integer()) return static_cast<double>((std::int64_t{1} << (bits - 1)) - 1);
    const int top = top_exponent_field();
    std::int64_t mant = (std::int64_t{1} << mant_bits) - 1;
    if (finite_only && reserve_nan_code) mant -= 1;
    if (top == 0) return std::ldexp(static_cast<double>(mant), 1 - bias - mant_bits);
    return std::ldexp(static_cast<double>((std::int64_t{1} << mant_bits) + mant),
                      top - bias - mant_bits);
  }

  /// Smallest positive normal (1 for integers).
  double min_normal() const {
    if (is_integer()) return 1.0;
    return std::ldexp(1.0, 1 - bias);
  }

  std::string name() const {
    if (is_integer()) return "int" + std::to_string(bits);
    if (exp_bits == 8 && mant_bits == 7 && !finite_only) return "bf16";
    if (is_passthrough()) return "fp32";
    std::string s = "e" + std::to_string(exp_bits) + "m" + std::to_string(mant_bits);
    if (bias != default_bias(exp_bits)) s += "b" + std::to_string(bias);
    return s;
  }

  friend bool operator==(const NumericFormat&, const NumericFormat&) = default;
};

namespace detail {

inline double round_float_magnitude(double a, const NumericFormat& f) {
  const int emin = 1 - f.bias;
  const double min_norm = std::ldexp(1.0, emin);
  if (!f.supports_subnormals && a < min_norm) {
    return a > 0.5 * min_norm ? min_norm : 0.0;
  }
  int k = 0;
  std::frexp(a, &k);
  const int e = std::max(k - 1, emin);
  // a * 2^(M-e) is exact in binary; nearbyint rounds half to even.
  double r = std::ldexp(std::nearbyint(std::ldexp(a, f.mant_bits - e)), e - f.mant_bits);
  const double max = f.max_finite();
  if (r > max) {
    r = f.finite_only ? max : std::numeric_limits<double>::infinity();
  }
  return r;
}

}  // namespace detail

/// Nearest representable value of `format`, ties to even. Finite-only
/// formats saturate to +-max_finite.
inline double round_to_format(double x, const NumericFormat& format) {
  if (x == 0.0) return 0.0;
  if (format.is_integer()) {
    const double q = format.max_finite();
    return std::clamp(std::nearbyint(x), -q, q);
  }
  if (format.is_passthrough()) return x;
  return std::copysign(detail::round_float_magnitude(std::fabs(x), format), x);
}

/// Round to bfloat16 (8-bit significand), nearest-even.
inline double round_to_bf16(double x) { return round_to_format(x, NumericFormat::bf16()); }

/// Smallest bfloat16 value >= x, for x >= 0.
inline double round_to_bf16_up(double x) {
  if (x <= 0.0) return 0.0;
  constexpr int kMant = 7;
  constexpr int kEmin = -126;
  int k = 0;
  std::frexp(x, &k);
  const int e = std::max(k - 1, kEmin);
  return std::ldexp(std::ceil(std::ldexp(x, kMant - e)), e - kMant);
}

/// Every finite value of a (narrow) format in ascending order.
struct ValueTable {
  NumericFormat format;
  std::vector<double> values;
  // even_code[i]: the value's mantissa (or integer) LSB is zero. Used to
  // break rounding ties without reference to the rounding arithmetic.
  std::vector<bool> even_code;

  std::size_t size() const { return values.size(); }
};

inline constexpr std::size_t kMaxEnumerable = std::size_t{1} << 16;

inline ValueTable enumerate(const NumericFormat& format) {
  if (format.bits > 16) {
    throw ValueError("format " + format.name() +
                     " is too wide to enumerate (width-too-large, max 16 bits)");
  }
  struct Entry {
    double value;
    bool even;
  };
  std::vector<Entry> entries;
  if (format.is_integer()) {
    const auto q = static_cast<std::int64_t>(format.max_finite());
    for (std::int64_t v = -q; v <= q; ++v) {
      entries.push_back({static_cast<double>(v), v % 2 == 0});
    }
  } else {
    const int exp_count = 1 << format.exp_bits;
    const int mant_count = 1 << format.mant_bits;
    for (int ef = 0; ef < exp_count; ++ef) {
      if (ef > format.top_exponent_field()) continue;
      for (int m = 0; m < mant_count; ++m) {
        if (format.finite_only && format.reserve_nan_code && ef == exp_count - 1 &&
            m == mant_count - 1) {
          continue;
        }
        double v;
        if (ef == 0) {
          if (!format.supports_subnormals && m != 0) continue;
          v = std::ldexp(static_cast<double>(m), 1 - format.bias - format.mant_bits);
        } else {
          v = std::ldexp(static_cast<double>(mant_count + m),
                         ef - format.bias - format.mant_bits);
        }
        entries.push_back({v, m % 2 == 0});
        if (v != 0.0) entries.push_back({-v, m % 2 == 0});
      }
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.value < b.value; });
  ValueTable table{format, {}, {}};
  table.values.reserve(entries.size());
  table.even_code.reserve(entries.size());
  for (const auto& e : entries) {
    table.values.push_back(e.value);
    table.even_code.push_back(e.even);
  }
  return table;
}

namespace detail {

inline int parse_int_at(std::string_view s, std::size_t& pos, std::string_view whole,
                        std::size_t offset) {
  int value = 0;
  const char* begin = s.data() + pos;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr == begin) {
    throw ParseError("expected a number in format string '" + std::string(whole) + "'",
                     offset + pos);
  }
  pos += static_cast<std::size_t>(ptr - begin);
  return value;
}

}  // namespace detail

/// Parse "int<b>", "e<E>m<M>[b<bias>]", "bf16" or "fp32". Case-insensitive.
inline NumericFormat parse_format(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s.empty()) throw ParseError("empty format string", 0);
  if (s == "bf16") return NumericFormat::bf16();
  if (s == "fp32") return NumericFormat::fp32();

  std::size_t pos = 0;
  if (s.rfind("int", 0) == 0) {
    pos = 3;
    const int b = detail::parse_int_at(s, pos, text, 0);
    if (pos != s.size()) {
      throw ParseError("unexpected '" + s.substr(pos) + "' in format string '" +
                           std::string(text) + "'",
                       pos);
    }
    try {
      return NumericFormat::integer(b);
    } catch (const ValueError& e) {
      throw ParseError(e.what(), 3);
    }
  }
  if (s[0] == 'e') {
    pos = 1;
    const int e = detail::parse_int_at(s, pos, text, 0);
    if (pos >= s.size() || s[pos] != 'm') {
      throw ParseError("expected 'm' in format string '" + std::string(text) + "'", pos);
    }
    ++pos;
    const int m = detail::parse_int_at(s, pos, text, 0);
    bool has_bias = false;
    int bias = 0;
    if (pos < s.size()) {
      if (s[pos] != 'b') {
        throw ParseError("unexpected '" + s.substr(pos) + "' in format string '" +
                             std::string(text) + "'",
                         pos);
      }
      ++pos;
      const bool negative = pos < s.size() && s[pos] == '-';
      if (negative) ++pos;
      bias = detail::parse_int_at(s, pos, text, 0);
      if (negative) bias = -bias;
      has_bias = true;
      if (pos != s.size()) {
        throw ParseError("unexpected '" + s.substr(pos) + "' in format string '" +
                             std::string(text) + "'",
                         pos);
      }
    }
    try {
      return has_bias ? NumericFormat::floating(e, m, bias) : NumericFormat::floating(e, m);
    } catch (const ValueError& err) {
      throw ParseError(err.what(), 1);
    }
  }
  throw ParseError("unknown format '" + std::string(text) +
                       "' (expected int<b>, e<E>m<M>[b<bias>], bf16 or fp32)",
                   0);
}

}  // namespace qsim

#endif  // QSIM_FORMATS_HPP_
