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

// Simulated quantization: scales, quantize, dequantize and the fused
// quantize-dequantize (QDQ) applied throughout the simulator.
//
// A clip threshold `alpha` maps onto the top level of the format. For a
// symmetric b-bit integer format the multiplier is s = (2^(b-1)-1)/alpha and
// values are rounded half-to-even onto [-(2^(b-1)-1), 2^(b-1)-1]; the
// non-negative mode uses s = (2^b-1)/alpha over [0, 2^b-1]. Float formats use
// s = max_finite/alpha and round through round_to_format.

#ifndef QSIM_QUANT_HPP_
#define QSIM_QUANT_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/formats.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

enum class SignedMode { Symmetric, UnsignedNonNegative };
enum class CalibrationMethod { AbsMax, StaticMax, MSE };
enum class ScaleStorage { FullPrecision, BF16 };
enum class Orientation { Columns, Rows };

/// Clip threshold used for all-zero channels and blocks. Any positive value
/// maps zeros to zero; this one is the smallest fp32 normal.
inline constexpr double kDegenerateAlpha = static_cast<double>(std::numeric_limits<float>::min());

struct Granularity {
  enum class Kind { PerTensor, PerChannel, Block };

  Kind kind = Kind::PerTensor;
  std::size_t axis = 0;   // PerChannel
  std::size_t block = 0;  // Block: vector length n
  Orientation orientation = Orientation::Columns;

  static Granularity per_tensor() { return {}; }
  static Granularity per_channel(std::size_t axis) { return {Kind::PerChannel, axis, 0, {}}; }
  static Granularity blocks(std::size_t n, Orientation o) {
    if (n < 1) throw ValueError("block length must be >= 1");
    return {Kind::Block, 0, n, o};
  }

  std::string to_string() const {
    switch (kind) {
      case Kind::PerTensor:
        return "tensor";
      case Kind::PerChannel:
        return "channel:" + std::to_string(axis);
      case Kind::Block:
        return "block:" + std::to_string(block) + ":" +
               (orientation == Orientation::Columns ? "columns" : "rows");
    }
    return "?";
  }

  static Granularity parse(const std::string& s) {
    if (s == "tensor") return per_tensor();
    try {
      if (s.rfind("channel:", 0) == 0) return per_channel(std::stoul(s.substr(8)));
      if (s.rfind("block:", 0) == 0) {
        const auto colon = s.find(':', 6);
        if (colon != std::string::npos) {
          const std::size_t n = std::stoul(s.substr(6, colon - 6));
          const std::string o = s.substr(colon + 1);
          if (o == "columns") return blocks(n, Orientation::Columns);
          if (o == "rows") return blocks(n, Orientation::Rows);
        }
      }
    } catch (const std::logic_error&) {
      // fall through to the error below
    }
    throw ParseError("bad granularity '" + s + "'", 0);
  }

  friend bool operator==(const Granularity&, const Granularity&) = default;
};

struct QuantSpec {
  NumericFormat format = NumericFormat::integer(8);
  Granularity granularity;
  CalibrationMethod calibration = CalibrationMethod::AbsMax;
  ScaleStorage scale_storage = ScaleStorage::FullPrecision;
  SignedMode signed_mode = SignedMode::Symmetric;

  bool is_passthrough() const { return format.is_passthrough(); }
};

/// Calibrated clip thresholds, one per granularity unit.
struct ScaleSet {
  Granularity granularity;
  std::vector<double> alphas;
};

// ---------------------------------------------------------------------------
// Scalar primitives

inline double level_count(const NumericFormat& format, SignedMode mode) {
  if (format.is_integer()) {
    return mode == SignedMode::Symmetric ? std::ldexp(1.0, format.bits - 1) - 1.0
                                         : std::ldexp(1.0, format.bits) - 1.0;
  }
  return format.max_finite();
}

inline double scale_from_alpha(double alpha, const NumericFormat& format,
                               SignedMode mode = SignedMode::Symmetric) {
  if (!(alpha > 0.0)) {
    throw ValueError("clip threshold alpha must be positive, got " + std::to_string(alpha));
  }
  return level_count(format, mode) / alpha;
}

inline std::int64_t quantize_int(double x, double s, int bits,
                                 SignedMode mode = SignedMode::Symmetric) {
  const double hi = mode == SignedMode::Symmetric ? std::ldexp(1.0, bits - 1) - 1.0
                                                  : std::ldexp(1.0, bits) - 1.0;
  const double lo = mode == SignedMode::Symmetric ? -hi : 0.0;
  return static_cast<std::int64_t>(std::clamp(std::nearbyint(s * x), lo, hi));
}

inline double dequantize(std::int64_t q, double s) {
  if (!(s > 0.0)) throw ValueError("scale must be positive");
  return static_cast<double>(q) / s;
}

/// QDQ for one clip threshold. Precomputes the multiplier so a unit of
/// elements can share it.
class ScalarQuantizer {
 public:
  ScalarQuantizer(const NumericFormat& format, double alpha,
                  SignedMode mode = SignedMode::Symmetric)
      : format_(format), alpha_(alpha), mode_(mode) {
    if (format_.is_unscaled()) return;
    if (!(alpha > 0.0) || !std::isfinite(alpha)) {
      throw ValueError("clip threshold must be positive and finite, got " +
                       std::to_string(alpha));
    }
    top_ = level_count(format_, mode_);
    scale_ = top_ / alpha_;
  }

  double alpha() const { return alpha_; }
  double scale() const { return scale_; }

  double operator()(double x) const {
    if (format_.is_unscaled()) return round_to_format(x, format_);
    const double lo = mode_ == SignedMode::Symmetric ? -alpha_ : 0.0;
    const double clipped = std::clamp(x, lo, alpha_);
    double level;
    if (format_.is_integer()) {
      level = std::clamp(std::nearbyint(clipped * scale_), mode_ == SignedMode::Symmetric ? -top_ : 0.0,
                         top_);
    } else {
      level = round_to_format(clipped * scale_, format_);
    }
    // The top level is the clip threshold itself.
    if (std::fabs(level) == top_) return std::copysign(alpha_, level);
    return level / scale_;
  }

  /// Straight-through mask: gradient passes where |x| <= alpha.
  bool passes(double x) const {
    if (format_.is_unscaled()) return true;
    return std::fabs(x) <= alpha_;
  }

 private:
  NumericFormat format_;
  double alpha_ = 1.0;
  SignedMode mode_ = SignedMode::Symmetric;
  double top_ = 1.0;
  double scale_ = 1.0;
};

// ---------------------------------------------------------------------------
// Granularity partitions

/// Number of granularity units `g` splits a tensor of `shape` into.
inline std::size_t unit_count(const Shape& shape, const Granularity& g) {
  switch (g.kind) {
    case Granularity::Kind::PerTensor:
      return 1;
    case Granularity::Kind::PerChannel:
      if (g.axis >= shape.size()) {
        throw ShapeError("channel axis " + std::to_string(g.axis) + " out of range for " +
                         shape_string(shape));
      }
      return shape[g.axis];
    case Granularity::Kind::Block: {
      const std::size_t cols = shape.size() <= 1 ? 1 : shape.back();
      const std::size_t rows = cols == 0 ? 0 : shape_numel(shape) / cols;
      const std::size_t n = g.block;
      if (g.orientation == Orientation::Columns) return ((rows + n - 1) / n) * cols;
      return rows * ((cols + n - 1) / n);
    }
  }
  return 1;
}

/// unit index of every element, in storage order.
inline std::vector<std::size_t> unit_map(const Shape& shape, const Granularity& g) {
  const std::size_t total = shape_numel(shape);
  std::vector<std::size_t> map(total, 0);
  switch (g.kind) {
    case Granularity::Kind::PerTensor:
      break;
    case Granularity::Kind::PerChannel: {
      if (g.axis >= shape.size()) {
        throw ShapeError("channel axis " + std::to_string(g.axis) + " out of range for " +
                         shape_string(shape));
      }
      std::size_t stride = 1;
      for (std::size_t a = g.axis + 1; a < shape.size(); ++a) stride *= shape[a];
      for (std::size_t i = 0; i < total; ++i) map[i] = (i / stride) % shape[g.axis];
      break;
    }
    case Granularity::Kind::Block: {
      // Rank-1 tensors are a single column; higher ranks fold leading axes
      // into rows.
      const std::size_t cols = shape.size() <= 1 ? 1 : shape.back();
      const std::size_t n = g.block;
      const std::size_t blocks_per_row = (cols + n - 1) / n;
      for (std::size_t i = 0; i < total; ++i) {
        const std::size_t r = i / cols, c = i % cols;
        map[i] = g.orientation == Orientation::Columns ? (r / n) * cols + c
                                                       : r * blocks_per_row + c / n;
      }
      break;
    }
  }
  return map;
}

/// Per-unit max |x|.
inline std::vector<double> unit_abs_max(const Tensor& t, const Granularity& g) {
  const auto map = unit_map(t.shape(), g);
  std::vector<double> maxes(unit_count(t.shape(), g), 0.0);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    maxes[map[i]] = std::max(maxes[map[i]], std::fabs(t[i]));
  }
  return maxes;
}

/// Turn raw per-unit maxima into stored clip thresholds: zero units get
/// kDegenerateAlpha, BF16 storage rounds upward so nothing inside a unit
/// clips.
inline ScaleSet make_scale_set(const Granularity& g, std::vector<double> maxes,
                               ScaleStorage storage) {
  for (double& a : maxes) {
    if (!(a > 0.0)) a = kDegenerateAlpha;
    if (storage == ScaleStorage::BF16) a = round_to_bf16_up(a);
  }
  return ScaleSet{g, std::move(maxes)};
}

/// Dynamic abs-max scales for `t` under `spec`.
inline ScaleSet absmax_scales(const Tensor& t, const QuantSpec& spec) {
  return make_scale_set(spec.granularity, unit_abs_max(t, spec.granularity), spec.scale_storage);
}

/// Quantize-dequantize `t` with one clip threshold per granularity unit.
inline Tensor qdq(const Tensor& t, const QuantSpec& spec, const ScaleSet& scales) {
  if (spec.is_passthrough()) return t;
  if (!(scales.granularity == spec.granularity)) {
    throw ShapeError("scale granularity " + scales.granularity.to_string() +
                     " does not match spec granularity " + spec.granularity.to_string());
  }
  const std::size_t units = unit_count(t.shape(), spec.granularity);
  if (scales.alphas.size() != units) {
    throw ShapeError("expected " + std::to_string(units) + " scales for " +
                     shape_string(t.shape()) + " under " + spec.granularity.to_string() +
                     ", got " + std::to_string(scales.alphas.size()));
  }
  std::vector<ScalarQuantizer> quantizers;
  quantizers.reserve(units);
  for (double a : scales.alphas) {
    if (!spec.format.is_unscaled() && !(a > 0.0)) {
      throw ValueError("nonpositive scale " + std::to_string(a) + " in scale set");
    }
    quantizers.emplace_back(spec.format, a, spec.signed_mode);
  }
  Tensor out(t.shape());
  if (units == 1) {
    const auto& q = quantizers.front();
    for (std::size_t i = 0; i < t.numel(); ++i) out[i] = q(t[i]);
    return out;
  }
  const auto map = unit_map(t.shape(), spec.granularity);
  for (std::size_t i = 0; i < t.numel(); ++i) out[i] = quantizers[map[i]](t[i]);
  return out;
}

/// Elementwise straight-through mask 1{|x| <= alpha_unit} (1.0 or 0.0).
inline Tensor pass_mask(const Tensor& t, const QuantSpec& spec, const ScaleSet& scales) {
  Tensor mask(t.shape(), 1.0);
  if (spec.is_passthrough() || spec.format.is_unscaled()) return mask;
  const auto map = unit_map(t.shape(), spec.granularity);
  for (std::size_t i = 0; i < t.numel(); ++i) {
    mask[i] = std::fabs(t[i]) <= scales.alphas.at(map[i]) ? 1.0 : 0.0;
  }
  return mask;
}

/// Per-tensor QDQ with a single threshold.
inline Tensor qdq_per_tensor(const Tensor& t, const NumericFormat& format, double alpha,
                             SignedMode mode = SignedMode::Symmetric) {
  QuantSpec spec;
  spec.format = format;
  spec.signed_mode = mode;
  return qdq(t, spec, ScaleSet{Granularity::per_tensor(), {alpha}});
}

}  // namespace qsim

#endif  // QSIM_QUANT_HPP_
