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

// Clip-threshold selection: running abs-max observers, reservoir-sampled MSE
// grid search and per-channel weight maxima.

#ifndef QSIM_CALIBRATION_HPP_
#define QSIM_CALIBRATION_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/formats.hpp"
#include "qsim/quant.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

inline constexpr std::size_t kDefaultMseGrid = 2048;
inline constexpr std::size_t kDefaultSampleCap = std::size_t{1} << 20;

/// Mean squared QDQ error of `samples` under a per-tensor threshold.
inline double qdq_mse(std::span<const double> samples, const NumericFormat& format, double alpha,
                      SignedMode mode = SignedMode::Symmetric) {
  if (samples.empty()) return 0.0;
  const ScalarQuantizer q(format, alpha, mode);
  double acc = 0.0;
  for (double x : samples) {
    const double d = q(x) - x;
    acc += d * d;
  }
  return acc / static_cast<double>(samples.size());
}

/// Threshold minimizing QDQ mean squared error over the linear grid
/// {k/grid_size * absmax : k = 1..grid_size}. Ties go to the larger alpha.
inline double calibrate_mse(std::span<const double> samples, const NumericFormat& format,
                            std::size_t grid_size = kDefaultMseGrid,
                            SignedMode mode = SignedMode::Symmetric) {
  if (samples.empty()) throw ValueError("MSE calibration needs at least one sample");
  if (grid_size < 2) throw ValueError("MSE calibration grid needs at least 2 points");
  const double top = max_abs(samples);
  if (!(top > 0.0)) return kDegenerateAlpha;
  if (format.is_unscaled()) return top;
  double best_alpha = top;
  double best_mse = std::numeric_limits<double>::infinity();
  const double g = static_cast<double>(grid_size);
  for (std::size_t k = grid_size; k >= 1; --k) {
    const double alpha = k == grid_size ? top : static_cast<double>(k) / g * top;
    const double mse = qdq_mse(samples, format, alpha, mode);
    if (mse < best_mse) {
      best_mse = mse;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

inline double calibrate_mse(const Tensor& samples, const NumericFormat& format,
                            std::size_t grid_size = kDefaultMseGrid,
                            SignedMode mode = SignedMode::Symmetric) {
  return calibrate_mse(samples.values(), format, grid_size, mode);
}

/// One threshold per output channel: alpha = max |w| over the channel slice.
inline ScaleSet weights_per_channel_max(const Tensor& w, std::size_t out_axis = 0,
                                        ScaleStorage storage = ScaleStorage::FullPrecision) {
  if (w.rank() != 2 && w.rank() != 4) {
    throw ShapeError("per-channel weight calibration needs a 2-D or 4-D tensor, got " +
                     shape_string(w.shape()));
  }
  const auto g = Granularity::per_channel(out_axis);
  return make_scale_set(g, unit_abs_max(w, g), storage);
}

/// Accumulates calibration statistics over a stream of tensors.
///
/// Running maxima are kept per granularity unit. The MSE method also keeps
/// a uniform reservoir of at most `sample_cap` elements.
class CalibrationObserver {
 public:
  explicit CalibrationObserver(CalibrationMethod method,
                               Granularity granularity = Granularity::per_tensor(),
                               std::size_t sample_cap = kDefaultSampleCap, std::uint64_t seed = 0)
      : method_(method), granularity_(granularity), sample_cap_(sample_cap), rng_(seed) {
    if (method == CalibrationMethod::MSE && granularity.kind != Granularity::Kind::PerTensor) {
      throw ValueError("MSE calibration supports per-tensor granularity only");
    }
  }

  void observe(const Tensor& t) {
    if (!t.all_finite()) throw ValueError("calibration input contains non-finite values");
    const auto maxes = unit_abs_max(t, granularity_);
    if (running_max_.empty()) {
      running_max_.assign(maxes.size(), 0.0);
    } else if (running_max_.size() != maxes.size()) {
      throw ShapeError("observer has " + std::to_string(running_max_.size()) +
                       " units but tensor " + shape_string(t.shape()) + " yields " +
                       std::to_string(maxes.size()));
    }
    for (std::size_t i = 0; i < maxes.size(); ++i) {
      running_max_[i] = std::max(running_max_[i], maxes[i]);
    }
    if (method_ == CalibrationMethod::MSE) {
      for (double v : t.values()) reservoir_add(v);
    }
    seen_ += t.numel();
  }

  /// Combine statistics of another shard.
  void merge(const CalibrationObserver& other) {
    if (other.method_ != method_ || !(other.granularity_ == granularity_)) {
      throw ValueError("cannot merge observers with different method or granularity");
    }
    if (running_max_.empty()) {
      running_max_ = other.running_max_;
    } else if (!other.running_max_.empty()) {
      if (other.running_max_.size() != running_max_.size()) {
        throw ShapeError("cannot merge observers with different unit counts");
      }
      for (std::size_t i = 0; i < running_max_.size(); ++i) {
        running_max_[i] = std::max(running_max_[i], other.running_max_[i]);
      }
    }
    if (method_ == CalibrationMethod::MSE) merge_reservoir(other);
    seen_ += other.seen_;
  }

  CalibrationMethod method() const { return method_; }
  const Granularity& granularity() const { return granularity_; }
  const std::vector<double>& running_max() const { return running_max_; }
  std::span<const double> samples() const { return samples_; }
  std::size_t seen() const { return seen_; }
  std::size_t sample_cap() const { return sample_cap_; }

  /// Final thresholds for `format`.
  ScaleSet finalize(const NumericFormat& format, SignedMode mode = SignedMode::Symmetric,
                    ScaleStorage storage = ScaleStorage::FullPrecision,
                    std::size_t grid_size = kDefaultMseGrid) const {
    if (running_max_.empty()) throw ValueError("observer has seen no data");
    if (method_ == CalibrationMethod::MSE) {
      const double alpha = calibrate_mse(samples_, format, grid_size, mode);
      return make_scale_set(granularity_, {alpha}, storage);
    }
    return make_scale_set(granularity_, running_max_, storage);
  }

 private:
  void reservoir_add(double v) {
    ++stream_pos_;
    if (samples_.size() < sample_cap_) {
      samples_.push_back(v);
      return;
    }
    std::uniform_int_distribution<std::uint64_t> pick(0, stream_pos_ - 1);
    const std::uint64_t j = pick(rng_);
    if (j < sample_cap_) samples_[j] = v;
  }

  void merge_reservoir(const CalibrationObserver& other) {
    if (samples_.size() + other.samples_.size() <= sample_cap_) {
      samples_.insert(samples_.end(), other.samples_.begin(), other.samples_.end());
      stream_pos_ += other.stream_pos_;
      return;
    }
    // Each side contributes in proportion to how much data it has seen.
    const double total = static_cast<double>(stream_pos_ + other.stream_pos_);
    auto take_a = static_cast<std::size_t>(
        std::llround(static_cast<double>(sample_cap_) * static_cast<double>(stream_pos_) / total));
    take_a = std::min(take_a, samples_.size());
    std::size_t take_b = std::min(sample_cap_ - take_a, other.samples_.size());
    std::vector<double> mine = samples_;
    std::vector<double> theirs = other.samples_;
    std::shuffle(mine.begin(), mine.end(), rng_);
    std::shuffle(theirs.begin(), theirs.end(), rng_);
    samples_.assign(mine.begin(), mine.begin() + static_cast<std::ptrdiff_t>(take_a));
    samples_.insert(samples_.end(), theirs.begin(),
                    theirs.begin() + static_cast<std::ptrdiff_t>(take_b));
    stream_pos_ += other.stream_pos_;
  }

  CalibrationMethod method_;
  Granularity granularity_;
  std::size_t sample_cap_;
  std::mt19937_64 rng_;
  std::vector<double> running_max_;
  std::vector<double> samples_;
  std::uint64_t stream_pos_ = 0;
  std::size_t seen_ = 0;
};

// ---------------------------------------------------------------------------
// Calibration result file
//
//   # qsim calibration v1
//   <key> <granularity> <count> <alpha_0> ... <alpha_{count-1}>
//
// Keys are "<layer>.<role>" (role: input, weight, output, smooth). Values
// are printed with 17 significant digits so they round-trip exactly.

using CalibrationTable = std::map<std::string, ScaleSet>;

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_calibration(std::ostream& os, const CalibrationTable& table) {
  os << "# qsim calibration v1\n";
  for (const auto& [key, set] : table) {
    os << key << ' ' << set.granularity.to_string() << ' ' << set.alphas.size();
    for (double a : set.alphas) os << ' ' << format_double(a);
    os << '\n';
  }
}

inline CalibrationTable read_calibration(std::istream& is) {
  CalibrationTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key, gran;
    std::size_t count = 0;
    if (!(ls >> key >> gran >> count)) {
      throw ParseError("calibration line " + std::to_string(line_no) + " is malformed", 0);
    }
    ScaleSet set{Granularity::parse(gran), {}};
    set.alphas.resize(count);
    for (auto& a : set.alphas) {
      std::string tok;
      if (!(ls >> tok)) {
        throw ParseError("calibration line " + std::to_string(line_no) + " has too few values",
                         0);
      }
      a = std::strtod(tok.c_str(), nullptr);
    }
    table[key] = std::move(set);
  }
  return table;
}

inline void save_calibration(const std::string& path, const CalibrationTable& table) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write calibration file " + path);
  write_calibration(os, table);
}

inline CalibrationTable load_calibration(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read calibration file " + path);
  return read_calibration(is);
}

}  // namespace qsim

#endif  // QSIM_CALIBRATION_HPP_
