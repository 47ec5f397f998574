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

// Per-channel migration of quantization difficulty from activations to
// weights: x[:, j] /= s_j and w[j, :] *= s_j, with
// s_j = act_max_j^strength / weight_max_j^(1 - strength).

#ifndef QSIM_SMOOTHING_HPP_
#define QSIM_SMOOTHING_HPP_

#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/quant.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

inline constexpr double kDefaultSmoothingStrength = 0.5;

struct SmoothingPlan {
  std::vector<double> factors;
  double strength = kDefaultSmoothingStrength;
};

inline SmoothingPlan compute_smoothing(std::span<const double> act_maxes,
                                       std::span<const double> weight_maxes,
                                       double strength = kDefaultSmoothingStrength) {
  if (act_maxes.size() != weight_maxes.size()) {
    throw ShapeError("smoothing needs one activation and one weight max per channel (" +
                     std::to_string(act_maxes.size()) + " vs " +
                     std::to_string(weight_maxes.size()) + ")");
  }
  if (!(strength >= 0.0 && strength <= 1.0)) {
    throw ValueError("smoothing strength must be in [0, 1], got " + std::to_string(strength));
  }
  SmoothingPlan plan{std::vector<double>(act_maxes.size(), 1.0), strength};
  for (std::size_t j = 0; j < act_maxes.size(); ++j) {
    const double a = act_maxes[j], w = weight_maxes[j];
    if (a < 0.0 || w < 0.0) throw ValueError("channel maxima must be nonnegative");
    if (a == 0.0 || w == 0.0) continue;
    const double s = std::pow(a, strength) / std::pow(w, 1.0 - strength);
    if (std::isfinite(s) && s > 0.0) plan.factors[j] = s;
  }
  return plan;
}

/// Which axis of the weight indexes input channels.
enum class WeightLayout {
  InOut,  // w[in, out]; x * w
  OutIn,  // w[out, in]; x * w^T
};

/// Divide activation column j and multiply the weight's input channel j by
/// s_j. The product x * w is unchanged in exact arithmetic.
inline std::pair<Tensor, Tensor> apply_smoothing(const Tensor& x, const Tensor& w,
                                                 const SmoothingPlan& plan,
                                                 WeightLayout layout = WeightLayout::InOut) {
  const std::size_t channels = plan.factors.size();
  if (x.cols() != channels) {
    throw ShapeError("activation has " + std::to_string(x.cols()) + " channels, plan has " +
                     std::to_string(channels));
  }
  if (w.rank() != 2) throw ShapeError("smoothing needs a 2-D weight, got " + shape_string(w.shape()));
  const std::size_t w_in = layout == WeightLayout::InOut ? w.dim(0) : w.dim(1);
  if (w_in != channels) {
    throw ShapeError("weight has " + std::to_string(w_in) + " input channels, plan has " +
                     std::to_string(channels));
  }
  Tensor xs = x;
  for (std::size_t i = 0; i < xs.numel(); ++i) xs[i] /= plan.factors[i % channels];
  Tensor ws = w;
  const std::size_t cols = w.dim(1);
  for (std::size_t i = 0; i < ws.numel(); ++i) {
    const std::size_t j = layout == WeightLayout::InOut ? i / cols : i % cols;
    ws[i] *= plan.factors[j];
  }
  return {std::move(xs), std::move(ws)};
}

/// Per-input-channel abs-max of a weight.
inline std::vector<double> weight_input_channel_max(const Tensor& w,
                                                   WeightLayout layout = WeightLayout::InOut) {
  if (w.rank() != 2) throw ShapeError("weight must be 2-D, got " + shape_string(w.shape()));
  return unit_abs_max(w, Granularity::per_channel(layout == WeightLayout::InOut ? 0 : 1));
}

/// Per-column abs-max of an activation (leading axes folded).
inline std::vector<double> activation_channel_max(const Tensor& x) {
  const Tensor m = x.as_matrix();
  return unit_abs_max(m, Granularity::per_channel(1));
}

}  // namespace qsim

#endif  // QSIM_SMOOTHING_HPP_
