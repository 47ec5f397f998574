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

// Adaptive block floating point: every length-n vector of a column (or row)
// gets its own dynamic abs-max scale. Scales are stored in bfloat16, rounded
// up so the block maximum never clips.

#ifndef QSIM_ABFP_HPP_
#define QSIM_ABFP_HPP_

#include <cstddef>

#include "qsim/error.hpp"
#include "qsim/formats.hpp"
#include "qsim/quant.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

struct AbfpConfig {
  std::size_t n = 64;
  Orientation orientation = Orientation::Columns;
  NumericFormat format = NumericFormat::integer(4);
  ScaleStorage scale_storage = ScaleStorage::BF16;

  QuantSpec spec() const {
    if (n < 1) throw ValueError("ABFP block length must be >= 1");
    QuantSpec s;
    s.format = format;
    s.granularity = Granularity::blocks(n, orientation);
    s.calibration = CalibrationMethod::AbsMax;
    s.scale_storage = scale_storage;
    return s;
  }
};

namespace detail {

inline void require_abfp_rank(const Tensor& t) {
  if (t.rank() == 0) throw ShapeError("ABFP needs a tensor of rank >= 1");
}

}  // namespace detail

/// Block scales for `t` viewed as a matrix (rank-1 is one column, higher
/// ranks fold leading axes into rows). Columns orientation yields
/// ceil(M/n) x N scales; rows yields M x ceil(N/n).
inline ScaleSet abfp_scales(const Tensor& t, const AbfpConfig& cfg) {
  detail::require_abfp_rank(t);
  return absmax_scales(t, cfg.spec());
}

inline Tensor abfp_qdq(const Tensor& t, const AbfpConfig& cfg) {
  detail::require_abfp_rank(t);
  const QuantSpec spec = cfg.spec();
  if (spec.is_passthrough()) return t;
  return qdq(t, spec, absmax_scales(t, spec));
}

}  // namespace qsim

#endif  // QSIM_ABFP_HPP_
