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

// Quantizer functions attached to the inputs, weights and outputs of matmul
// layers, plus the piecewise-linear straight-through context they record for
// the backward pass.

#ifndef QSIM_QUANTIZER_HPP_
#define QSIM_QUANTIZER_HPP_

#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "qsim/abfp.hpp"
#include "qsim/error.hpp"
#include "qsim/quant.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

/// Saved state of one QDQ node: the thresholds used and the mask
/// 1{|x| <= alpha} over the node's input.
struct PwlContext {
  std::vector<double> alphas;
  Tensor mask;
  bool captured = false;
};

/// Gradient of QDQ under the piecewise-linear estimator: pass the upstream
/// gradient where |x| <= alpha, zero elsewhere.
inline Tensor backward_pwl(const PwlContext& ctx, const Tensor& upstream) {
  if (!ctx.captured) throw ValueError("backward_pwl: no forward context was captured");
  require_same_shape(ctx.mask, upstream, "backward_pwl");
  Tensor g = upstream;
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] *= ctx.mask[i];
  return g;
}

/// f_q for one tensor role. Either a QuantSpec (per-tensor, per-channel or
/// block granularity; dynamic abs-max or statically calibrated) or an ABFP
/// configuration.
class TensorQuantizer {
 public:
  TensorQuantizer() : config_(passthrough_spec()) {}
  explicit TensorQuantizer(QuantSpec spec) : config_(std::move(spec)) {}
  explicit TensorQuantizer(AbfpConfig cfg) : config_(std::move(cfg)) {}

  static QuantSpec passthrough_spec() {
    QuantSpec s;
    s.format = NumericFormat::fp32();
    return s;
  }

  bool is_abfp() const { return std::holds_alternative<AbfpConfig>(config_); }
  const AbfpConfig& abfp() const { return std::get<AbfpConfig>(config_); }
  const QuantSpec& spec() const { return std::get<QuantSpec>(config_); }

  const NumericFormat& format() const {
    return is_abfp() ? abfp().format : spec().format;
  }

  bool is_passthrough() const { return format().is_passthrough(); }

  /// Static quantizers need thresholds from a calibration pass.
  bool needs_calibration() const {
    if (is_abfp() || is_passthrough() || format().is_unscaled()) return false;
    return spec().calibration != CalibrationMethod::AbsMax;
  }

  bool calibrated() const { return scales_.has_value(); }
  const std::optional<ScaleSet>& scales() const { return scales_; }
  void set_scales(ScaleSet s) { scales_ = std::move(s); }
  void clear_scales() { scales_.reset(); }

  /// QDQ `x`. When `ctx` is given the straight-through mask is recorded.
  Tensor apply(const Tensor& x, PwlContext* ctx = nullptr) const {
    if (is_passthrough()) {
      if (ctx) *ctx = PwlContext{{}, Tensor(x.shape(), 1.0), true};
      return x;
    }
    if (!x.all_finite()) throw NumericError("non-finite values reached a " + format().name() + " quantizer");
    QuantSpec spec;
    ScaleSet scales;
    if (is_abfp()) {
      if (x.rank() == 0) throw ShapeError("ABFP needs a tensor of rank >= 1");
      spec = abfp().spec();
      scales = absmax_scales(x, spec);
    } else {
      spec = this->spec();
      if (needs_calibration()) {
        if (!scales_) {
          throw ValueError("static quantizer (" + spec.format.name() +
                           ") used before calibration");
        }
        scales = *scales_;
      } else {
        scales = absmax_scales(x, spec);
      }
    }
    Tensor y = qdq(x, spec, scales);
    if (ctx) {
      ctx->mask = pass_mask(x, spec, scales);
      ctx->alphas = std::move(scales.alphas);
      ctx->captured = true;
    }
    return y;
  }

  std::string describe() const {
    if (is_passthrough()) return "fp32";
    if (is_abfp()) {
      return "abfp(" + abfp().format.name() + ",n=" + std::to_string(abfp().n) + "," +
             (abfp().orientation == Orientation::Columns ? "columns" : "rows") + ")";
    }
    std::string method = spec().calibration == CalibrationMethod::AbsMax      ? "dynamic"
                         : spec().calibration == CalibrationMethod::StaticMax ? "static-max"
                                                                              : "static-mse";
    return spec().format.name() + "(" + spec().granularity.to_string() + "," + method + ")";
  }

 private:
  std::variant<QuantSpec, AbfpConfig> config_;
  std::optional<ScaleSet> scales_;
};

/// The three quantizer slots of a matmul layer. No output quantizer by
/// default: outputs stay in full precision.
struct LayerQuantizers {
  TensorQuantizer input;
  TensorQuantizer weight;
  std::optional<TensorQuantizer> output;
};

}  // namespace qsim

#endif  // QSIM_QUANTIZER_HPP_
