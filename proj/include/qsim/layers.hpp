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

// Layers of the reference engine and their forward/backward passes.
//
// Matmul-bearing layers (Linear, Attention, Conv2d) accept an optional set of
// quantizers. A wrapped layer computes
//
//   w_hat = f_w(w),  x_hat = f_x(x),  y = x_hat * w_hat^T + b,  y_hat = f_y(y)
//
// in full precision; f_y is absent unless configured. Attention is four
// quantizable Linear projections around a full-precision softmax core.
// Conv2d lowers to im2col followed by the same matmul path.
//
// Linear weights are stored [out, in] and activations token-major
// [..., features].

#ifndef QSIM_LAYERS_HPP_
#define QSIM_LAYERS_HPP_

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/ops.hpp"
#include "qsim/quantizer.hpp"
#include "qsim/smoothing.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

enum class LayerKind { Linear, Attention, LayerNorm, Activation, Residual, Conv2d, Flatten };
enum class ActivationKind { Gelu, Relu, Softmax };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Linear: return "linear";
    case LayerKind::Attention: return "attention";
    case LayerKind::LayerNorm: return "layernorm";
    case LayerKind::Activation: return "activation";
    case LayerKind::Residual: return "residual";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Flatten: return "flatten";
  }
  return "?";
}

inline std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Gelu: return "gelu";
    case ActivationKind::Relu: return "relu";
    case ActivationKind::Softmax: return "softmax";
  }
  return "?";
}

inline ActivationKind parse_activation(const std::string& s) {
  if (s == "gelu") return ActivationKind::Gelu;
  if (s == "relu") return ActivationKind::Relu;
  if (s == "softmax") return ActivationKind::Softmax;
  throw ParseError("unknown activation '" + s + "'", 0);
}

struct Parameter {
  Tensor value;
  Tensor grad;
};

/// What a matmul sees on one call, handed to forward hooks.
struct MatmulTrace {
  const Tensor& raw_input;  // [rows x in], before smoothing
  const Tensor& input;      // after smoothing, before the input quantizer
  const Tensor& output;     // before the output quantizer
};

struct ForwardOptions {
  bool quantize = true;
  bool record = false;  // keep what backward() needs
  std::function<void(const struct Layer&, const MatmulTrace&)> on_matmul;
  std::function<void(const struct Layer&, const Tensor&)> on_output;
};

struct LayerCache {
  Shape in_shape;
  Tensor input;
  Tensor x_hat, w_hat;  // matmul operands after QDQ
  bool recorded = false;
  bool quantized = false;
  bool has_output_ctx = false;
  PwlContext in_ctx, w_ctx, out_ctx;
  Tensor aux;  // layernorm x_hat, attention probabilities, conv columns
  std::vector<double> inv_std;
  Tensor q, k, v, context;  // attention
};

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Linear;
  ActivationKind activation = ActivationKind::Gelu;
  std::size_t in_features = 0;   // Conv2d: input channels; Attention: model dim
  std::size_t out_features = 0;  // Conv2d: output channels; Attention: model dim
  std::size_t heads = 1;
  bool causal = true;
  std::size_t kernel = 1, stride = 1, padding = 0;
  bool bias = true;
  double eps = 1e-5;
  std::map<std::string, Parameter> params;
  std::vector<Layer> children;  // Residual body, or Attention q/k/v/o
  std::optional<LayerQuantizers> quantizers;
  std::optional<SmoothingPlan> smoothing;
  LayerCache cache;

  /// Layers whose own forward performs a weight matmul.
  bool is_matmul() const { return kind == LayerKind::Linear || kind == LayerKind::Conv2d; }
  bool has_matmul() const { return is_matmul() || kind == LayerKind::Attention; }

  Parameter& param(const std::string& p) {
    auto it = params.find(p);
    if (it == params.end()) throw ValueError("layer " + name + " has no parameter " + p);
    return it->second;
  }
  const Parameter& param(const std::string& p) const {
    auto it = params.find(p);
    if (it == params.end()) throw ValueError("layer " + name + " has no parameter " + p);
    return it->second;
  }

  Shape weight_shape() const {
    if (kind == LayerKind::Conv2d) return {out_features, in_features, kernel, kernel};
    return {out_features, in_features};
  }
};

// ---------------------------------------------------------------------------
// Construction

inline Layer make_linear(std::string name, std::size_t in, std::size_t out, bool bias = true) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Linear;
  l.in_features = in;
  l.out_features = out;
  l.bias = bias;
  l.params["weight"] = {Tensor({out, in}), Tensor({out, in})};
  if (bias) l.params["bias"] = {Tensor({out}), Tensor({out})};
  return l;
}

inline Layer make_attention(std::string name, std::size_t dim, std::size_t heads,
                            bool causal = true) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention " + name + ": dim " + std::to_string(dim) +
                     " is not divisible by " + std::to_string(heads) + " heads");
  }
  Layer l;
  l.name = name;
  l.kind = LayerKind::Attention;
  l.in_features = l.out_features = dim;
  l.heads = heads;
  l.causal = causal;
  for (const char* p : {"q", "k", "v", "o"}) l.children.push_back(make_linear(name + "." + p, dim, dim));
  return l;
}

inline Layer make_layernorm(std::string name, std::size_t dim, double eps = 1e-5) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::LayerNorm;
  l.in_features = l.out_features = dim;
  l.eps = eps;
  l.params["gamma"] = {Tensor({dim}, 1.0), Tensor({dim})};
  l.params["beta"] = {Tensor({dim}), Tensor({dim})};
  return l;
}

inline Layer make_activation(std::string name, ActivationKind a) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Activation;
  l.activation = a;
  return l;
}

inline Layer make_residual(std::string name, std::vector<Layer> body) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Residual;
  l.children = std::move(body);
  return l;
}

inline Layer make_conv2d(std::string name, std::size_t in_channels, std::size_t out_channels,
                         std::size_t kernel, std::size_t stride = 1, std::size_t padding = 0,
                         bool bias = true) {
  if (kernel == 0 || stride == 0) throw ValueError("conv2d " + name + ": kernel and stride must be >= 1");
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv2d;
  l.in_features = in_channels;
  l.out_features = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  l.bias = bias;
  const Shape ws = l.weight_shape();
  l.params["weight"] = {Tensor(ws), Tensor(ws)};
  if (bias) l.params["bias"] = {Tensor({out_channels}), Tensor({out_channels})};
  return l;
}

inline Layer make_flatten(std::string name) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Flatten;
  return l;
}

/// Visit a layer and everything nested inside it, parents first.
template <typename L, typename F>
void visit_layer(L& layer, F&& fn) {
  fn(layer);
  for (auto& c : layer.children) visit_layer(c, fn);
}

/// Gaussian fan-in initialization for weights; biases and layernorm shifts
/// start at zero, layernorm gains at one.
inline void init_layer(Layer& layer, std::mt19937_64& rng) {
  visit_layer(layer, [&](Layer& l) {
    if (!l.is_matmul()) return;
    const double fan_in = static_cast<double>(l.in_features * l.kernel * l.kernel);
    std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(fan_in));
    for (auto& v : l.param("weight").value.storage()) v = g(rng);
    if (l.bias) std::fill(l.param("bias").value.storage().begin(), l.param("bias").value.storage().end(), 0.0);
  });
}

// ---------------------------------------------------------------------------
// Matmul core shared by Linear and Conv2d: x2 [rows x in], w2 [out x in].

namespace detail {

inline Tensor matmul_forward(Layer& l, const Tensor& x2, const Tensor& w2,
                             const ForwardOptions& opt) {
  LayerCache& c = l.cache;
  Tensor xs = x2;
  Tensor ws = w2;
  if (l.smoothing) {
    const auto& s = l.smoothing->factors;
    if (s.size() != xs.cols()) {
      throw ShapeError("smoothing plan of " + l.name + " has " + std::to_string(s.size()) +
                       " factors for " + std::to_string(xs.cols()) + " channels");
    }
    std::tie(xs, ws) = apply_smoothing(xs, ws, *l.smoothing, WeightLayout::OutIn);
  }
  const bool quant = opt.quantize && l.quantizers.has_value();
  Tensor x_hat = quant ? l.quantizers->input.apply(xs, opt.record ? &c.in_ctx : nullptr) : xs;
  Tensor w_hat = quant ? l.quantizers->weight.apply(ws, opt.record ? &c.w_ctx : nullptr) : ws;
  Tensor y = ops::matmul_nt(x_hat, w_hat);
  if (l.bias) ops::add_row_bias(y, l.param("bias").value);
  if (opt.on_matmul) opt.on_matmul(l, MatmulTrace{x2, xs, y});
  const bool quant_out = quant && l.quantizers->output.has_value();
  if (quant_out) y = l.quantizers->output->apply(y, opt.record ? &c.out_ctx : nullptr);
  if (opt.record) {
    c.x_hat = std::move(x_hat);
    c.w_hat = std::move(w_hat);
    c.recorded = true;
    c.quantized = quant;
    c.has_output_ctx = quant_out;
  }
  return y;
}

/// Returns dL/dx2; accumulates dL/dw2 (in the [out x in] view) into `dw2`.
inline Tensor matmul_backward(Layer& l, const Tensor& dy_hat, Tensor& dw2) {
  LayerCache& c = l.cache;
  if (!c.recorded) throw ValueError("backward through " + l.name + " without a recorded forward");
  Tensor dy = c.has_output_ctx ? backward_pwl(c.out_ctx, dy_hat) : dy_hat;
  if (l.bias) ops::accumulate(l.param("bias").grad, ops::column_sums(dy));
  Tensor dw_hat = ops::matmul_tn(dy, c.x_hat);  // [out x in]
  Tensor dws = c.quantized ? backward_pwl(c.w_ctx, dw_hat) : std::move(dw_hat);
  Tensor dx_hat = ops::matmul_nn(dy, c.w_hat);  // [rows x in]
  Tensor dxs = c.quantized ? backward_pwl(c.in_ctx, dx_hat) : std::move(dx_hat);
  if (l.smoothing) {
    const auto& s = l.smoothing->factors;
    const std::size_t in = s.size();
    for (std::size_t i = 0; i < dws.numel(); ++i) dws[i] *= s[i % in];
    for (std::size_t i = 0; i < dxs.numel(); ++i) dxs[i] /= s[i % in];
  }
  ops::accumulate(dw2, dws);
  return dxs;
}

inline Tensor rows_view(const Tensor& x, std::size_t width, const std::string& who) {
  if (x.cols() != width) {
    throw ShapeError(who + ": expected last axis " + std::to_string(width) + ", got " +
                     shape_string(x.shape()));
  }
  return x.reshaped({x.numel() / width, width});
}

inline Shape with_last(Shape s, std::size_t last) {
  s.back() = last;
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward / backward per layer kind

inline Tensor layer_forward(Layer& l, const Tensor& x, const ForwardOptions& opt);
inline Tensor layer_backward(Layer& l, const Tensor& dy);

namespace detail {

inline Tensor linear_forward(Layer& l, const Tensor& x, const ForwardOptions& opt) {
  if (x.rank() == 0) throw ShapeError(l.name + ": linear input must have rank >= 1");
  const Tensor x2 = rows_view(x, l.in_features, l.name);
  Tensor y = matmul_forward(l, x2, l.param("weight").value, opt);
  return y.reshaped(with_last(x.shape(), l.out_features));
}

inline Tensor linear_backward(Layer& l, const Tensor& dy) {
  const Tensor dy2 = rows_view(dy, l.out_features, l.name);
  Tensor dx = matmul_backward(l, dy2, l.param("weight").grad);
  return dx.reshaped(with_last(dy.shape(), l.in_features));
}

inline std::size_t conv_out(std::size_t in, const Layer& l) {
  const std::size_t padded = in + 2 * l.padding;
  if (padded < l.kernel) throw ShapeError(l.name + ": input smaller than kernel");
  return (padded - l.kernel) / l.stride + 1;
}

inline Tensor conv_forward(Layer& l, const Tensor& x, const ForwardOptions& opt) {
  if (x.rank() != 4 || x.dim(1) != l.in_features) {
    throw ShapeError(l.name + ": conv2d expects [batch, " + std::to_string(l.in_features) +
                     ", H, W], got " + shape_string(x.shape()));
  }
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), K = l.kernel;
  const std::size_t OH = conv_out(H, l), OW = conv_out(W, l), O = l.out_features;
  const std::size_t patch = C * K * K;
  Tensor cols({B * OH * OW, patch});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        double* row = cols.values().data() + ((b * OH + oh) * OW + ow) * patch;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t kh = 0; kh < K; ++kh)
            for (std::size_t kw = 0; kw < K; ++kw) {
              const long ih = static_cast<long>(oh * l.stride + kh) - static_cast<long>(l.padding);
              const long iw = static_cast<long>(ow * l.stride + kw) - static_cast<long>(l.padding);
              double v = 0.0;
              if (ih >= 0 && iw >= 0 && ih < static_cast<long>(H) && iw < static_cast<long>(W)) {
                v = x[((b * C + c) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)];
              }
              row[(c * K + kh) * K + kw] = v;
            }
      }
  const Tensor w2 = l.param("weight").value.reshaped({O, patch});
  const Tensor y2 = matmul_forward(l, cols, w2, opt);
  Tensor y({B, O, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < OH * OW; ++p)
      for (std::size_t o = 0; o < O; ++o) y[(b * O + o) * OH * OW + p] = y2[(b * OH * OW + p) * O + o];
  return y;
}

inline Tensor conv_backward(Layer& l, const Tensor& dy) {
  const Shape& xs = l.cache.in_shape;
  const std::size_t B = xs[0], C = xs[1], H = xs[2], W = xs[3], K = l.kernel;
  const std::size_t OH = dy.dim(2), OW = dy.dim(3), O = l.out_features;
  const std::size_t patch = C * K * K;
  Tensor dy2({B * OH * OW, O});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t p = 0; p < OH * OW; ++p)
      for (std::size_t o = 0; o < O; ++o) dy2[(b * OH * OW + p) * O + o] = dy[(b * O + o) * OH * OW + p];
  Tensor dw2({O, patch});
  const Tensor dcols = matmul_backward(l, dy2, dw2);
  auto& wg = l.param("weight").grad;
  for (std::size_t i = 0; i < dw2.numel(); ++i) wg[i] += dw2[i];
  Tensor dx(xs);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        const double* row = dcols.values().data() + ((b * OH + oh) * OW + ow) * patch;
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t kh = 0; kh < K; ++kh)
            for (std::size_t kw = 0; kw < K; ++kw) {
              const long ih = static_cast<long>(oh * l.stride + kh) - static_cast<long>(l.padding);
              const long iw = static_cast<long>(ow * l.stride + kw) - static_cast<long>(l.padding);
              if (ih >= 0 && iw >= 0 && ih < static_cast<long>(H) && iw < static_cast<long>(W)) {
                dx[((b * C + c) * H + static_cast<std::size_t>(ih)) * W + static_cast<std::size_t>(iw)] +=
                    row[(c * K + kh) * K + kw];
              }
            }
      }
  return dx;
}

inline Tensor attention_forward(Layer& l, const Tensor& x, const ForwardOptions& opt) {
  const std::size_t d = l.in_features;
  if (x.rank() < 2 || x.cols() != d) {
    throw ShapeError(l.name + ": attention expects [batch, seq, " + std::to_string(d) +
                     "] or [seq, " + std::to_string(d) + "], got " + shape_string(x.shape()));
  }
  const std::size_t T = x.dim(x.rank() - 2);
  const std::size_t B = x.numel() / (T * d);
  const std::size_t H = l.heads, dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor q = layer_forward(l.children[0], x, opt);
  Tensor k = layer_forward(l.children[1], x, opt);
  Tensor v = layer_forward(l.children[2], x, opt);
  Tensor probs({B, H, T, T});
  Tensor ctx(x.shape());
  std::vector<double> row(T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      double* P = probs.values().data() + ((b * H + h) * T) * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = q.values().data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          if (l.causal && j > i) {
            P[i * T + j] = -std::numeric_limits<double>::infinity();
            continue;
          }
          const double* kj = k.values().data() + (b * T + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
          P[i * T + j] = s * scale;
        }
      }
      ops::softmax_rows_inplace(std::span<double>(P, T * T), T);
      for (std::size_t i = 0; i < T; ++i) {
        double* ci = ctx.values().data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          const double p = P[i * T + j];
          if (p == 0.0) continue;
          const double* vj = v.values().data() + (b * T + j) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) ci[e] += p * vj[e];
        }
      }
    }
  Tensor out = layer_forward(l.children[3], ctx, opt);
  if (opt.record) {
    l.cache.q = std::move(q);
    l.cache.k = std::move(k);
    l.cache.v = std::move(v);
    l.cache.aux = std::move(probs);
  }
  return out;
}

inline Tensor attention_backward(Layer& l, const Tensor& dy) {
  const std::size_t d = l.in_features;
  const Tensor& q = l.cache.q;
  const Tensor& k = l.cache.k;
  const Tensor& v = l.cache.v;
  const Tensor& probs = l.cache.aux;
  const std::size_t B = probs.dim(0), H = probs.dim(1), T = probs.dim(2), dh = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor dctx = layer_backward(l.children[3], dy);
  Tensor dq(q.shape()), dk(k.shape()), dv(v.shape());
  std::vector<double> dP(T * T), dS(T * T);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h) {
      const double* P = probs.values().data() + ((b * H + h) * T) * T;
      for (std::size_t i = 0; i < T; ++i) {
        const double* gi = dctx.values().data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          const double* vj = v.values().data() + (b * T + j) * d + h * dh;
          double* dvj = dv.values().data() + (b * T + j) * d + h * dh;
          const double p = P[i * T + j];
          double s = 0.0;
          for (std::size_t e = 0; e < dh; ++e) {
            s += gi[e] * vj[e];
            dvj[e] += p * gi[e];
          }
          dP[i * T + j] = s;
        }
      }
      ops::softmax_rows_backward(std::span<const double>(P, T * T), dP, dS, T);
      for (std::size_t i = 0; i < T; ++i) {
        const double* qi = q.values().data() + (b * T + i) * d + h * dh;
        double* dqi = dq.values().data() + (b * T + i) * d + h * dh;
        for (std::size_t j = 0; j < T; ++j) {
          const double g = dS[i * T + j] * scale;
          if (g == 0.0) continue;
          const double* kj = k.values().data() + (b * T + j) * d + h * dh;
          double* dkj = dk.values().data() + (b * T + j) * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            dqi[e] += g * kj[e];
            dkj[e] += g * qi[e];
          }
        }
      }
    }
  Tensor dx = layer_backward(l.children[0], dq);
  ops::accumulate(dx, layer_backward(l.children[1], dk));
  ops::accumulate(dx, layer_backward(l.children[2], dv));
  return dx;
}

inline Tensor activation_forward(Layer& l, const Tensor& x) {
  Tensor y = x;
  switch (l.activation) {
    case ActivationKind::Gelu:
      for (auto& v : y.storage()) v = ops::gelu(v);
      break;
    case ActivationKind::Relu:
      for (auto& v : y.storage()) v = std::max(v, 0.0);
      break;
    case ActivationKind::Softmax:
      ops::softmax_rows_inplace(y.values(), y.cols());
      l.cache.aux = y;
      break;
  }
  return y;
}

inline Tensor activation_backward(Layer& l, const Tensor& dy) {
  const Tensor& x = l.cache.input;
  Tensor dx(dy.shape());
  switch (l.activation) {
    case ActivationKind::Gelu:
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = dy[i] * ops::gelu_grad(x[i]);
      break;
    case ActivationKind::Relu:
      for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
      break;
    case ActivationKind::Softmax:
      ops::softmax_rows_backward(l.cache.aux.values(), dy.values(), dx.values(), dy.cols());
      break;
  }
  return dx;
}

}  // namespace detail

inline Tensor layer_forward(Layer& l, const Tensor& x, const ForwardOptions& opt) {
  if (opt.record) {
    l.cache.in_shape = x.shape();
    if (l.kind == LayerKind::Activation) l.cache.input = x;
  }
  Tensor y;
  switch (l.kind) {
    case LayerKind::Linear:
      y = detail::linear_forward(l, x, opt);
      break;
    case LayerKind::Conv2d:
      y = detail::conv_forward(l, x, opt);
      break;
    case LayerKind::Attention:
      y = detail::attention_forward(l, x, opt);
      break;
    case LayerKind::LayerNorm:
      y = ops::layernorm(x, l.param("gamma").value, l.param("beta").value, l.eps,
                         opt.record ? &l.cache.aux : nullptr, opt.record ? &l.cache.inv_std : nullptr);
      break;
    case LayerKind::Activation:
      y = detail::activation_forward(l, x);
      break;
    case LayerKind::Residual: {
      Tensor h = x;
      for (auto& c : l.children) h = layer_forward(c, h, opt);
      require_same_shape(h, x, ("residual " + l.name).c_str());
      ops::accumulate(h, x);
      y = std::move(h);
      break;
    }
    case LayerKind::Flatten: {
      if (x.rank() < 2) throw ShapeError(l.name + ": flatten needs rank >= 2");
      y = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
      break;
    }
  }
  if (opt.on_output) opt.on_output(l, y);
  return y;
}

inline Tensor layer_backward(Layer& l, const Tensor& dy) {
  switch (l.kind) {
    case LayerKind::Linear:
      return detail::linear_backward(l, dy);
    case LayerKind::Conv2d:
      return detail::conv_backward(l, dy);
    case LayerKind::Attention:
      return detail::attention_backward(l, dy);
    case LayerKind::LayerNorm:
      return ops::layernorm_backward(dy, l.cache.aux, l.cache.inv_std, l.param("gamma").value,
                                     l.param("gamma").grad, l.param("beta").grad);
    case LayerKind::Activation:
      return detail::activation_backward(l, dy);
    case LayerKind::Residual: {
      Tensor g = dy;
      for (auto it = l.children.rbegin(); it != l.children.rend(); ++it) g = layer_backward(*it, g);
      ops::accumulate(g, dy);
      return g;
    }
    case LayerKind::Flatten:
      return dy.reshaped(l.cache.in_shape);
  }
  return dy;
}

}  // namespace qsim

#endif  // QSIM_LAYERS_HPP_
