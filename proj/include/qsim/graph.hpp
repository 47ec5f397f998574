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

// Sequential model graphs: forward and backward passes, losses, plain SGD
// training, quantizer attachment and calibration.

#ifndef QSIM_GRAPH_HPP_
#define QSIM_GRAPH_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qsim/calibration.hpp"
#include "qsim/error.hpp"
#include "qsim/layers.hpp"
#include "qsim/ops.hpp"
#include "qsim/quantizer.hpp"
#include "qsim/smoothing.hpp"
#include "qsim/tensor.hpp"

namespace qsim {

enum class LossKind { None, MeanSquared, CrossEntropy };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::None: return "none";
    case LossKind::MeanSquared: return "mse";
    case LossKind::CrossEntropy: return "cross_entropy";
  }
  return "?";
}

inline LossKind parse_loss(const std::string& s) {
  if (s == "none") return LossKind::None;
  if (s == "mse") return LossKind::MeanSquared;
  if (s == "cross_entropy") return LossKind::CrossEntropy;
  throw ParseError("unknown loss '" + s + "'", 0);
}

/// Token + learned position embedding. Input ids are stored as doubles.
struct Embedding {
  std::size_t vocab = 0, max_seq = 0, dim = 0;
  Parameter tokens;     // [vocab x dim]
  Parameter positions;  // [max_seq x dim]
  Tensor ids;           // last forward input
};

inline Embedding make_embedding(std::size_t vocab, std::size_t max_seq, std::size_t dim) {
  return Embedding{vocab, max_seq, dim, {Tensor({vocab, dim}), Tensor({vocab, dim})},
                   {Tensor({max_seq, dim}), Tensor({max_seq, dim})}, {}};
}

struct ModelGraph {
  std::string name = "model";
  std::size_t input_dim = 0;  // last-axis width of feature inputs; 0 = unchecked
  std::optional<Embedding> embedding;
  std::vector<Layer> layers;
  LossKind loss = LossKind::None;
};

template <typename G, typename F>
void visit_layers(G& g, F&& fn) {
  for (auto& l : g.layers) visit_layer(l, fn);
}

/// Every trainable parameter with its dotted name ("<layer>.<param>").
template <typename G, typename F>
void visit_parameters(G& g, F&& fn) {
  if (g.embedding) {
    fn(std::string("embed.tokens"), g.embedding->tokens);
    fn(std::string("embed.positions"), g.embedding->positions);
  }
  visit_layers(g, [&](auto& l) {
    for (auto& [pname, p] : l.params) fn(l.name + "." + pname, p);
  });
}

/// Names of the matmul-bearing layers a report should cover: Linear,
/// Attention and Conv2d, at any nesting depth but not attention internals.
inline std::vector<std::string> matmul_layer_names(const ModelGraph& g) {
  std::vector<std::string> names;
  std::function<void(const Layer&)> walk = [&](const Layer& l) {
    if (l.has_matmul()) {
      names.push_back(l.name);
      return;
    }
    for (const auto& c : l.children) walk(c);
  };
  for (const auto& l : g.layers) walk(l);
  return names;
}

inline void init_graph(ModelGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (g.embedding) {
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& v : g.embedding->tokens.value.storage()) v = n(rng);
    for (auto& v : g.embedding->positions.value.storage()) v = n(rng);
  }
  for (auto& l : g.layers) init_layer(l, rng);
}

// ---------------------------------------------------------------------------
// Forward / backward

inline Tensor embed_forward(Embedding& e, const Tensor& ids, bool record) {
  if (ids.rank() != 1 && ids.rank() != 2) {
    throw ShapeError("token input must be [seq] or [batch, seq], got " + shape_string(ids.shape()));
  }
  const std::size_t T = ids.cols(), B = ids.numel() / std::max<std::size_t>(T, 1);
  if (T > e.max_seq) {
    throw ShapeError("sequence length " + std::to_string(T) + " exceeds " + std::to_string(e.max_seq));
  }
  Tensor out({B, T, e.dim});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const double raw = ids[b * T + t];
      if (!(raw >= 0.0) || raw >= static_cast<double>(e.vocab) || raw != std::floor(raw)) {
        throw ValueError("token id " + std::to_string(raw) + " outside vocabulary of " +
                         std::to_string(e.vocab));
      }
      const auto id = static_cast<std::size_t>(raw);
      double* o = out.values().data() + (b * T + t) * e.dim;
      for (std::size_t j = 0; j < e.dim; ++j) {
        o[j] = e.tokens.value[id * e.dim + j] + e.positions.value[t * e.dim + j];
      }
    }
  if (record) e.ids = ids;
  return out;
}

inline void embed_backward(Embedding& e, const Tensor& dy) {
  const std::size_t T = e.ids.cols(), B = e.ids.numel() / std::max<std::size_t>(T, 1);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t t = 0; t < T; ++t) {
      const auto id = static_cast<std::size_t>(e.ids[b * T + t]);
      const double* g = dy.values().data() + (b * T + t) * e.dim;
      for (std::size_t j = 0; j < e.dim; ++j) {
        e.tokens.grad[id * e.dim + j] += g[j];
        e.positions.grad[t * e.dim + j] += g[j];
      }
    }
}

inline Tensor forward(ModelGraph& g, const Tensor& x, const ForwardOptions& opt = {}) {
  Tensor h;
  if (g.embedding) {
    h = embed_forward(*g.embedding, x, opt.record);
  } else {
    if (!x.all_finite()) throw ValueError("model input contains non-finite values");
    if (g.input_dim != 0 && x.cols() != g.input_dim) {
      throw ShapeError("model expects input width " + std::to_string(g.input_dim) + ", got " +
                       shape_string(x.shape()));
    }
    h = x;
  }
  for (auto& l : g.layers) h = layer_forward(l, h, opt);
  return h;
}

inline Tensor backward(ModelGraph& g, const Tensor& grad_out) {
  Tensor grad = grad_out;
  for (auto it = g.layers.rbegin(); it != g.layers.rend(); ++it) grad = layer_backward(*it, grad);
  if (g.embedding) embed_backward(*g.embedding, grad);
  return grad;
}

inline void zero_grad(ModelGraph& g) {
  visit_parameters(g, [](const std::string&, Parameter& p) {
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    std::fill(p.grad.storage().begin(), p.grad.storage().end(), 0.0);
  });
}

// ---------------------------------------------------------------------------
// Losses

struct LossResult {
  double loss = 0.0;
  Tensor grad;
  std::size_t correct = 0;  // cross-entropy only
  std::size_t count = 0;
};

inline LossResult compute_loss(LossKind kind, const Tensor& out, const Tensor& target) {
  LossResult r;
  r.grad = Tensor(out.shape());
  switch (kind) {
    case LossKind::None:
      throw ValueError("model has no loss head");
    case LossKind::MeanSquared: {
      require_same_shape(out, target, "mse loss");
      const double n = static_cast<double>(out.numel());
      for (std::size_t i = 0; i < out.numel(); ++i) {
        const double d = out[i] - target[i];
        r.loss += d * d;
        r.grad[i] = 2.0 * d / n;
      }
      r.loss /= n;
      r.count = out.numel();
      break;
    }
    case LossKind::CrossEntropy: {
      const std::size_t V = out.cols(), rows = out.rows();
      if (target.numel() != rows) {
        throw ShapeError("cross-entropy: " + std::to_string(rows) + " logit rows vs " +
                         std::to_string(target.numel()) + " targets");
      }
      Tensor p = out;
      ops::softmax_rows_inplace(p.values(), V);
      for (std::size_t i = 0; i < rows; ++i) {
        const double raw = target[i];
        if (!(raw >= 0.0) || raw >= static_cast<double>(V)) {
          throw ValueError("class target " + std::to_string(raw) + " outside [0, " +
                           std::to_string(V) + ")");
        }
        const auto y = static_cast<std::size_t>(raw);
        const double* pr = p.values().data() + i * V;
        r.loss -= std::log(std::max(pr[y], std::numeric_limits<double>::min()));
        std::size_t best = 0;
        for (std::size_t j = 0; j < V; ++j) {
          r.grad[i * V + j] = (pr[j] - (j == y ? 1.0 : 0.0)) / static_cast<double>(rows);
          if (out[i * V + j] > out[i * V + best]) best = j;
        }
        if (best == y) ++r.correct;
      }
      r.loss /= static_cast<double>(rows);
      r.count = rows;
      break;
    }
  }
  return r;
}

struct Batch {
  Tensor inputs;
  Tensor targets;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  // cross-entropy heads only
  Tensor output;
};

inline EvalResult evaluate(ModelGraph& g, const Batch& batch, bool quantize = true) {
  ForwardOptions opt;
  opt.quantize = quantize;
  EvalResult r;
  r.output = forward(g, batch.inputs, opt);
  const LossResult l = compute_loss(g.loss, r.output, batch.targets);
  r.loss = l.loss;
  if (g.loss == LossKind::CrossEntropy && l.count) {
    r.accuracy = static_cast<double>(l.correct) / static_cast<double>(l.count);
  }
  return r;
}

struct TrainOptions {
  bool quantize = true;
  double clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

/// One SGD step on `batch`. Gradients flow through QDQ nodes with the
/// piecewise-linear estimator. Returns the pre-update loss.
inline double train_step(ModelGraph& g, const Batch& batch, double lr,
                         const TrainOptions& topt = {}) {
  zero_grad(g);
  ForwardOptions opt;
  opt.quantize = topt.quantize;
  opt.record = true;
  const Tensor out = forward(g, batch.inputs, opt);
  const LossResult l = compute_loss(g.loss, out, batch.targets);
  if (!std::isfinite(l.loss)) throw NumericError("non-finite training loss");
  backward(g, l.grad);
  double sq = 0.0;
  visit_parameters(g, [&](const std::string&, Parameter& p) {
    for (double v : p.grad.values()) sq += v * v;
  });
  if (!std::isfinite(sq)) throw NumericError("non-finite gradient");
  double scale = lr;
  const double norm = std::sqrt(sq);
  if (topt.clip_norm > 0.0 && norm > topt.clip_norm) scale *= topt.clip_norm / norm;
  if (scale != 0.0) {
    bool finite = true;
    visit_parameters(g, [&](const std::string&, Parameter& p) {
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        p.value[i] -= scale * p.grad[i];
        finite = finite && std::isfinite(p.value[i]);
      }
    });
    if (!finite) throw NumericError("parameters became non-finite after the update");
  }
  return l.loss;
}

// ---------------------------------------------------------------------------
// Quantizer attachment

/// Which quantizers to attach where. Names win over kinds. A kind entry for
/// Linear covers standalone linear layers; Attention covers the four
/// projections of every attention layer; Conv2d covers convolutions. A
/// name may address a linear/conv layer, a whole attention layer, or one
/// projection ("<attention>.q").
struct QuantPolicy {
  std::map<LayerKind, LayerQuantizers> by_kind;
  std::map<std::string, LayerQuantizers> by_name;

  bool empty() const { return by_kind.empty() && by_name.empty(); }
};

inline ModelGraph replace_layers(const ModelGraph& g, const QuantPolicy& policy) {
  ModelGraph out = g;
  std::set<std::string> used;
  auto lookup = [&](const std::string& name) -> const LayerQuantizers* {
    auto it = policy.by_name.find(name);
    if (it == policy.by_name.end()) return nullptr;
    used.insert(name);
    return &it->second;
  };
  std::function<void(Layer&)> walk = [&](Layer& l) {
    switch (l.kind) {
      case LayerKind::Linear:
      case LayerKind::Conv2d: {
        const LayerQuantizers* q = lookup(l.name);
        if (!q) {
          auto it = policy.by_kind.find(l.kind);
          if (it != policy.by_kind.end()) q = &it->second;
        }
        if (q) l.quantizers = *q;
        break;
      }
      case LayerKind::Attention: {
        const LayerQuantizers* whole = lookup(l.name);
        auto kind_it = policy.by_kind.find(LayerKind::Attention);
        for (auto& proj : l.children) {
          const LayerQuantizers* q = lookup(proj.name);
          if (!q) q = whole;
          if (!q && kind_it != policy.by_kind.end()) q = &kind_it->second;
          if (q) proj.quantizers = *q;
        }
        break;
      }
      case LayerKind::Residual:
        for (auto& c : l.children) walk(c);
        break;
      default:
        if (policy.by_name.count(l.name)) {
          throw ValueError("layer " + l.name + " (" + to_string(l.kind) +
                           ") has no matmul and cannot be quantized");
        }
        break;
    }
  };
  for (auto& l : out.layers) walk(l);
  for (const auto& [name, q] : policy.by_name) {
    if (!used.count(name)) throw ValueError("quantization policy names unknown layer " + name);
  }
  return out;
}

inline void strip_quantizers(ModelGraph& g) {
  visit_layers(g, [](Layer& l) { l.quantizers.reset(); });
}

inline void clear_smoothing(ModelGraph& g) {
  visit_layers(g, [](Layer& l) { l.smoothing.reset(); });
}

// ---------------------------------------------------------------------------
// Smoothing

enum class SmoothingScope {
  AllMatmul,   // linear layers, attention projections and convolutions
  LinearOnly,  // skip attention projections
};

/// Compute per-channel smoothing plans from activation maxima over
/// `batches` and attach them to every matmul layer in scope.
inline void enable_smoothing(ModelGraph& g, std::span<const Tensor> batches,
                             double strength = kDefaultSmoothingStrength,
                             SmoothingScope scope = SmoothingScope::AllMatmul) {
  clear_smoothing(g);
  std::set<std::string> attention_projections;
  visit_layers(g, [&](const Layer& l) {
    if (l.kind == LayerKind::Attention)
      for (const auto& c : l.children) attention_projections.insert(c.name);
  });
  std::map<std::string, std::vector<double>> act_max;
  ForwardOptions opt;
  opt.quantize = false;
  opt.on_matmul = [&](const Layer& l, const MatmulTrace& t) {
    auto maxes = activation_channel_max(t.raw_input);
    auto [it, fresh] = act_max.try_emplace(l.name, std::move(maxes));
    if (!fresh) {
      const auto m = activation_channel_max(t.raw_input);
      for (std::size_t j = 0; j < m.size(); ++j) it->second[j] = std::max(it->second[j], m[j]);
    }
  };
  for (const auto& b : batches) forward(g, b, opt);
  visit_layers(g, [&](Layer& l) {
    if (!l.is_matmul()) return;
    if (scope == SmoothingScope::LinearOnly && attention_projections.count(l.name)) return;
    auto it = act_max.find(l.name);
    if (it == act_max.end()) return;
    const Tensor w2 = l.param("weight").value.reshaped({l.out_features, it->second.size()});
    l.smoothing = compute_smoothing(it->second, weight_input_channel_max(w2, WeightLayout::OutIn),
                                    strength);
  });
}

// ---------------------------------------------------------------------------
// Calibration of static quantizers

enum class MseTarget {
  Tensor,       // minimize QDQ error of the quantized tensor itself
  LayerOutput,  // minimize error of the layer's matmul output
};

struct CalibrationOptions {
  std::size_t grid_size = kDefaultMseGrid;
  std::size_t sample_cap = kDefaultSampleCap;
  std::uint64_t seed = 0;
  MseTarget mse_target = MseTarget::Tensor;
  std::size_t output_grid_size = 128;  // LayerOutput mode
  std::size_t output_row_cap = 256;    // LayerOutput mode
};

namespace detail {

/// Squared error of the layer output when only the input is quantized with
/// threshold alpha (weights through their own quantizer).
inline double layer_output_error(const Tensor& rows, const Tensor& w_hat, const Tensor& w_ref,
                                 const NumericFormat& format, double alpha, SignedMode mode) {
  const Tensor xq = qdq_per_tensor(rows, format, alpha, mode);
  return squared_error(ops::matmul_nt(xq, w_hat), ops::matmul_nt(rows, w_ref));
}

}  // namespace detail

/// Run full-precision forwards over `batches`, observe every static input
/// and output quantizer, and install the resulting thresholds. Returns the
/// thresholds keyed "<layer>.input" / "<layer>.output", plus per-channel
/// weight maxima ("<layer>.weight") and smoothing factors ("<layer>.smooth")
/// for reference.
inline CalibrationTable calibrate(ModelGraph& g, std::span<const Tensor> batches,
                                  const CalibrationOptions& copt = {}) {
  struct Slot {
    CalibrationObserver observer;
    std::vector<double> rows;  // LayerOutput mode sample rows
    std::size_t width = 0;
    std::size_t rows_seen = 0;
  };
  std::map<std::string, Slot> slots;
  std::uint64_t salt = 0;
  auto add_slot = [&](const std::string& key, const TensorQuantizer& q) {
    if (!q.needs_calibration()) return;
    const auto& spec = q.spec();
    slots.emplace(key, Slot{CalibrationObserver(spec.calibration, spec.granularity, copt.sample_cap,
                                                copt.seed + 7919 * ++salt),
                            {}, 0, 0});
  };
  visit_layers(g, [&](Layer& l) {
    if (!l.is_matmul() || !l.quantizers) return;
    add_slot(l.name + ".input", l.quantizers->input);
    if (l.quantizers->output) add_slot(l.name + ".output", *l.quantizers->output);
  });

  std::mt19937_64 row_rng(copt.seed);
  ForwardOptions opt;
  opt.quantize = false;
  opt.on_matmul = [&](const Layer& l, const MatmulTrace& t) {
    if (auto it = slots.find(l.name + ".input"); it != slots.end()) {
      Slot& s = it->second;
      s.observer.observe(t.input);
      if (copt.mse_target == MseTarget::LayerOutput &&
          s.observer.method() == CalibrationMethod::MSE) {
        s.width = t.input.cols();
        for (std::size_t r = 0; r < t.input.rows(); ++r) {
          ++s.rows_seen;
          const double* row = t.input.values().data() + r * s.width;
          if (s.rows.size() / s.width < copt.output_row_cap) {
            s.rows.insert(s.rows.end(), row, row + s.width);
          } else {
            std::uniform_int_distribution<std::size_t> pick(0, s.rows_seen - 1);
            const std::size_t j = pick(row_rng);
            if (j < copt.output_row_cap) std::copy(row, row + s.width, s.rows.begin() + static_cast<std::ptrdiff_t>(j * s.width));
          }
        }
      }
    }
    if (auto it = slots.find(l.name + ".output"); it != slots.end()) it->second.observer.observe(t.output);
  };
  for (const auto& b : batches) forward(g, b, opt);

  CalibrationTable table;
  visit_layers(g, [&](Layer& l) {
    if (!l.is_matmul()) return;
    if (l.smoothing) table[l.name + ".smooth"] = ScaleSet{Granularity::per_channel(1), l.smoothing->factors};
    if (!l.quantizers) return;
    const Shape ws = {l.out_features, l.param("weight").value.numel() / l.out_features};
    Tensor w2 = l.param("weight").value.reshaped(ws);
    if (l.smoothing) w2 = apply_smoothing(Tensor({1, ws[1]}), w2, *l.smoothing, WeightLayout::OutIn).second;
    table[l.name + ".weight"] = weights_per_channel_max(w2, 0);
    for (const char* role : {"input", "output"}) {
      const std::string key = l.name + "." + role;
      auto it = slots.find(key);
      if (it == slots.end()) continue;
      TensorQuantizer& q = std::string(role) == "input" ? l.quantizers->input : *l.quantizers->output;
      const QuantSpec& spec = q.spec();
      Slot& s = it->second;
      if (s.observer.seen() == 0) throw ValueError("calibration data never reached " + key);
      ScaleSet set;
      if (std::string(role) == "input" && !s.rows.empty()) {
        const Tensor rows({s.rows.size() / s.width, s.width}, s.rows);
        const Tensor w_hat = l.quantizers->weight.apply(w2);
        const double top = s.observer.running_max().front();
        double best_alpha = top, best = std::numeric_limits<double>::infinity();
        for (std::size_t k = copt.output_grid_size; k >= 1; --k) {
          const double alpha = k == copt.output_grid_size
                                   ? top
                                   : top * static_cast<double>(k) / static_cast<double>(copt.output_grid_size);
          if (!(alpha > 0.0)) break;
          const double e = detail::layer_output_error(rows, w_hat, w2, spec.format, alpha, spec.signed_mode);
          if (e < best) {
            best = e;
            best_alpha = alpha;
          }
        }
        set = make_scale_set(spec.granularity, {best_alpha}, spec.scale_storage);
      } else {
        set = s.observer.finalize(spec.format, spec.signed_mode, spec.scale_storage, copt.grid_size);
      }
      q.set_scales(set);
      table[key] = std::move(set);
    }
  });
  return table;
}

/// Install thresholds from a calibration table. Entries without a matching
/// static quantizer are ignored; missing entries are an error.
inline void apply_calibration(ModelGraph& g, const CalibrationTable& table) {
  visit_layers(g, [&](Layer& l) {
    if (!l.is_matmul() || !l.quantizers) return;
    auto install = [&](TensorQuantizer& q, const std::string& key) {
      if (!q.needs_calibration()) return;
      auto it = table.find(key);
      if (it == table.end()) throw ValueError("calibration table has no entry " + key);
      q.set_scales(it->second);
    };
    install(l.quantizers->input, l.name + ".input");
    if (l.quantizers->output) install(*l.quantizers->output, l.name + ".output");
    if (auto it = table.find(l.name + ".smooth"); it != table.end()) {
      l.smoothing = SmoothingPlan{it->second.alphas, kDefaultSmoothingStrength};
    }
  });
}

}  // namespace qsim

#endif  // QSIM_GRAPH_HPP_
