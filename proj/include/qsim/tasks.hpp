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

// Toy tasks shipped with the simulator: synthetic regression, a spiral
// classifier, and a small character-level transformer language model whose
// activations carry injected outlier channels.

#ifndef QSIM_TASKS_HPP_
#define QSIM_TASKS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/graph.hpp"
#include "qsim/io.hpp"
#include "qsim/tensor.hpp"

namespace qsim::tasks {

/// A model plus its dataset archive (train/eval/calib splits).
struct ToyTask {
  ModelGraph model;
  TensorArchive data;
};

// ---------------------------------------------------------------------------
// Synthetic regression: y = tanh(x A) B + noise.

inline ToyTask make_regression(std::uint64_t seed, std::size_t in = 8, std::size_t hidden = 32) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor a({in, 4}), b({4, 1});
  for (auto& v : a.storage()) v = n(rng) / std::sqrt(static_cast<double>(in));
  for (auto& v : b.storage()) v = n(rng);
  auto sample = [&](std::size_t rows) {
    Tensor x({rows, in}), y({rows, 1});
    for (auto& v : x.storage()) v = n(rng);
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t h = 0; h < 4; ++h) {
        double z = 0.0;
        for (std::size_t i = 0; i < in; ++i) z += x.at(r, i) * a.at(i, h);
        s += std::tanh(2.0 * z) * b[h];
      }
      y[r] = s + 0.01 * n(rng);
    }
    return std::pair{x, y};
  };
  ToyTask t;
  auto [xt, yt] = sample(512);
  auto [xe, ye] = sample(256);
  auto [xc, yc] = sample(128);
  t.data = {{"train.inputs", xt}, {"train.targets", yt}, {"eval.inputs", xe}, {"eval.targets", ye}, {"calib.inputs", xc}};
  t.model.name = "toy-regression";
  t.model.input_dim = in;
  t.model.layers = {make_linear("fc1", in, hidden), make_activation("act1", ActivationKind::Gelu),
                    make_linear("fc2", hidden, 1)};
  t.model.loss = LossKind::MeanSquared;
  init_graph(t.model, seed + 1);
  zero_grad(t.model);
  return t;
}

// ---------------------------------------------------------------------------
// Spiral classification: `classes` interleaved arms in the plane.

inline ToyTask make_spiral(std::uint64_t seed, std::size_t classes = 3, std::size_t hidden = 64) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 0.15);
  auto sample = [&](std::size_t rows) {
    Tensor x({rows, 2}), y({rows});
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t c = r % classes;
      const double t = u(rng);
      const double angle = 4.0 * t + 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      x.at(r, 0) = t * std::cos(angle) * 2.0 + n(rng) * t;
      x.at(r, 1) = t * std::sin(angle) * 2.0 + n(rng) * t;
      y[r] = static_cast<double>(c);
    }
    return std::pair{x, y};
  };
  ToyTask t;
  auto [xt, yt] = sample(600);
  auto [xe, ye] = sample(300);
  auto [xc, yc] = sample(150);
  t.data = {{"train.inputs", xt}, {"train.targets", yt}, {"eval.inputs", xe}, {"eval.targets", ye}, {"calib.inputs", xc}};
  t.model.name = "toy-spiral";
  t.model.input_dim = 2;
  t.model.layers = {make_linear("fc1", 2, hidden), make_activation("act1", ActivationKind::Relu),
                    make_linear("fc2", hidden, hidden), make_activation("act2", ActivationKind::Relu),
                    make_linear("fc3", hidden, classes)};
  t.model.loss = LossKind::CrossEntropy;
  init_graph(t.model, seed + 1);
  zero_grad(t.model);
  return t;
}

// ---------------------------------------------------------------------------
// Character corpus

inline constexpr std::string_view kAlphabet = "abcdefghijklmnopqrstuvwxyz .";

/// Pseudo-English text from a tiny template grammar; deterministic in `seed`.
inline std::string generate_corpus(std::size_t chars, std::uint64_t seed) {
  static const std::vector<std::string> det{"the", "a", "one", "every", "some"};
  static const std::vector<std::string> adj{"small", "red", "quiet", "old", "bright", "lazy", "green", "happy"};
  static const std::vector<std::string> noun{"cat", "dog", "bird", "child", "farmer", "river", "house", "tree", "ship", "queen"};
  static const std::vector<std::string> verb{"sees", "likes", "finds", "follows", "paints", "hears", "takes", "moves"};
  static const std::vector<std::string> prep{"near", "under", "over", "behind", "with"};
  std::mt19937_64 rng(seed);
  auto pick = [&](const std::vector<std::string>& v) {
    // Zipf-like: earlier words are more frequent.
    std::discrete_distribution<std::size_t> d(v.size(), 0.0, 1.0, [&](double x) { return 1.0 / (1.0 + x * static_cast<double>(v.size())); });
    return v[d(rng)];
  };
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::string out;
  while (out.size() < chars) {
    std::string s = pick(det);
    if (u(rng) < 0.5) s += " " + pick(adj);
    s += " " + pick(noun) + " " + pick(verb) + " " + pick(det);
    if (u(rng) < 0.3) s += " " + pick(adj);
    s += " " + pick(noun);
    if (u(rng) < 0.4) s += " " + pick(prep) + " " + pick(det) + " " + pick(noun);
    out += s + ". ";
  }
  out.resize(chars);
  return out;
}

inline std::vector<int> encode_text(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (char c : text) {
    const auto pos = kAlphabet.find(c);
    if (pos == std::string_view::npos) throw ValueError(std::string("character '") + c + "' not in alphabet");
    ids.push_back(static_cast<int>(pos));
  }
  return ids;
}

/// Cut `ids` into `count` windows of seq+1 tokens at seeded offsets; inputs
/// are the first seq tokens, targets the next-token shift.
inline std::pair<Tensor, Tensor> lm_windows(const std::vector<int>& ids, std::size_t count, std::size_t seq,
                                            std::uint64_t seed) {
  if (ids.size() <= seq + 1) throw ValueError("corpus shorter than one window");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> start(0, ids.size() - seq - 1);
  Tensor x({count, seq}), y({count, seq});
  for (std::size_t w = 0; w < count; ++w) {
    const std::size_t s = start(rng);
    for (std::size_t t = 0; t < seq; ++t) {
      x.at(w, t) = ids[s + t];
      y.at(w, t) = ids[s + t + 1];
    }
  }
  return {x, y};
}

// ---------------------------------------------------------------------------
// Toy transformer LM

struct LmShape {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn = 256;
  std::size_t blocks = 2;
  std::size_t seq = 32;
};

inline ModelGraph make_transformer_lm(const LmShape& s, std::size_t vocab) {
  ModelGraph g;
  g.name = "toy-lm";
  g.embedding = make_embedding(vocab, s.seq, s.dim);
  for (std::size_t b = 0; b < s.blocks; ++b) {
    const std::string p = "blk" + std::to_string(b);
    g.layers.push_back(make_residual(p + ".attn_res", {make_layernorm(p + ".ln1", s.dim),
                                                       make_attention(p + ".attn", s.dim, s.heads, true)}));
    g.layers.push_back(make_residual(p + ".ffn_res", {make_layernorm(p + ".ln2", s.dim), make_linear(p + ".fc1", s.dim, s.ffn),
                                                      make_activation(p + ".gelu", ActivationKind::Gelu),
                                                      make_linear(p + ".fc2", s.ffn, s.dim)}));
  }
  g.layers.push_back(make_layernorm("ln_f", s.dim));
  g.layers.push_back(make_linear("head", s.dim, vocab));
  g.loss = LossKind::CrossEntropy;
  return g;
}

/// Adam, used only for pretraining the toy models in full precision.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ModelGraph& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    visit_parameters(g, [&](const std::string& name, Parameter& p) {
      auto& [m, v] = state_[name];
      if (m.size() != p.value.numel()) {
        m.assign(p.value.numel(), 0.0);
        v.assign(p.value.numel(), 0.0);
      }
      for (std::size_t i = 0; i < p.value.numel(); ++i) {
        const double gr = p.grad[i];
        m[i] = b1_ * m[i] + (1 - b1_) * gr;
        v[i] = b2_ * v[i] + (1 - b2_) * gr * gr;
        p.value[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    });
  }

  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> state_;
};

/// Full-precision Adam pretraining on batches drawn from `inputs`/`targets`
/// (leading axis = examples). Returns the loss of the final step.
inline double pretrain(ModelGraph& g, const Tensor& inputs, const Tensor& targets, std::size_t steps,
                       std::size_t batch, double lr, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t rows = inputs.dim(0);
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  const std::size_t xs = inputs.numel() / rows, ys = targets.numel() / rows;
  Adam opt(lr);
  double loss = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    Shape xshape = inputs.shape(), yshape = targets.shape();
    xshape[0] = yshape[0] = batch;
    Tensor bx(xshape), by(yshape);
    for (std::size_t r = 0; r < batch; ++r) {
      const std::size_t k = pick(rng);
      std::copy_n(inputs.values().begin() + static_cast<std::ptrdiff_t>(k * xs), xs, bx.values().begin() + static_cast<std::ptrdiff_t>(r * xs));
      std::copy_n(targets.values().begin() + static_cast<std::ptrdiff_t>(k * ys), ys, by.values().begin() + static_cast<std::ptrdiff_t>(r * ys));
    }
    opt.set_lr(lr * std::min(1.0, 2.0 * static_cast<double>(steps - step) / static_cast<double>(steps)));
    zero_grad(g);
    ForwardOptions fo;
    fo.quantize = false;
    fo.record = true;
    const Tensor out = forward(g, bx, fo);
    const LossResult l = compute_loss(g.loss, out, by);
    if (!std::isfinite(l.loss)) throw NumericError("pretraining diverged at step " + std::to_string(step));
    backward(g, l.grad);
    opt.step(g);
    loss = l.loss;
  }
  return loss;
}

/// Make a few channels of every pre-matmul layernorm output `factor` times
/// larger and shrink the matching weight input columns of its consumers by
/// the same factor. The network function is unchanged in exact arithmetic;
/// activations gain the heavy outlier channels seen in large language
/// models. Returns the chosen channel indices.
inline std::vector<std::size_t> inject_outliers(ModelGraph& g, std::size_t channels, double factor,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> chosen;
  for (auto& res : g.layers) {
    if (res.kind != LayerKind::Residual || res.children.size() < 2) continue;
    Layer& ln = res.children[0];
    if (ln.kind != LayerKind::LayerNorm) continue;
    const std::size_t dim = ln.in_features;
    std::vector<std::size_t> idx(dim);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(channels, dim));
    std::sort(idx.begin(), idx.end());
    std::vector<Layer*> consumers;
    Layer& next = res.children[1];
    if (next.kind == LayerKind::Attention) {
      for (std::size_t k = 0; k < 3; ++k) consumers.push_back(&next.children[k]);
    } else if (next.kind == LayerKind::Linear) {
      consumers.push_back(&next);
    } else {
      continue;
    }
    for (std::size_t c : idx) {
      ln.param("gamma").value[c] *= factor;
      ln.param("beta").value[c] *= factor;
      for (Layer* l : consumers) {
        Tensor& w = l->param("weight").value;
        for (std::size_t o = 0; o < l->out_features; ++o) w.at(o, c) /= factor;
      }
      chosen.push_back(c);
    }
  }
  return chosen;
}

struct LmTaskOptions {
  LmShape shape;
  std::size_t corpus_chars = 60000;
  std::size_t train_windows = 2048;
  std::size_t eval_windows = 64;
  std::size_t calib_windows = 32;
  std::size_t pretrain_steps = 600;
  std::size_t pretrain_batch = 16;
  double pretrain_lr = 3e-3;
  std::size_t outlier_channels = 3;
  double outlier_factor = 24.0;
};

/// Build, pretrain and outlier-inject the toy transformer LM. Parameters
/// are rounded to float32 so the in-memory model equals its saved form.
inline ToyTask make_transformer_task(std::uint64_t seed, const LmTaskOptions& o = {}) {
  const std::vector<int> ids = encode_text(generate_corpus(o.corpus_chars, seed));
  const std::size_t split = ids.size() * 9 / 10;
  const std::vector<int> train(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(split));
  const std::vector<int> held(ids.begin() + static_cast<std::ptrdiff_t>(split), ids.end());
  ToyTask t;
  auto [xt, yt] = lm_windows(train, o.train_windows, o.shape.seq, seed + 1);
  auto [xe, ye] = lm_windows(held, o.eval_windows, o.shape.seq, seed + 2);
  auto [xc, yc] = lm_windows(train, o.calib_windows, o.shape.seq, seed + 3);
  t.data = {{"train.inputs", xt}, {"train.targets", yt}, {"eval.inputs", xe}, {"eval.targets", ye}, {"calib.inputs", xc}};
  t.model = make_transformer_lm(o.shape, kAlphabet.size());
  init_graph(t.model, seed + 4);
  pretrain(t.model, xt, yt, o.pretrain_steps, o.pretrain_batch, o.pretrain_lr, seed + 5);
  inject_outliers(t.model, o.outlier_channels, o.outlier_factor, seed + 6);
  round_parameters_to_f32(t.model);
  zero_grad(t.model);
  return t;
}

}  // namespace qsim::tasks

#endif  // QSIM_TASKS_HPP_
