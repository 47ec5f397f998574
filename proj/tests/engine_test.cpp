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

#include "qsim/graph.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace qsim {
namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> n(0.0, sd);
  Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = n(rng);
  return t;
}

LayerQuantizers int_quantizers(int wbits, int abits) {
  QuantSpec w;
  w.format = NumericFormat::integer(wbits);
  QuantSpec a;
  a.format = NumericFormat::integer(abits);
  return {TensorQuantizer(a), TensorQuantizer(w), std::nullopt};
}

ModelGraph two_linear_mlp(std::uint64_t seed) {
  ModelGraph g;
  g.input_dim = 3;
  g.layers.push_back(make_linear("fc1", 3, 5));
  g.layers.push_back(make_activation("act", ActivationKind::Gelu));
  g.layers.push_back(make_linear("fc2", 5, 2));
  g.loss = LossKind::MeanSquared;
  init_graph(g, seed);
  return g;
}

// Central-difference check of every parameter gradient and of the input
// gradient, with quantization disabled.
void check_gradients(ModelGraph& g, const Batch& batch, double tol, bool check_input = true) {
  zero_grad(g);
  ForwardOptions rec;
  rec.quantize = false;
  rec.record = true;
  const Tensor out = forward(g, batch.inputs, rec);
  const LossResult l = compute_loss(g.loss, out, batch.targets);
  const Tensor dx = backward(g, l.grad);
  auto loss_at = [&] { return evaluate(g, batch, false).loss; };
  const double h = 1e-6;
  visit_parameters(g, [&](const std::string& name, Parameter& p) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      const double up = loss_at();
      p.value[i] = keep - h;
      const double down = loss_at();
      p.value[i] = keep;
      const double fd = (up - down) / (2 * h);
      ASSERT_NEAR(p.grad[i], fd, tol * (1.0 + std::abs(fd))) << name << "[" << i << "]";
    }
  });
  if (!check_input) return;
  Batch probe = batch;
  for (std::size_t i = 0; i < probe.inputs.numel(); ++i) {
    const double keep = probe.inputs[i];
    probe.inputs[i] = keep + h;
    const double up = evaluate(g, probe, false).loss;
    probe.inputs[i] = keep - h;
    const double down = evaluate(g, probe, false).loss;
    probe.inputs[i] = keep;
    const double fd = (up - down) / (2 * h);
    ASSERT_NEAR(dx[i], fd, tol * (1.0 + std::abs(fd))) << "input[" << i << "]";
  }
}

TEST(ReplaceLayers, EmptyPolicyLeavesGraphUnchanged) {
  const ModelGraph g = two_linear_mlp(1);
  const ModelGraph r = replace_layers(g, {});
  for (std::size_t i = 0; i < g.layers.size(); ++i) EXPECT_FALSE(r.layers[i].quantizers.has_value());
}

TEST(ReplaceLayers, KindPolicyWrapsLinearsOnly) {
  QuantPolicy p;
  p.by_kind[LayerKind::Linear] = int_quantizers(4, 8);
  const ModelGraph r = replace_layers(two_linear_mlp(1), p);
  EXPECT_TRUE(r.layers[0].quantizers.has_value());
  EXPECT_FALSE(r.layers[1].quantizers.has_value());
  EXPECT_TRUE(r.layers[2].quantizers.has_value());
  EXPECT_EQ(r.layers[0].quantizers->weight.format(), NumericFormat::integer(4));
}

TEST(ReplaceLayers, NamePolicyWrapsOneLayer) {
  QuantPolicy p;
  p.by_name["fc2"] = int_quantizers(4, 4);
  const ModelGraph r = replace_layers(two_linear_mlp(1), p);
  EXPECT_FALSE(r.layers[0].quantizers.has_value());
  EXPECT_TRUE(r.layers[2].quantizers.has_value());
}

TEST(ReplaceLayers, Errors) {
  QuantPolicy p;
  p.by_name["fc9"] = int_quantizers(4, 4);
  EXPECT_THROW(replace_layers(two_linear_mlp(1), p), ValueError);
  QuantPolicy q;
  q.by_name["act"] = int_quantizers(4, 4);
  EXPECT_THROW(replace_layers(two_linear_mlp(1), q), ValueError);
}

TEST(ReplaceLayers, AttentionProjections) {
  ModelGraph g;
  g.layers.push_back(make_residual("blk", {make_layernorm("blk.ln", 4), make_attention("blk.attn", 4, 2)}));
  QuantPolicy p;
  p.by_kind[LayerKind::Attention] = int_quantizers(4, 8);
  p.by_name["blk.attn.v"] = int_quantizers(8, 8);
  const ModelGraph r = replace_layers(g, p);
  const Layer& attn = r.layers[0].children[1];
  EXPECT_FALSE(attn.quantizers.has_value());
  for (const auto& c : attn.children) ASSERT_TRUE(c.quantizers.has_value());
  EXPECT_EQ(attn.children[0].quantizers->weight.format(), NumericFormat::integer(4));
  EXPECT_EQ(attn.children[2].quantizers->weight.format(), NumericFormat::integer(8));
  EXPECT_EQ(matmul_layer_names(r), std::vector<std::string>{"blk.attn"});
}

Layer identity_linear(std::size_t n) {
  Layer l = make_linear("id", n, n, false);
  auto& w = l.param("weight").value;
  for (std::size_t i = 0; i < n; ++i) w.at(i, i) = 1.0;
  return l;
}

TEST(Forward, IdentityLinearWithoutQuantizers) {
  ModelGraph g;
  g.layers.push_back(identity_linear(4));
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({5, 4}, rng);
  EXPECT_EQ(forward(g, x), x);
}

TEST(Forward, IdentityLinearInt4) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x({6, 4});
  for (auto& v : x.storage()) v = u(rng);
  x[0] = 1.0;  // make the abs-max exactly 1

  ModelGraph weight_only;
  weight_only.layers.push_back(identity_linear(4));
  QuantSpec w4;
  w4.format = NumericFormat::integer(4);
  weight_only.layers[0].quantizers = LayerQuantizers{TensorQuantizer(), TensorQuantizer(w4), std::nullopt};
  EXPECT_EQ(forward(weight_only, x), x);

  ModelGraph both = weight_only;
  QuantSpec a4 = w4;
  a4.calibration = CalibrationMethod::StaticMax;
  both.layers[0].quantizers->input = TensorQuantizer(a4);
  both.layers[0].quantizers->input.set_scales(ScaleSet{Granularity::per_tensor(), {1.0}});
  const Tensor y = forward(both, x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(y[i], ScalarQuantizer(NumericFormat::integer(4), 1.0)(x[i]));
  }
}

TEST(Forward, UncalibratedStaticQuantizerThrows) {
  ModelGraph g = two_linear_mlp(2);
  QuantSpec a;
  a.format = NumericFormat::integer(8);
  a.calibration = CalibrationMethod::MSE;
  g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(a), TensorQuantizer(), std::nullopt};
  EXPECT_THROW(forward(g, Tensor({2, 3}, 1.0)), ValueError);
  EXPECT_THROW(forward(g, Tensor({2, 4}, 1.0)), ShapeError);
}

TEST(Forward, UniformAttentionAveragesValues) {
  // Two identical tokens: every score is equal, softmax is uniform, and the
  // context is the mean of the two (identical) value projections.
  Layer attn = make_attention("attn", 2, 1, false);
  std::mt19937_64 rng(5);
  init_layer(attn, rng);
  ModelGraph g;
  g.layers.push_back(attn);
  const Tensor x = Tensor::matrix({{0.3, -0.7}, {0.3, -0.7}});
  const Tensor y = forward(g, x);
  const Layer& v = g.layers[0].children[2];
  const Layer& o = g.layers[0].children[3];
  const Tensor vx = ops::matmul_nt(x, v.param("weight").value);
  Tensor mean({1, 2});
  for (std::size_t j = 0; j < 2; ++j) mean[j] = 0.5 * (vx.at(0, j) + vx.at(1, j));
  const Tensor expect = ops::matmul_nt(mean, o.param("weight").value);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) EXPECT_NEAR(y.at(i, j), expect[j], 1e-12);
}

TEST(Forward, UniformAttentionDistinctValues) {
  // Zero query/key weights force uniform scores even for different tokens.
  Layer attn = make_attention("attn", 2, 1, false);
  for (auto& c : attn.children) {
    auto& w = c.param("weight").value;
    w.at(0, 0) = w.at(1, 1) = 1.0;
  }
  std::fill(attn.children[0].param("weight").value.storage().begin(),
            attn.children[0].param("weight").value.storage().end(), 0.0);
  ModelGraph g;
  g.layers.push_back(attn);
  const Tensor y = forward(g, Tensor::matrix({{1.0, 2.0}, {3.0, 6.0}}));
  EXPECT_EQ(y, Tensor::matrix({{2.0, 4.0}, {2.0, 4.0}}));
}

TEST(Forward, CausalMaskHidesFuture) {
  Layer attn = make_attention("attn", 4, 2, true);
  std::mt19937_64 rng(6);
  init_layer(attn, rng);
  ModelGraph g;
  g.layers.push_back(attn);
  Tensor x = random_tensor({3, 4}, rng);
  const Tensor y1 = forward(g, x);
  for (std::size_t j = 0; j < 4; ++j) x.at(2, j) += 5.0;
  const Tensor y2 = forward(g, x);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(y1.at(i, j), y2.at(i, j));
}

TEST(Forward, ConvMatchesDirectConvolution) {
  std::mt19937_64 rng(7);
  Layer conv = make_conv2d("conv", 2, 3, 3, 2, 1);
  init_layer(conv, rng);
  conv.param("bias").value = random_tensor({3}, rng);
  ModelGraph g;
  g.layers.push_back(conv);
  const Tensor x = random_tensor({2, 2, 5, 6}, rng);
  const Tensor y = forward(g, x);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 3}));
  const Tensor& w = conv.param("weight").value;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t o = 0; o < 3; ++o)
      for (std::size_t oh = 0; oh < 3; ++oh)
        for (std::size_t ow = 0; ow < 3; ++ow) {
          double s = conv.param("bias").value[o];
          for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t kh = 0; kh < 3; ++kh)
              for (std::size_t kw = 0; kw < 3; ++kw) {
                const long ih = static_cast<long>(oh * 2 + kh) - 1, iw = static_cast<long>(ow * 2 + kw) - 1;
                if (ih < 0 || iw < 0 || ih >= 5 || iw >= 6) continue;
                s += w[((o * 2 + c) * 3 + kh) * 3 + kw] *
                     x[((b * 2 + c) * 5 + static_cast<std::size_t>(ih)) * 6 + static_cast<std::size_t>(iw)];
              }
          EXPECT_NEAR(y[((b * 3 + o) * 3 + oh) * 3 + ow], s, 1e-12);
        }
}

TEST(Forward, DisabledQuantizersAreBitIdentical) {
  std::mt19937_64 rng(8);
  ModelGraph g = two_linear_mlp(8);
  const Tensor x = random_tensor({7, 3}, rng);
  const Tensor ref = forward(g, x);
  QuantPolicy p;
  p.by_kind[LayerKind::Linear] = LayerQuantizers{TensorQuantizer(), TensorQuantizer(), TensorQuantizer()};
  ModelGraph q = replace_layers(g, p);
  EXPECT_EQ(forward(q, x), ref);
  ForwardOptions off;
  off.quantize = false;
  QuantPolicy p4;
  p4.by_kind[LayerKind::Linear] = int_quantizers(4, 4);
  ModelGraph q4 = replace_layers(g, p4);
  EXPECT_EQ(forward(q4, x, off), ref);
}

TEST(Forward, TransparencyBound) {
  // ||x W^T - x W_hat^T|| <= ||x|| ||W - W_hat|| (Frobenius norms).
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const int bits = 2 + trial % 7;
    ModelGraph g;
    g.layers.push_back(make_linear("fc", 6, 4, false));
    init_graph(g, 100 + trial);
    const Tensor x = random_tensor({5, 6}, rng);
    const Tensor ref = forward(g, x);
    QuantSpec w;
    w.format = NumericFormat::integer(bits);
    g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(), TensorQuantizer(w), std::nullopt};
    const Tensor y = forward(g, x);
    const Tensor& wt = g.layers[0].param("weight").value;
    const Tensor w_hat = g.layers[0].quantizers->weight.apply(wt);
    const double lhs = std::sqrt(squared_error(y, ref));
    const double xn = std::sqrt(squared_error(x, Tensor(x.shape())));
    const double wn = std::sqrt(squared_error(wt, w_hat));
    EXPECT_LE(lhs, xn * wn * (1 + 1e-12) + 1e-15) << "bits " << bits;
  }
}

TEST(Forward, OutputQuantizerDoesNotAffectUpstream) {
  std::mt19937_64 rng(10);
  ModelGraph g = two_linear_mlp(10);
  const Tensor x = random_tensor({4, 3}, rng);
  QuantPolicy p;
  p.by_kind[LayerKind::Linear] = int_quantizers(4, 8);
  ModelGraph a = replace_layers(g, p);
  ModelGraph b = a;
  QuantSpec o;
  o.format = NumericFormat::integer(4);
  b.layers[2].quantizers->output = TensorQuantizer(o);
  auto trace = [](ModelGraph& m, const Tensor& in) {
    std::vector<Tensor> seen;
    ForwardOptions opt;
    opt.on_matmul = [&](const Layer&, const MatmulTrace& t) {
      seen.push_back(t.input);
      seen.push_back(t.output);
    };
    forward(m, in, opt);
    return seen;
  };
  EXPECT_EQ(trace(a, x), trace(b, x));
  EXPECT_NE(forward(a, x), forward(b, x));
}

TEST(Backward, MlpGradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(11);
  ModelGraph g = two_linear_mlp(11);
  g.layers.insert(g.layers.begin() + 1, make_layernorm("ln", 5));
  g.layers[1].param("gamma").value = random_tensor({5}, rng);
  g.layers[1].param("beta").value = random_tensor({5}, rng);
  g.layers.push_back(make_activation("relu", ActivationKind::Relu));
  Batch b{random_tensor({4, 3}, rng), random_tensor({4, 2}, rng)};
  check_gradients(g, b, 1e-6);
}

TEST(Backward, TransformerBlockGradients) {
  std::mt19937_64 rng(12);
  ModelGraph g;
  g.embedding = make_embedding(7, 5, 8);
  g.layers.push_back(make_residual("b.attn_res", {make_layernorm("b.ln1", 8), make_attention("b.attn", 8, 2, true)}));
  g.layers.push_back(make_residual("b.ffn_res", {make_layernorm("b.ln2", 8), make_linear("b.fc1", 8, 12),
                                                 make_activation("b.gelu", ActivationKind::Gelu),
                                                 make_linear("b.fc2", 12, 8)}));
  g.layers.push_back(make_linear("head", 8, 7));
  g.loss = LossKind::CrossEntropy;
  init_graph(g, 12);
  Tensor ids({2, 5}), targets({2, 5});
  std::uniform_int_distribution<int> tok(0, 6);
  for (auto& v : ids.storage()) v = tok(rng);
  for (auto& v : targets.storage()) v = tok(rng);
  check_gradients(g, Batch{ids, targets}, 1e-5, false);
}

TEST(Backward, ConvAndSoftmaxGradients) {
  std::mt19937_64 rng(13);
  ModelGraph g;
  g.layers.push_back(make_conv2d("conv", 2, 3, 3, 1, 1));
  g.layers.push_back(make_flatten("flat"));
  g.layers.push_back(make_linear("fc", 3 * 4 * 4, 4));
  g.layers.push_back(make_activation("sm", ActivationKind::Softmax));
  g.loss = LossKind::MeanSquared;
  init_graph(g, 13);
  check_gradients(g, Batch{random_tensor({2, 2, 4, 4}, rng), random_tensor({2, 4}, rng)}, 1e-6);
}

TEST(Backward, SmoothedLayerGradients) {
  std::mt19937_64 rng(14);
  ModelGraph g = two_linear_mlp(14);
  const Tensor x = random_tensor({6, 3}, rng);
  std::vector<Tensor> calib{x};
  enable_smoothing(g, calib);
  ASSERT_TRUE(g.layers[0].smoothing.has_value());
  check_gradients(g, Batch{x, random_tensor({6, 2}, rng)}, 1e-6);
}

TEST(Backward, PwlMasksThroughQuantizedLinear) {
  // y = x_hat W_hat^T with a per-tensor static input threshold: dL/dx is the
  // straight-through gradient masked where |x| > alpha.
  ModelGraph g;
  g.layers.push_back(make_linear("fc", 3, 2, false));
  g.loss = LossKind::MeanSquared;
  init_graph(g, 15);
  QuantSpec a;
  a.format = NumericFormat::integer(4);
  a.calibration = CalibrationMethod::StaticMax;
  QuantSpec w;
  w.format = NumericFormat::integer(4);
  g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(a), TensorQuantizer(w), std::nullopt};
  g.layers[0].quantizers->input.set_scales(ScaleSet{Granularity::per_tensor(), {1.0}});
  const Tensor x = Tensor::matrix({{0.5, -2.0, 1.0}, {3.0, -0.25, -1.0}});
  const Tensor t({2, 2});
  zero_grad(g);
  ForwardOptions rec;
  rec.record = true;
  const Tensor y = forward(g, x, rec);
  const LossResult l = compute_loss(g.loss, y, t);
  const Tensor dx = backward(g, l.grad);
  const Tensor w_hat = g.layers[0].cache.w_hat;
  const Tensor straight = ops::matmul_nn(l.grad, w_hat);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(dx[i], std::abs(x[i]) <= 1.0 ? straight[i] : 0.0) << i;
  }
}

TEST(Backward, RequiresRecordedForward) {
  ModelGraph g = two_linear_mlp(16);
  forward(g, Tensor({1, 3}, 1.0));
  EXPECT_THROW(backward(g, Tensor({1, 2}, 1.0)), ValueError);
}

TEST(TrainStep, ZeroLearningRateKeepsParameters) {
  std::mt19937_64 rng(17);
  ModelGraph g = two_linear_mlp(17);
  QuantPolicy p;
  p.by_kind[LayerKind::Linear] = int_quantizers(4, 4);
  g = replace_layers(g, p);
  const ModelGraph before = g;
  train_step(g, Batch{random_tensor({4, 3}, rng), random_tensor({4, 2}, rng)}, 0.0);
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    for (const auto& [name, param] : g.layers[i].params)
      EXPECT_EQ(param.value, before.layers[i].params.at(name).value);
}

TEST(TrainStep, DisabledQuantizersMatchFullPrecision) {
  std::mt19937_64 rng(18);
  ModelGraph ref = two_linear_mlp(18);
  QuantPolicy p;
  p.by_kind[LayerKind::Linear] = LayerQuantizers{TensorQuantizer(), TensorQuantizer(), std::nullopt};
  ModelGraph q = replace_layers(ref, p);
  for (int step = 0; step < 20; ++step) {
    const Batch b{random_tensor({4, 3}, rng), random_tensor({4, 2}, rng)};
    EXPECT_EQ(train_step(ref, b, 0.05), train_step(q, b, 0.05));
  }
  EXPECT_EQ(ref.layers[0].param("weight").value, q.layers[0].param("weight").value);
}

TEST(TrainStep, ToyRegressionImprovesUnderAbfp) {
  std::mt19937_64 rng(19);
  ModelGraph g;
  g.input_dim = 8;
  g.layers.push_back(make_linear("fc", 8, 1));
  g.loss = LossKind::MeanSquared;
  init_graph(g, 19);
  AbfpConfig cfg;
  cfg.n = 4;
  cfg.orientation = Orientation::Rows;
  g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(), TensorQuantizer(cfg), std::nullopt};
  const Tensor teacher = random_tensor({1, 8}, rng);
  const Tensor x = random_tensor({64, 8}, rng);
  const Batch b{x, ops::matmul_nt(x, teacher)};
  const double start = evaluate(g, b).loss;
  for (int step = 0; step < 200; ++step) train_step(g, b, 0.05);
  EXPECT_LT(evaluate(g, b).loss, start);
}

TEST(TrainStep, NonFiniteLossThrows) {
  ModelGraph g = two_linear_mlp(20);
  Batch b{Tensor({1, 3}, 1.0), Tensor({1, 2}, std::numeric_limits<double>::infinity())};
  EXPECT_THROW(train_step(g, b, 0.1), NumericError);
  ModelGraph none = two_linear_mlp(20);
  none.loss = LossKind::None;
  EXPECT_THROW(train_step(none, Batch{Tensor({1, 3}), Tensor({1, 2})}, 0.1), ValueError);
}

TEST(Calibrate, ConstantDataGivesConstantThreshold) {
  ModelGraph g;
  g.layers.push_back(identity_linear(3));
  QuantSpec a;
  a.format = NumericFormat::integer(8);
  a.calibration = CalibrationMethod::StaticMax;
  g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(a), TensorQuantizer(), TensorQuantizer(a)};
  std::vector<Tensor> data{Tensor({4, 3}, -2.5), Tensor({2, 3}, 2.5)};
  const CalibrationTable t = calibrate(g, data);
  EXPECT_EQ(t.at("id.input").alphas, std::vector<double>{2.5});
  EXPECT_EQ(t.at("id.output").alphas, std::vector<double>{2.5});
  EXPECT_TRUE(t.count("id.weight"));
  ModelGraph fresh = g;
  fresh.layers[0].quantizers->input.clear_scales();
  fresh.layers[0].quantizers->output->clear_scales();
  apply_calibration(fresh, t);
  EXPECT_EQ(forward(fresh, data[0]), forward(g, data[0]));
}

TEST(Calibrate, LayerOutputTargetNoWorseOnOutputError) {
  std::mt19937_64 rng(21);
  ModelGraph g;
  g.layers.push_back(make_linear("fc", 16, 8, false));
  init_graph(g, 21);
  QuantSpec a;
  a.format = NumericFormat::integer(4);
  a.calibration = CalibrationMethod::MSE;
  g.layers[0].quantizers = LayerQuantizers{TensorQuantizer(a), TensorQuantizer(), std::nullopt};
  Tensor x = random_tensor({64, 16}, rng);
  for (std::size_t r = 0; r < 64; ++r) x.at(r, 3) *= 20.0;
  std::vector<Tensor> data{x};
  const ModelGraph ref = g;
  ModelGraph by_tensor = g, by_output = g;
  calibrate(by_tensor, data);
  CalibrationOptions opt;
  opt.mse_target = MseTarget::LayerOutput;
  opt.output_grid_size = 2048;
  calibrate(by_output, data, opt);
  ModelGraph fp = ref;
  fp.layers[0].quantizers.reset();
  const Tensor y = forward(fp, x);
  EXPECT_LE(squared_error(forward(by_output, x), y), squared_error(forward(by_tensor, x), y) * (1 + 1e-9));
}

}  // namespace
}  // namespace qsim
