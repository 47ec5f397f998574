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

// Evaluation sweeps: a grid of quantization cells run against one model and
// dataset, reported per layer and end to end against a full-precision
// reference.

#ifndef QSIM_SWEEP_HPP_
#define QSIM_SWEEP_HPP_

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "qsim/abfp.hpp"
#include "qsim/error.hpp"
#include "qsim/formats.hpp"
#include "qsim/graph.hpp"
#include "qsim/io.hpp"
#include "qsim/quant.hpp"

namespace qsim {

using json = nlohmann::ordered_json;

/// Finite stand-in for infinite SNR (no measurable error) in reports.
inline constexpr double kSnrCeilingDb = 300.0;

enum class Method { Reference, StaticMse, Abfp, AbfpSq, AbfpQat };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Reference: return "reference";
    case Method::StaticMse: return "static-mse";
    case Method::Abfp: return "abfp";
    case Method::AbfpSq: return "abfp-sq";
    case Method::AbfpQat: return "abfp-qat";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "reference") return Method::Reference;
  if (s == "static-mse") return Method::StaticMse;
  if (s == "abfp") return Method::Abfp;
  if (s == "abfp-sq") return Method::AbfpSq;
  if (s == "abfp-qat") return Method::AbfpQat;
  throw ParseError("unknown method '" + s + "' (static-mse, abfp, abfp-sq, abfp-qat)", 0);
}

struct CellConfig {
  std::string id;  // empty: derived from the other fields
  Method method = Method::Abfp;
  NumericFormat wfmt = NumericFormat::integer(4);
  NumericFormat afmt = NumericFormat::integer(8);
  std::optional<NumericFormat> ofmt;
  std::size_t n = 64;
  bool smoothquant = false;  // forced on by abfp-sq
  double sq_strength = kDefaultSmoothingStrength;
  CalibrationMethod calibration = CalibrationMethod::MSE;  // static activations
  std::size_t qat_steps = 500;
  double qat_lr = 0.01;
  double clip_norm = 1.0;

  bool uses_abfp() const { return method == Method::Abfp || method == Method::AbfpSq || method == Method::AbfpQat; }
  bool uses_smoothing() const { return method == Method::AbfpSq || (smoothquant && method != Method::Reference); }

  std::string label() const {
    if (!id.empty()) return id;
    if (method == Method::Reference) return "reference";
    std::string s = to_string(method) + "-w" + wfmt.name() + "-a" + afmt.name();
    if (ofmt) s += "-o" + ofmt->name();
    if (uses_abfp()) s += "-n" + std::to_string(n);
    if (smoothquant && method != Method::AbfpSq) s += "-sq";
    return s;
  }
};

struct SweepConfig {
  std::uint64_t seed = 0;
  std::size_t batch = 8;
  std::size_t grid = kDefaultMseGrid;
  SmoothingScope scope = SmoothingScope::AllMatmul;
  bool timing = false;
  std::vector<CellConfig> cells;
};

inline CellConfig reference_cell() {
  CellConfig c;
  c.id = "reference";
  c.method = Method::Reference;
  c.wfmt = c.afmt = NumericFormat::fp32();
  return c;
}

namespace detail {

inline void apply_cell_fields(CellConfig& c, const json& j) {
  static const std::set<std::string> known{"id", "method", "wfmt", "afmt", "ofmt", "n", "smoothquant",
                                           "sq_strength", "calibration", "qat_steps", "qat_lr", "clip_norm"};
  if (!j.is_object()) throw ParseError("sweep cell must be a JSON object", 0);
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) throw ParseError("unknown sweep cell field '" + key + "'", 0);
  }
  try {
    if (j.contains("id")) c.id = j["id"].get<std::string>();
    if (j.contains("method")) c.method = parse_method(j["method"].get<std::string>());
    if (j.contains("wfmt")) c.wfmt = parse_format(j["wfmt"].get<std::string>());
    if (j.contains("afmt")) c.afmt = parse_format(j["afmt"].get<std::string>());
    if (j.contains("ofmt")) {
      if (j["ofmt"].is_null() || j["ofmt"] == "none") c.ofmt.reset();
      else c.ofmt = parse_format(j["ofmt"].get<std::string>());
    }
    if (j.contains("n")) c.n = j["n"].get<std::size_t>();
    if (j.contains("smoothquant")) c.smoothquant = j["smoothquant"].get<bool>();
    if (j.contains("sq_strength")) c.sq_strength = j["sq_strength"].get<double>();
    if (j.contains("calibration")) {
      const auto m = j["calibration"].get<std::string>();
      if (m == "mse") c.calibration = CalibrationMethod::MSE;
      else if (m == "max") c.calibration = CalibrationMethod::StaticMax;
      else throw ParseError("calibration must be 'mse' or 'max', got '" + m + "'", 0);
    }
    if (j.contains("qat_steps")) c.qat_steps = j["qat_steps"].get<std::size_t>();
    if (j.contains("qat_lr")) c.qat_lr = j["qat_lr"].get<double>();
    if (j.contains("clip_norm")) c.clip_norm = j["clip_norm"].get<double>();
  } catch (const json::exception& e) {
    throw ParseError(std::string("sweep cell: ") + e.what(), 0);
  }
  if (c.n < 1) throw ParseError("block length n must be >= 1", 0);
  if (!(c.sq_strength >= 0.0 && c.sq_strength <= 1.0)) throw ParseError("sq_strength must lie in [0, 1]", 0);
}

}  // namespace detail

/// Parse a sweep configuration:
///
///   {"seed": 0, "batch": 8, "grid": 2048, "smoothing_scope": "all",
///    "defaults": {<cell fields>}, "cells": [{<cell fields>}, ...]}
///
/// Cell fields: id, method, wfmt, afmt, ofmt, n, smoothquant, sq_strength,
/// calibration (mse|max), qat_steps, qat_lr, clip_norm.
inline SweepConfig parse_sweep_config(const json& j) {
  static const std::set<std::string> known{"seed", "batch", "grid", "smoothing_scope", "defaults", "cells"};
  if (!j.is_object()) throw ParseError("sweep config must be a JSON object", 0);
  for (const auto& [key, v] : j.items()) {
    if (!known.count(key)) throw ParseError("unknown sweep config field '" + key + "'", 0);
  }
  SweepConfig s;
  CellConfig defaults;
  try {
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("batch")) s.batch = j["batch"].get<std::size_t>();
    if (j.contains("grid")) s.grid = j["grid"].get<std::size_t>();
    if (j.contains("smoothing_scope")) {
      const auto v = j["smoothing_scope"].get<std::string>();
      if (v == "all") s.scope = SmoothingScope::AllMatmul;
      else if (v == "linear") s.scope = SmoothingScope::LinearOnly;
      else throw ParseError("smoothing_scope must be 'all' or 'linear'", 0);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("sweep config: ") + e.what(), 0);
  }
  if (s.batch < 1) throw ParseError("batch must be >= 1", 0);
  if (s.grid < 2) throw ParseError("grid must be >= 2", 0);
  if (j.contains("defaults")) detail::apply_cell_fields(defaults, j["defaults"]);
  if (j.contains("cells")) {
    if (!j["cells"].is_array()) throw ParseError("'cells' must be an array", 0);
    for (const auto& cj : j["cells"]) {
      CellConfig c = defaults;
      detail::apply_cell_fields(c, cj);
      s.cells.push_back(c);
    }
  }
  std::set<std::string> ids{"reference"};
  for (const auto& c : s.cells) {
    if (c.method == Method::Reference) continue;
    if (!ids.insert(c.label()).second) throw ParseError("duplicate or reserved cell id '" + c.label() + "'", 0);
  }
  return s;
}

inline SweepConfig load_sweep_config(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
  return parse_sweep_config(j);
}

/// Quantizers a cell attaches to every Linear, Attention projection and
/// Conv2d layer.
inline QuantPolicy cell_policy(const CellConfig& c) {
  QuantPolicy p;
  if (c.method == Method::Reference) return p;
  LayerQuantizers q;
  if (c.uses_abfp()) {
    AbfpConfig w{c.n, Orientation::Rows, c.wfmt, ScaleStorage::BF16};
    AbfpConfig a{c.n, Orientation::Columns, c.afmt, ScaleStorage::BF16};
    q.weight = TensorQuantizer(w);
    q.input = TensorQuantizer(a);
    if (c.ofmt) q.output = TensorQuantizer(AbfpConfig{c.n, Orientation::Columns, *c.ofmt, ScaleStorage::BF16});
  } else {
    // Weights are fixed, so dynamic per-channel abs-max equals a static
    // per-channel max calibration.
    QuantSpec w;
    w.format = c.wfmt;
    w.granularity = Granularity::per_channel(0);
    QuantSpec a;
    a.format = c.afmt;
    a.calibration = c.calibration;
    q.weight = TensorQuantizer(w);
    q.input = TensorQuantizer(a);
    if (c.ofmt) {
      QuantSpec o = a;
      o.format = *c.ofmt;
      q.output = TensorQuantizer(o);
    }
  }
  for (LayerKind k : {LayerKind::Linear, LayerKind::Attention, LayerKind::Conv2d}) p.by_kind[k] = q;
  return p;
}

/// Dataset splits a sweep or training run draws from.
struct SweepData {
  Tensor eval_inputs, eval_targets;
  std::vector<Tensor> calib;  // batches
  Tensor train_inputs, train_targets;
  bool has_train = false;

  static SweepData from_archive(const TensorArchive& a, std::size_t batch) {
    SweepData d;
    d.eval_inputs = archive_entry(a, "eval.inputs");
    d.eval_targets = archive_entry(a, "eval.targets");
    if (a.count("train.inputs") && a.count("train.targets")) {
      d.train_inputs = a.at("train.inputs");
      d.train_targets = a.at("train.targets");
      if (d.train_inputs.rank() == 0 || d.train_targets.rank() == 0 ||
          d.train_inputs.dim(0) != d.train_targets.dim(0)) {
        throw DataError("train.inputs and train.targets disagree on the number of examples");
      }
      d.has_train = true;
    }
    const Tensor& calib = a.count("calib.inputs") ? a.at("calib.inputs") : archive_entry(a, "train.inputs");
    d.calib = split_batches(calib, batch);
    if (d.eval_inputs.rank() == 0 || d.eval_targets.rank() == 0 || d.eval_inputs.dim(0) != d.eval_targets.dim(0)) {
      throw DataError("eval.inputs and eval.targets disagree on the number of examples");
    }
    return d;
  }
};

/// Draw a training batch of `batch` examples with `rng`.
inline Batch sample_batch(const Tensor& inputs, const Tensor& targets, std::size_t batch, std::mt19937_64& rng) {
  const std::size_t rows = inputs.dim(0);
  const std::size_t xs = inputs.numel() / rows, ys = targets.numel() / rows;
  std::uniform_int_distribution<std::size_t> pick(0, rows - 1);
  Shape xshape = inputs.shape(), yshape = targets.shape();
  xshape[0] = yshape[0] = batch;
  Batch b{Tensor(xshape), Tensor(yshape)};
  for (std::size_t r = 0; r < batch; ++r) {
    const std::size_t k = pick(rng);
    std::copy_n(inputs.values().begin() + static_cast<std::ptrdiff_t>(k * xs), xs,
                b.inputs.values().begin() + static_cast<std::ptrdiff_t>(r * xs));
    std::copy_n(targets.values().begin() + static_cast<std::ptrdiff_t>(k * ys), ys,
                b.targets.values().begin() + static_cast<std::ptrdiff_t>(r * ys));
  }
  return b;
}

/// Attach a cell's quantizers to a copy of `base`, then smooth, calibrate
/// and fine-tune as the method requires.
inline ModelGraph prepare_cell(const ModelGraph& base, const CellConfig& c, const SweepData& data,
                               const SweepConfig& cfg) {
  ModelGraph g = replace_layers(base, cell_policy(c));
  if (c.uses_smoothing()) enable_smoothing(g, data.calib, c.sq_strength, cfg.scope);
  CalibrationOptions copt;
  copt.grid_size = cfg.grid;
  copt.seed = cfg.seed;
  bool static_layers = false;
  visit_layers(g, [&](const Layer& l) {
    if (l.quantizers && (l.quantizers->input.needs_calibration() ||
                         (l.quantizers->output && l.quantizers->output->needs_calibration()))) {
      static_layers = true;
    }
  });
  if (static_layers) calibrate(g, data.calib, copt);
  if (c.method == Method::AbfpQat) {
    if (!data.has_train) throw DataError("abfp-qat needs train.inputs and train.targets");
    std::mt19937_64 rng(cfg.seed);
    TrainOptions topt;
    topt.clip_norm = c.clip_norm;
    for (std::size_t step = 0; step < c.qat_steps; ++step) {
      try {
        train_step(g, sample_batch(data.train_inputs, data.train_targets, cfg.batch, rng), c.qat_lr, topt);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at QAT step " + std::to_string(step));
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Running and reporting

struct LayerMetric {
  std::string name;
  double mse = 0.0;
  double snr_db = kSnrCeilingDb;
};

struct CellResult {
  CellConfig config;
  bool ok = false;
  std::string error_kind;  // numeric | data | config | error
  std::string error;
  double end_loss = 0.0;
  std::optional<double> end_accuracy;
  std::vector<LayerMetric> layers;
  double wall_s = 0.0;
};

struct SweepReport {
  std::string model;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::None;
  bool timing = false;
  std::vector<CellResult> cells;  // reference first
};

namespace detail {

struct EvalCapture {
  double loss = 0.0;
  std::size_t correct = 0, count = 0;
  std::map<std::string, std::vector<Tensor>> outputs;  // per layer, per batch
};

inline EvalCapture run_eval(ModelGraph& g, const SweepData& data, std::size_t batch, bool quantize) {
  EvalCapture cap;
  std::set<std::string> names;
  for (const auto& n : matmul_layer_names(g)) names.insert(n);
  ForwardOptions opt;
  opt.quantize = quantize;
  opt.on_output = [&](const Layer& l, const Tensor& y) {
    if (names.count(l.name)) cap.outputs[l.name].push_back(y);
  };
  const auto xs = split_batches(data.eval_inputs, batch);
  const auto ys = split_batches(data.eval_targets, batch);
  double weighted = 0.0;
  std::size_t weight = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor out = forward(g, xs[i], opt);
    const LossResult l = compute_loss(g.loss, out, ys[i]);
    weighted += l.loss * static_cast<double>(l.count);
    weight += l.count;
    cap.correct += l.correct;
    cap.count += l.count;
  }
  cap.loss = weight ? weighted / static_cast<double>(weight) : 0.0;
  if (!std::isfinite(cap.loss)) throw NumericError("non-finite evaluation loss");
  return cap;
}

inline LayerMetric compare_layer(const std::string& name, const std::vector<Tensor>& ref,
                                 const std::vector<Tensor>& got) {
  if (ref.size() != got.size()) throw ValueError("layer " + name + " ran a different number of times");
  double err = 0.0, sig = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    err += squared_error(ref[i], got[i]);
    for (double v : ref[i].values()) sig += v * v;
    n += ref[i].numel();
  }
  LayerMetric m{name, n ? err / static_cast<double>(n) : 0.0, kSnrCeilingDb};
  if (!std::isfinite(err)) throw NumericError("non-finite output error at layer " + name);
  if (err > 0.0) {
    m.snr_db = sig > 0.0 ? std::clamp(10.0 * std::log10(sig / err), -kSnrCeilingDb, kSnrCeilingDb) : -kSnrCeilingDb;
  }
  return m;
}

}  // namespace detail

/// Run every cell of `cfg` against `base`. The full-precision reference row
/// is always present and first. Cells are independent: each one starts
/// from `base` and the configured seed, so removing a cell or changing
/// `jobs` never changes another row. A failing cell is recorded and the
/// sweep continues.
inline SweepReport run_sweep(const ModelGraph& base, const SweepData& data, const SweepConfig& cfg,
                             std::size_t jobs = 1) {
  SweepReport report;
  report.model = base.name;
  report.seed = cfg.seed;
  report.loss = base.loss;
  report.timing = cfg.timing;
  if (base.loss == LossKind::None) throw DataError("model has no loss head; sweeps need an end metric");

  ModelGraph ref_graph = base;
  strip_quantizers(ref_graph);
  clear_smoothing(ref_graph);
  const detail::EvalCapture ref = detail::run_eval(ref_graph, data, cfg.batch, false);

  std::vector<CellConfig> cells{reference_cell()};
  for (const auto& c : cfg.cells)
    if (c.method != Method::Reference) cells.push_back(c);
  report.cells.resize(cells.size());

  auto run_cell = [&](std::size_t i) {
    CellResult& r = report.cells[i];
    r.config = cells[i];
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ModelGraph g = prepare_cell(ref_graph, cells[i], data, cfg);
      const detail::EvalCapture got = detail::run_eval(g, data, cfg.batch, true);
      r.end_loss = got.loss;
      if (base.loss == LossKind::CrossEntropy && got.count) {
        r.end_accuracy = static_cast<double>(got.correct) / static_cast<double>(got.count);
      }
      for (const auto& name : matmul_layer_names(g)) {
        auto ri = ref.outputs.find(name);
        auto gi = got.outputs.find(name);
        if (ri == ref.outputs.end() || gi == got.outputs.end()) {
          throw ValueError("layer " + name + " produced no output during evaluation");
        }
        r.layers.push_back(detail::compare_layer(name, ri->second, gi->second));
      }
      r.ok = true;
    } catch (const NumericError& e) {
      r.error_kind = "numeric";
      r.error = e.what();
    } catch (const ParseError& e) {
      r.error_kind = "config";
      r.error = e.what();
    } catch (const DataError& e) {
      r.error_kind = "data";
      r.error = e.what();
    } catch (const std::exception& e) {
      r.error_kind = "error";
      r.error = e.what();
    }
    if (!r.ok) r.layers.clear();
    r.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  jobs = std::clamp<std::size_t>(jobs, 1, cells.size());
  if (jobs == 1) {
    for (std::size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) run_cell(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return report;
}

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string cell_n(const CellConfig& c) { return c.uses_abfp() ? std::to_string(c.n) : "-"; }

inline std::string cell_sq(const CellConfig& c) { return c.uses_smoothing() ? fmt("%.3f", c.sq_strength) : "off"; }

}  // namespace detail

/// Comma-separated report, one row per (cell, matmul layer); a failed cell
/// is a single row with empty metric fields. Columns:
///
///   cell,method,weights,activations,outputs,n,smoothquant,status,layer,
///   mse,snr_db,end_loss,end_accuracy,error[,wall_s]
///
/// mse and end_loss print as %.9e, snr_db and end_accuracy as %.6f.
inline std::string report_csv(const SweepReport& r) {
  std::ostringstream out;
  out << "cell,method,weights,activations,outputs,n,smoothquant,status,layer,mse,snr_db,end_loss,end_accuracy,error";
  if (r.timing) out << ",wall_s";
  out << "\n";
  for (const auto& c : r.cells) {
    const CellConfig& k = c.config;
    const std::string prefix = detail::csv_quote(k.label()) + "," + to_string(k.method) + "," + k.wfmt.name() + "," +
                               k.afmt.name() + "," + (k.ofmt ? k.ofmt->name() : "none") + "," + detail::cell_n(k) + "," +
                               detail::cell_sq(k) + ",";
    const std::string tail = r.timing ? "," + detail::fmt("%.3f", c.wall_s) : "";
    if (!c.ok) {
      out << prefix << "error:" << c.error_kind << ",,,,,," << detail::csv_quote(c.error) << tail << "\n";
      continue;
    }
    const std::string end = detail::fmt("%.9e", c.end_loss) + "," +
                            (c.end_accuracy ? detail::fmt("%.6f", *c.end_accuracy) : std::string());
    for (const auto& l : c.layers) {
      out << prefix << "ok," << l.name << "," << detail::fmt("%.9e", l.mse) << "," << detail::fmt("%.6f", l.snr_db)
          << "," << end << "," << tail << "\n";
    }
  }
  return out.str();
}

/// Structured variant of the same report.
inline json report_json(const SweepReport& r) {
  json j;
  j["format"] = "qsim-sweep-report 1";
  j["model"] = r.model;
  j["seed"] = r.seed;
  j["end_metric"] = r.loss == LossKind::CrossEntropy ? "cross_entropy" : "mse";
  j["cells"] = json::array();
  for (const auto& c : r.cells) {
    const CellConfig& k = c.config;
    json cj;
    cj["id"] = k.label();
    cj["method"] = to_string(k.method);
    cj["weights"] = k.wfmt.name();
    cj["activations"] = k.afmt.name();
    cj["outputs"] = k.ofmt ? json(k.ofmt->name()) : json(nullptr);
    cj["n"] = k.uses_abfp() ? json(k.n) : json(nullptr);
    cj["smoothquant"] = k.uses_smoothing() ? json(k.sq_strength) : json(nullptr);
    if (k.method == Method::AbfpQat) cj["qat"] = {{"steps", k.qat_steps}, {"lr", k.qat_lr}, {"clip_norm", k.clip_norm}};
    cj["status"] = c.ok ? "ok" : "error";
    if (c.ok) {
      cj["end"] = {{"loss", c.end_loss}};
      if (c.end_accuracy) cj["end"]["accuracy"] = *c.end_accuracy;
      cj["layers"] = json::array();
      for (const auto& l : c.layers) cj["layers"].push_back({{"name", l.name}, {"mse", l.mse}, {"snr_db", l.snr_db}});
    } else {
      cj["error"] = {{"kind", c.error_kind}, {"message", c.error}};
    }
    if (r.timing) cj["wall_s"] = c.wall_s;
    j["cells"].push_back(cj);
  }
  return j;
}

inline const CellResult* find_cell(const SweepReport& r, const std::string& id) {
  for (const auto& c : r.cells)
    if (c.config.label() == id) return &c;
  return nullptr;
}

}  // namespace qsim

#endif  // QSIM_SWEEP_HPP_
