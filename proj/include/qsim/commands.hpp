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

// Subcommands behind the qsim command-line tool. Each takes parsed options
// and throws qsim errors; the tool maps those to exit codes.

#ifndef QSIM_COMMANDS_HPP_
#define QSIM_COMMANDS_HPP_

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qsim/calibration.hpp"
#include "qsim/formats.hpp"
#include "qsim/graph.hpp"
#include "qsim/io.hpp"
#include "qsim/sweep.hpp"
#include "qsim/tasks.hpp"

namespace qsim::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

/// Flags shared by the subcommands. Optional fields override the config.
struct Options {
  fs::path manifest;
  fs::path config;
  std::vector<fs::path> data;
  fs::path out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 1;
  std::optional<std::size_t> n;
  std::optional<std::string> wfmt, afmt, ofmt, method;
  std::optional<double> sq_strength;
  bool timing = false;
};

inline void apply_overrides(CellConfig& c, const Options& o) {
  if (o.method) c.method = parse_method(*o.method);
  if (o.wfmt) c.wfmt = parse_format(*o.wfmt);
  if (o.afmt) c.afmt = parse_format(*o.afmt);
  if (o.ofmt) {
    if (*o.ofmt == "none") c.ofmt.reset();
    else c.ofmt = parse_format(*o.ofmt);
  }
  if (o.n) {
    if (*o.n < 1) throw ParseError("--n must be >= 1", 0);
    c.n = *o.n;
  }
  if (o.sq_strength) {
    if (!(*o.sq_strength >= 0.0 && *o.sq_strength <= 1.0)) throw ParseError("--sq-strength must lie in [0, 1]", 0);
    c.smoothquant = true;
    c.sq_strength = *o.sq_strength;
  }
}

/// Sweep settings from --config (or defaults) with flag overrides applied to
/// every cell. Without a config the flags describe a single cell.
inline SweepConfig resolve_sweep_config(const Options& o) {
  SweepConfig cfg = o.config.empty() ? SweepConfig{} : load_sweep_config(o.config);
  if (o.config.empty()) cfg.cells.push_back(CellConfig{});
  for (auto& c : cfg.cells) apply_overrides(c, o);
  if (o.seed_set) cfg.seed = o.seed;
  cfg.timing = o.timing;
  return cfg;
}

/// A single cell for calibrate/train: the config file holds one JSON object
/// with sweep-cell fields plus optional "seed", "batch", "grid",
/// "smoothing_scope".
inline SweepConfig resolve_single_cell(const Options& o, Method fallback) {
  SweepConfig cfg;
  CellConfig cell;
  cell.method = fallback;
  if (!o.config.empty()) {
    json j;
    try {
      j = json::parse(read_file(o.config));
    } catch (const json::parse_error& e) {
      throw ParseError(o.config.string() + ": " + e.what(), e.byte);
    }
    if (!j.is_object()) throw ParseError(o.config.string() + ": expected a JSON object", 0);
    json top = json::object(), fields = json::object();
    for (const auto& [k, v] : j.items()) {
      if (k == "seed" || k == "batch" || k == "grid" || k == "smoothing_scope") top[k] = v;
      else fields[k] = v;
    }
    top["defaults"] = fields;
    top["cells"] = json::array({json::object()});
    cfg = parse_sweep_config(top);
    cell = cfg.cells.front();
    if (!fields.contains("method")) cell.method = fallback;
  }
  apply_overrides(cell, o);
  cfg.cells = {cell};
  if (o.seed_set) cfg.seed = o.seed;
  return cfg;
}

inline TensorArchive load_datasets(const std::vector<fs::path>& paths) {
  if (paths.empty()) throw ParseError("--data is required", 0);
  TensorArchive merged;
  for (const auto& p : paths) {
    TensorArchive a = load_archive(p);
    for (auto& [name, t] : a) {
      auto it = merged.find(name);
      if (it == merged.end()) {
        merged.emplace(name, std::move(t));
        continue;
      }
      // Concatenate shards along the leading axis.
      Tensor& dst = it->second;
      if (dst.rank() == 0 || t.rank() != dst.rank() ||
          !std::equal(dst.shape().begin() + 1, dst.shape().end(), t.shape().begin() + 1)) {
        throw DataError("dataset shards disagree on the shape of " + name);
      }
      Shape s = dst.shape();
      s[0] += t.dim(0);
      std::vector<double> v(dst.values().begin(), dst.values().end());
      v.insert(v.end(), t.values().begin(), t.values().end());
      dst = Tensor(s, std::move(v));
    }
  }
  return merged;
}

inline ModelGraph require_model(const Options& o) {
  if (o.manifest.empty()) throw ParseError("--manifest is required", 0);
  return load_model(o.manifest);
}

// ---------------------------------------------------------------------------

/// Print the representable values of a format, sorted, with its range.
inline void cmd_formats(const std::string& spec, std::ostream& out) {
  const NumericFormat f = parse_format(spec);
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "format " << f.name() << "\n";
  out << "bits " << f.bits << "\n";
  if (!f.is_integer()) {
    out << "exponent_bits " << f.exp_bits << "\nmantissa_bits " << f.mant_bits << "\nbias " << f.bias << "\n";
    out << "subnormals " << (f.supports_subnormals ? "yes" : "no") << "\n";
    out << "infinities " << (f.finite_only ? "no" : "yes") << "\n";
  }
  out << "max_finite " << num(f.max_finite()) << "\n";
  if (!f.is_integer()) out << "min_normal " << num(f.min_normal()) << "\n";
  if (f.bits > 16) {
    out << "values not listed (more than 16 bits)\n";
    return;
  }
  const ValueTable t = enumerate(f);
  // Float formats encode +0 and -0 separately; both map to one value.
  out << "finite_codes " << (f.is_integer() ? t.size() : t.size() + 1) << "\n";
  out << "distinct_values " << t.size() << "\n";
  for (double v : t.values) out << num(v == 0.0 ? 0.0 : v) << "\n";
}

/// Calibrate the static quantizers of one configuration and write the
/// thresholds (plus weight maxima and smoothing factors) to --out.
inline void cmd_calibrate(const Options& o, std::ostream& log) {
  ModelGraph model = require_model(o);
  const SweepConfig cfg = resolve_single_cell(o, Method::StaticMse);
  const CellConfig& cell = cfg.cells.front();
  const TensorArchive data = load_datasets(o.data);
  const Tensor& calib = data.count("calib.inputs") ? data.at("calib.inputs") : archive_entry(data, "train.inputs");
  const auto batches = split_batches(calib, cfg.batch);
  if (batches.empty()) throw DataError("calibration set is empty");
  ModelGraph g = replace_layers(model, cell_policy(cell));
  if (cell.uses_smoothing()) enable_smoothing(g, batches, cell.sq_strength, cfg.scope);
  CalibrationOptions copt;
  copt.grid_size = cfg.grid;
  copt.seed = cfg.seed;
  const CalibrationTable table = calibrate(g, batches, copt);
  if (o.out.empty()) {
    write_calibration(log, table);
  } else {
    save_calibration(o.out.string(), table);
    log << "wrote " << table.size() << " entries to " << o.out.string() << "\n";
  }
}

/// Run a sweep and write the CSV report to --out (JSON alongside, same stem),
/// or the CSV to `out` when --out is absent. Returns the number of failed
/// cells.
inline std::size_t cmd_sweep(const Options& o, std::ostream& out, std::ostream& log) {
  ModelGraph model = require_model(o);
  const SweepConfig cfg = resolve_sweep_config(o);
  const TensorArchive archive = load_datasets(o.data);
  const SweepData data = SweepData::from_archive(archive, cfg.batch);
  const SweepReport report = run_sweep(model, data, cfg, o.jobs);
  const std::string csv = report_csv(report);
  if (o.out.empty()) {
    out << csv;
  } else {
    fs::path json_path = o.out;
    json_path.replace_extension(".json");
    if (json_path == o.out) json_path += ".json";
    write_file(o.out, csv);
    write_file(json_path, report_json(report).dump(2) + "\n");
    log << "wrote " << o.out.string() << " and " << json_path.string() << "\n";
  }
  std::size_t failed = 0;
  for (const auto& c : report.cells) {
    if (!c.ok) {
      ++failed;
      log << "cell " << c.config.label() << " failed (" << c.error_kind << "): " << c.error << "\n";
    }
  }
  return failed;
}

/// Fine-tune with quantizers in the forward pass (plain SGD, PWL backward).
/// Writes the updated model to --out plus loss_curve.csv.
inline void cmd_train(const Options& o, std::ostream& log) {
  if (o.out.empty()) throw ParseError("--out is required", 0);
  ModelGraph model = require_model(o);
  if (model.loss == LossKind::None) throw DataError("model has no loss head");
  const SweepConfig cfg = resolve_single_cell(o, Method::AbfpQat);
  CellConfig cell = cfg.cells.front();
  const TensorArchive archive = load_datasets(o.data);
  const SweepData data = SweepData::from_archive(archive, cfg.batch);
  if (!data.has_train) throw DataError("training needs train.inputs and train.targets");

  const std::size_t steps = cell.qat_steps;
  CellConfig setup = cell;
  setup.qat_steps = 0;
  ModelGraph g = prepare_cell(model, setup, data, cfg);
  auto eval_loss = [&] { return detail::run_eval(g, data, cfg.batch, true).loss; };
  const double before = eval_loss();

  std::mt19937_64 rng(cfg.seed);
  TrainOptions topt;
  topt.clip_norm = cell.clip_norm;
  std::string curve = "step,loss\n";
  for (std::size_t step = 0; step < steps; ++step) {
    double loss = 0.0;
    try {
      loss = train_step(g, sample_batch(data.train_inputs, data.train_targets, cfg.batch, rng), cell.qat_lr, topt);
    } catch (const NumericError& e) {
      write_file(o.out / "loss_curve.csv", curve);
      throw NumericError("training diverged at step " + std::to_string(step) + ": " + e.what());
    }
    curve += std::to_string(step) + "," + detail::fmt("%.9e", loss) + "\n";
  }
  const double after = eval_loss();
  curve += "# eval_loss_before " + detail::fmt("%.9e", before) + "\n";
  curve += "# eval_loss_after " + detail::fmt("%.9e", after) + "\n";
  strip_quantizers(g);
  clear_smoothing(g);
  save_model(g, o.out);
  write_file(o.out / "loss_curve.csv", curve);
  log << "method " << to_string(cell.method) << ", " << steps << " steps\n";
  log << "eval loss before " << detail::fmt("%.6f", before) << " after " << detail::fmt("%.6f", after) << "\n";
  log << "wrote " << (o.out / "model.manifest").string() << "\n";
}

/// Write a toy task (model, dataset, example sweep config) to --out.
inline void cmd_make_toy(const std::string& task, const Options& o, std::ostream& log) {
  if (o.out.empty()) throw ParseError("--out is required", 0);
  tasks::ToyTask t;
  json sweep;
  if (task == "regression") {
    t = tasks::make_regression(o.seed);
    ModelGraph& g = t.model;
    tasks::pretrain(g, t.data.at("train.inputs"), t.data.at("train.targets"), 1500, 32, 3e-3, o.seed + 9);
  } else if (task == "spiral") {
    t = tasks::make_spiral(o.seed);
    tasks::pretrain(t.model, t.data.at("train.inputs"), t.data.at("train.targets"), 1500, 32, 3e-3, o.seed + 9);
  } else if (task == "lm") {
    t = tasks::make_transformer_task(o.seed);
  } else {
    throw ParseError("unknown toy task '" + task + "' (regression, spiral, lm)", 0);
  }
  round_parameters_to_f32(t.model);
  save_model(t.model, o.out);
  save_archive(t.data, o.out / "data.qtar");
  sweep["seed"] = o.seed;
  sweep["batch"] = 8;
  sweep["cells"] = json::array({
      {{"method", "static-mse"}, {"wfmt", "int4"}, {"afmt", "int4"}},
      {{"method", "abfp"}, {"wfmt", "int4"}, {"afmt", "int4"}, {"n", 64}},
      {{"method", "abfp"}, {"wfmt", "int4"}, {"afmt", "int8"}, {"n", 64}},
      {{"method", "abfp-sq"}, {"wfmt", "int4"}, {"afmt", "int8"}, {"n", 64}},
      {{"method", "abfp-qat"}, {"wfmt", "int4"}, {"afmt", "int4"}, {"n", 64}, {"qat_steps", 500}},
  });
  if (task == "lm") {
    // The pretrained LM needs a larger SGD step than the small MLP tasks.
    sweep["cells"].back()["qat_lr"] = 0.05;
  }
  write_file(o.out / "sweep.json", sweep.dump(2) + "\n");
  log << "wrote " << task << " task to " << o.out.string() << "\n";
}

}  // namespace qsim::cli

#endif  // QSIM_COMMANDS_HPP_
