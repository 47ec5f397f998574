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

// qsim: command-line front end for the quantization simulator.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <string>

#include "qsim/commands.hpp"

namespace {

using qsim::cli::Options;

void add_model_flags(CLI::App* cmd, Options& o, bool with_config = true) {
  cmd->add_option("--manifest", o.manifest, "model manifest")->required();
  if (with_config) cmd->add_option("--config", o.config, "JSON configuration");
  cmd->add_option("--data", o.data, "dataset archive (repeat to concatenate shards)")->required();
}

void add_cell_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--n", o.n, "ABFP block length");
  cmd->add_option("--wfmt", o.wfmt, "weight format, e.g. int4, e2m1");
  cmd->add_option("--afmt", o.afmt, "activation format");
  cmd->add_option("--ofmt", o.ofmt, "output format or 'none'");
  cmd->add_option("--method", o.method, "static-mse, abfp, abfp-sq or abfp-qat");
  cmd->add_option("--sq-strength", o.sq_strength, "enable smoothing with this migration strength");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qsim: mixed-precision quantization simulator"};
  app.require_subcommand(1);
  Options o;
  auto seed_opt = [&](CLI::App* cmd) {
    cmd->add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) {
         o.seed = s;
         o.seed_set = true;
       }, "random seed (default 0)");
  };

  std::string format_spec;
  auto* formats = app.add_subcommand("formats", "list the values of a number format");
  formats->add_option("format", format_spec, "format string: int<b>, e<E>m<M>[b<bias>], bf16, fp32")->required();

  auto* calibrate = app.add_subcommand("calibrate", "calibrate static quantizers");
  add_model_flags(calibrate, o);
  add_cell_flags(calibrate, o);
  calibrate->add_option("--out", o.out, "calibration file (stdout if omitted)");
  seed_opt(calibrate);

  auto* sweep = app.add_subcommand("sweep", "evaluate a grid of quantization configurations");
  add_model_flags(sweep, o);
  add_cell_flags(sweep, o);
  sweep->add_option("--out", o.out, "CSV report path; JSON is written next to it");
  sweep->add_option("--jobs", o.jobs, "cells evaluated in parallel")->check(CLI::PositiveNumber);
  sweep->add_flag("--timing", o.timing, "add wall-clock seconds per cell (reports stop being reproducible)");
  seed_opt(sweep);

  auto* train = app.add_subcommand("train", "quantization-aware fine-tuning");
  add_model_flags(train, o);
  add_cell_flags(train, o);
  train->add_option("--out", o.out, "output directory for the tuned model")->required();
  seed_opt(train);

  std::string toy;
  auto* make_toy = app.add_subcommand("make-toy", "write a toy model and dataset");
  make_toy->add_option("--task", toy, "regression, spiral or lm")->required();
  make_toy->add_option("--out", o.out, "output directory")->required();
  seed_opt(make_toy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? qsim::cli::kOk : qsim::cli::kUsage;
  }

  try {
    if (*formats) qsim::cli::cmd_formats(format_spec, std::cout);
    if (*calibrate) qsim::cli::cmd_calibrate(o, std::cerr);
    if (*sweep) qsim::cli::cmd_sweep(o, std::cout, std::cerr);
    if (*train) qsim::cli::cmd_train(o, std::cerr);
    if (*make_toy) qsim::cli::cmd_make_toy(toy, o, std::cerr);
  } catch (const qsim::ParseError& e) {
    std::cerr << "qsim: " << e.what() << "\n";
    return qsim::cli::kUsage;
  } catch (const qsim::NumericError& e) {
    std::cerr << "qsim: numeric failure: " << e.what() << "\n";
    return qsim::cli::kNumericFailure;
  } catch (const qsim::Error& e) {
    std::cerr << "qsim: " << e.what() << "\n";
    return qsim::cli::kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "qsim: " << e.what() << "\n";
    return qsim::cli::kDataError;
  }
  return qsim::cli::kOk;
}
