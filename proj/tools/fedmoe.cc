/**
 * Copyright 2026 The fedmoe Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Command-line front end: run, ablate, selftest.

#include <fmt/format.h>

#include <CLI11.hpp>
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "fedmoe/experiment.h"
#include "fedmoe/selftest.h"

namespace {

int Run(const std::string& config_path, std::optional<std::uint64_t> seed,
        std::optional<std::string> out) {
  fedmoe::ExperimentConfig cfg = fedmoe::LoadConfig(config_path);
  if (seed) cfg.seed = *seed;
  if (out) cfg.output_dir = *out;
  const auto result = fedmoe::RunExperiment(cfg);
  for (std::size_t r = 0; r < result.reports.size(); ++r) {
    double loss = 0.0, auc = 0.0;
    std::size_t n = 0;
    for (double l : result.train_loss[r]) loss += l;
    for (const auto& rep : result.reports[r]) {
      for (double a : rep.auc) {
        auc += a;
        ++n;
      }
    }
    std::cout << fmt::format("round {:>3}  train_loss {:.5f}  test_auc {:.5f}\n", r + 1,
                             loss / static_cast<double>(result.train_loss[r].size()),
                             auc / static_cast<double>(n));
  }
  std::cout << fmt::format("wrote {}/metrics.csv, convergence.csv, config.echo\n", cfg.output_dir);
  return 0;
}

int Ablate(const std::string& config_path) {
  const auto cfg = fedmoe::LoadConfig(config_path);
  const auto res = fedmoe::RunAblationSuite(cfg);
  std::cout << res.TableCsv();
  const auto checksum = res.strategies.front().shard_checksum;
  bool same = true;
  for (const auto* rows : {&res.strategies, &res.expert_sweep}) {
    for (const auto& r : *rows) same = same && r.shard_checksum == checksum;
  }
  std::cout << fmt::format("shard checksum {:016x} ({})\n", checksum,
                           same ? "identical across variants" : "MISMATCH");
  return same ? 0 : 1;
}

int Selftest() {
  bool ok = true;
  for (const auto& r : fedmoe::RunSelftest()) {
    std::cout << fmt::format("[{}] {}: {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Personalized federated multi-scenario multi-task training"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  auto* run = app.add_subcommand("run", "Train, evaluate and write artifacts");
  run->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override experiment.seed");
  run->add_option("--out", out, "Override experiment.output_dir");

  auto* ablate = app.add_subcommand("ablate", "Run A1-A4 and the expert-count sweep");
  ablate->add_option("--config", config_path, "Base experiment config")->required()->check(CLI::ExistingFile);

  app.add_subcommand("selftest", "Run the oracle suites");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return Run(config_path, seed, out);
    if (*ablate) return Ablate(config_path);
    return Selftest();
  } catch (const fedmoe::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
