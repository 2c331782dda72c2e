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

#ifndef FEDMOE_EXPERIMENT_H_
#define FEDMOE_EXPERIMENT_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "fedmoe/data.h"
#include "fedmoe/federation.h"
#include "fedmoe/model.h"

namespace fedmoe {

/// Invalid configuration; what() lists every offending field, one per line.
class ConfigError : public DataError {
 public:
  explicit ConfigError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const { return problems_; }

 private:
  std::vector<std::string> problems_;
};

enum class DataSource { kSynthetic, kCsv };

struct CsvSource {
  CsvSchema schema;
  /// One file per scenario, split 70/15/15 ...
  std::vector<std::string> paths;
  /// ... or pre-split files, one per scenario each.
  std::vector<std::string> train_paths;
  std::vector<std::string> validation_paths;
  std::vector<std::string> test_paths;
};

struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::kMain;
  std::size_t rounds = 10;
  std::size_t local_epochs = 1;
  std::string output_dir = "out";
  bool write_snapshots = true;

  // [model]; num_features/num_tasks/num_scenarios follow [data]
  ModelConfig model;

  // [train]
  std::size_t batch_size = 128;
  bool shuffle = true;
  std::size_t max_batches_per_round = 0;
  double learning_rate = 1e-3;
  double psi_learning_rate = 0.01;
  double psi_limit = 2.0;
  double lambda = 0.5;
  double c = 0.4;
  double fedbn_eps = 1e-5;
  bool allow_degenerate = false;

  // [data]
  DataSource source = DataSource::kSynthetic;
  /// Unset means "same as the experiment seed".
  std::optional<std::uint64_t> data_seed;
  SyntheticSpec synthetic;
  CsvSource csv;

  // [ablation]
  std::vector<std::size_t> expert_sweep{2, 3, 4, 5, 6};

  /// Throws ConfigError listing every invalid field.
  void Validate() const;

  std::uint64_t ResolvedDataSeed() const { return data_seed.value_or(seed); }
  ClientConfig MakeClientConfig() const;
  ServerConfig MakeServerConfig() const;
};

/// Parses the key/value file (INI sections: experiment, model, train, data,
/// csv, ablation). Unknown sections or keys are errors.
ExperimentConfig ParseConfig(std::istream& in);
ExperimentConfig LoadConfig(const std::string& path);

/// Canonical text form: every field, resolved, round-trippable through
/// ParseConfig.
std::string EchoConfig(const ExperimentConfig& cfg);

std::vector<ScenarioShard> BuildShards(const ExperimentConfig& cfg);

struct ExperimentResult {
  /// reports[r-1][j]: round r, client j, after aggregation.
  std::vector<std::vector<EvalReport>> reports;
  /// train_loss[r-1][j]: mean local training loss over round r.
  std::vector<std::vector<double>> train_loss;
  std::uint64_t shard_checksum = 0;

  std::string MetricsCsv() const;
  std::string ConvergenceCsv() const;
  /// Mean test AUC over clients and tasks at the final round.
  double FinalMeanAuc() const;
};

struct RunHooks {
  /// Called after each round's server phase, before evaluation is stored.
  std::function<void(int round, const Server& server, const std::vector<Client>& clients)>
      after_round;
};

/// Trains and evaluates on prebuilt shards. Writes artifacts under
/// cfg.output_dir unless it is empty.
ExperimentResult RunExperiment(const ExperimentConfig& cfg, const std::vector<ScenarioShard>& shards,
                               const RunHooks& hooks = {});
ExperimentResult RunExperiment(const ExperimentConfig& cfg);

struct AblationRow {
  std::string label;
  std::vector<double> auc;  // scenario-major: (j, i) at index j*T + i
  std::uint64_t shard_checksum = 0;
};

struct AblationResult {
  std::vector<AblationRow> strategies;  // A1..A4
  std::vector<AblationRow> expert_sweep;
  std::size_t num_scenarios = 0;
  std::size_t num_tasks = 0;

  std::string TableCsv() const;
};

/// Runs A1..A4 and the expert-count sweep on the same shards. Each variant's
/// artifacts go to <output_dir>/<variant>/, the table to
/// <output_dir>/table.csv and shard checksums to <output_dir>/checksums.log.
AblationResult RunAblationSuite(const ExperimentConfig& base);

}  // namespace fedmoe

#endif  // FEDMOE_EXPERIMENT_H_
