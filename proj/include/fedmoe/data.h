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

#ifndef FEDMOE_DATA_H_
#define FEDMOE_DATA_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmoe/tensor.h"

namespace fedmoe {

struct ExampleRecord {
  std::vector<double> features;
  std::vector<std::uint8_t> labels;  // one 0/1 entry per task

  friend bool operator==(const ExampleRecord&, const ExampleRecord&) = default;
};

/// One scenario's private data, split into disjoint partitions.
struct ScenarioShard {
  std::size_t scenario = 0;
  std::vector<ExampleRecord> train;
  std::vector<ExampleRecord> validation;
  std::vector<ExampleRecord> test;

  std::size_t num_features() const;
  std::size_t num_tasks() const;
};

/// Desk-scale stand-in for a multi-scenario CTR/CTCVR corpus.
///
/// Each task i gets a global coefficient vector built from `task_mixing`
/// rows over independent base directions; scenario j shifts every task by
/// `perturbation_scale * p_j`. Features are standard normal and
/// label_i ~ Bernoulli(sigmoid(<theta_{j,i}, x> / temperature)).
struct SyntheticSpec {
  std::size_t num_scenarios = 3;
  std::size_t num_tasks = 2;
  std::size_t num_features = 16;
  std::size_t samples_per_scenario = 20000;
  double coefficient_scale = 2.0;
  double perturbation_scale = 0.5;  // rho
  /// T x T, row i mixes base directions into task i. Empty means identity.
  std::vector<std::vector<double>> task_mixing;
  double temperature = 1.0;
  std::uint64_t seed = 1;

  void Validate() const;
};

struct SyntheticData {
  std::vector<ScenarioShard> shards;
  /// coefficients[j][i] is the true theta for scenario j, task i.
  std::vector<std::vector<std::vector<double>>> coefficients;
};

SyntheticData GenerateSynthetic(const SyntheticSpec& spec);

/// Splits records in order into 70/15/15 train/validation/test, keeping
/// every partition nonempty. Requires at least 3 records.
ScenarioShard SplitRecords(std::vector<ExampleRecord> records, std::size_t scenario);

struct CsvSchema {
  std::vector<std::string> feature_columns;
  std::vector<std::string> label_columns;
};

/// Reads a header-first comma-separated file. Throws DataError naming the
/// missing column or the offending line.
std::vector<ExampleRecord> ReadCsvRecords(const std::string& path, const CsvSchema& schema);
ScenarioShard LoadCsv(const std::string& path, const CsvSchema& schema, std::size_t scenario);
ScenarioShard LoadCsvPresplit(const std::string& train_path, const std::string& validation_path,
                              const std::string& test_path, const CsvSchema& schema,
                              std::size_t scenario);

/// Writes records with shortest round-trip formatting.
void WriteCsv(const std::string& path, std::span<const ExampleRecord> records,
              const CsvSchema& schema);

struct BatchConfig {
  std::size_t batch_size = 128;
  bool shuffle = true;
  std::uint64_t seed = 0;
};

struct Batch {
  Tensor features;  // K x d
  Tensor labels;    // K x T
  std::size_t size() const { return features.rows(); }
};

Batch MakeBatch(std::span<const ExampleRecord> records,
                std::span<const std::size_t> indices);
Batch MakeBatch(std::span<const ExampleRecord> records);

/// Yields batches of `batch_size` in (optionally shuffled) order. A trailing
/// batch smaller than 2 is dropped since train-mode batch norm needs two rows.
class BatchIterator {
 public:
  BatchIterator(std::span<const ExampleRecord> records, const BatchConfig& cfg);

  std::optional<Batch> Next();
  std::size_t num_batches() const;

 private:
  std::span<const ExampleRecord> records_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// FNV-1a over every feature and label byte of every partition, in order.
std::uint64_t ShardChecksum(std::span<const ScenarioShard> shards);

}  // namespace fedmoe

#endif  // FEDMOE_DATA_H_
