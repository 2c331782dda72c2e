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

#include "fedmoe/data.h"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

namespace fedmoe {

std::size_t ScenarioShard::num_features() const {
  return train.empty() ? 0 : train.front().features.size();
}

std::size_t ScenarioShard::num_tasks() const {
  return train.empty() ? 0 : train.front().labels.size();
}

void SyntheticSpec::Validate() const {
  if (num_scenarios == 0 || num_tasks == 0 || num_features == 0) {
    throw ContractViolation("synthetic spec: counts must be positive");
  }
  if (samples_per_scenario < 3) {
    throw ContractViolation("synthetic spec: need at least 3 samples per scenario");
  }
  if (perturbation_scale < 0.0) {
    throw ContractViolation("synthetic spec: perturbation scale must be >= 0");
  }
  if (!(temperature > 0.0)) {
    throw ContractViolation("synthetic spec: temperature must be positive");
  }
  if (!task_mixing.empty()) {
    if (task_mixing.size() != num_tasks) {
      throw ContractViolation("synthetic spec: task mixing needs one row per task");
    }
    for (const auto& row : task_mixing) {
      if (row.size() != num_tasks) {
        throw ContractViolation("synthetic spec: task mixing must be square");
      }
    }
  }
}

SyntheticData GenerateSynthetic(const SyntheticSpec& spec) {
  spec.Validate();
  const std::size_t d = spec.num_features, t_count = spec.num_tasks;
  const double unit = spec.coefficient_scale / std::sqrt(static_cast<double>(d));

  std::mt19937_64 coef_rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> base(t_count, std::vector<double>(d));
  for (auto& b : base) {
    for (auto& v : b) v = unit * normal(coef_rng);
  }
  std::vector<std::vector<double>> global(t_count, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < t_count; ++i) {
    for (std::size_t m = 0; m < t_count; ++m) {
      const double mix =
          spec.task_mixing.empty() ? (i == m ? 1.0 : 0.0) : spec.task_mixing[i][m];
      if (mix == 0.0) continue;
      for (std::size_t f = 0; f < d; ++f) global[i][f] += mix * base[m][f];
    }
  }

  SyntheticData out;
  out.coefficients.resize(spec.num_scenarios);
  for (std::size_t j = 0; j < spec.num_scenarios; ++j) {
    std::vector<double> perturbation(d);
    for (auto& v : perturbation) v = unit * normal(coef_rng);
    auto& coef = out.coefficients[j];
    coef.assign(t_count, std::vector<double>(d));
    for (std::size_t i = 0; i < t_count; ++i) {
      for (std::size_t f = 0; f < d; ++f) {
        coef[i][f] = global[i][f] + spec.perturbation_scale * perturbation[f];
      }
    }
  }

  for (std::size_t j = 0; j < spec.num_scenarios; ++j) {
    std::seed_seq seq{spec.seed, static_cast<std::uint64_t>(j) + 1, std::uint64_t{0x5eed}};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    // Fresh distribution: normal_distribution caches a spare draw.
    std::normal_distribution<double> feature(0.0, 1.0);
    std::vector<ExampleRecord> records(spec.samples_per_scenario);
    for (auto& rec : records) {
      rec.features.resize(d);
      for (auto& v : rec.features) v = feature(rng);
      rec.labels.resize(t_count);
      for (std::size_t i = 0; i < t_count; ++i) {
        const auto& theta = out.coefficients[j][i];
        const double z =
            std::inner_product(theta.begin(), theta.end(), rec.features.begin(), 0.0) /
            spec.temperature;
        const double prob = 1.0 / (1.0 + std::exp(-z));
        rec.labels[i] = unif(rng) < prob ? 1 : 0;
      }
    }
    out.shards.push_back(SplitRecords(std::move(records), j));
  }
  return out;
}

ScenarioShard SplitRecords(std::vector<ExampleRecord> records, std::size_t scenario) {
  const std::size_t n = records.size();
  if (n < 3) {
    throw DataError(fmt::format("need at least 3 records to split, got {}", n));
  }
  const auto part = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(0.15 * static_cast<double>(n))));
  const std::size_t n_train = n - 2 * part;

  ScenarioShard shard;
  shard.scenario = scenario;
  auto it = std::make_move_iterator(records.begin());
  shard.train.assign(it, it + static_cast<std::ptrdiff_t>(n_train));
  shard.validation.assign(it + static_cast<std::ptrdiff_t>(n_train),
                          it + static_cast<std::ptrdiff_t>(n_train + part));
  shard.test.assign(it + static_cast<std::ptrdiff_t>(n_train + part),
                    std::make_move_iterator(records.end()));
  return shard;
}

namespace {

std::vector<std::string> SplitLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string Trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

bool ParseDouble(const std::string& cell, double& out) {
  const char* begin = cell.data();
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

}  // namespace

std::vector<ExampleRecord> ReadCsvRecords(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError(fmt::format("cannot open {}", path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(fmt::format("{}: missing header row", path));

  std::unordered_map<std::string, std::size_t> column;
  const auto header = SplitLine(line);
  for (std::size_t c = 0; c < header.size(); ++c) column[Trim(header[c])] = c;

  auto locate = [&](const std::string& name, const char* role) {
    auto it = column.find(name);
    if (it == column.end()) {
      throw DataError(fmt::format("{}: missing {} column '{}'", path, role, name));
    }
    return it->second;
  };
  std::vector<std::size_t> feature_idx, label_idx;
  for (const auto& f : schema.feature_columns) feature_idx.push_back(locate(f, "feature"));
  for (const auto& l : schema.label_columns) label_idx.push_back(locate(l, "label"));

  std::vector<ExampleRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    const auto cells = SplitLine(line);
    if (cells.size() != header.size()) {
      throw DataError(fmt::format("{}:{}: expected {} cells, found {}", path, line_no,
                                  header.size(), cells.size()));
    }
    ExampleRecord rec;
    rec.features.reserve(feature_idx.size());
    for (std::size_t k = 0; k < feature_idx.size(); ++k) {
      double v = 0.0;
      if (!ParseDouble(Trim(cells[feature_idx[k]]), v)) {
        throw DataError(fmt::format("{}:{}: non-numeric value '{}' in feature column '{}'",
                                    path, line_no, cells[feature_idx[k]],
                                    schema.feature_columns[k]));
      }
      rec.features.push_back(v);
    }
    for (std::size_t k = 0; k < label_idx.size(); ++k) {
      const std::string cell = Trim(cells[label_idx[k]]);
      double v = -1.0;
      if (!ParseDouble(cell, v) || (v != 0.0 && v != 1.0)) {
        throw DataError(fmt::format("{}:{}: label column '{}' must be 0 or 1, found '{}'",
                                    path, line_no, schema.label_columns[k], cell));
      }
      rec.labels.push_back(static_cast<std::uint8_t>(v));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

ScenarioShard LoadCsv(const std::string& path, const CsvSchema& schema, std::size_t scenario) {
  return SplitRecords(ReadCsvRecords(path, schema), scenario);
}

ScenarioShard LoadCsvPresplit(const std::string& train_path, const std::string& validation_path,
                              const std::string& test_path, const CsvSchema& schema,
                              std::size_t scenario) {
  ScenarioShard shard;
  shard.scenario = scenario;
  shard.train = ReadCsvRecords(train_path, schema);
  shard.validation = ReadCsvRecords(validation_path, schema);
  shard.test = ReadCsvRecords(test_path, schema);
  if (shard.train.empty() || shard.validation.empty() || shard.test.empty()) {
    throw DataError("pre-split CSV partitions must all be nonempty");
  }
  return shard;
}

void WriteCsv(const std::string& path, std::span<const ExampleRecord> records,
              const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw DataError(fmt::format("cannot write {}", path));
  std::vector<std::string> names = schema.feature_columns;
  names.insert(names.end(), schema.label_columns.begin(), schema.label_columns.end());
  out << fmt::format("{}\n", fmt::join(names, ","));
  for (const auto& rec : records) {
    if (rec.features.size() != schema.feature_columns.size() ||
        rec.labels.size() != schema.label_columns.size()) {
      throw ContractViolation("WriteCsv: record does not match schema");
    }
    std::string row;
    for (double v : rec.features) row += fmt::format("{},", v);  // shortest round-trip
    for (std::size_t i = 0; i < rec.labels.size(); ++i) {
      row += std::to_string(rec.labels[i]);
      row += i + 1 < rec.labels.size() ? "," : "";
    }
    if (rec.labels.empty() && !row.empty()) row.pop_back();
    out << row << '\n';
  }
}

Batch MakeBatch(std::span<const ExampleRecord> records, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractViolation("MakeBatch: empty batch");
  const std::size_t d = records[indices[0]].features.size();
  const std::size_t t = records[indices[0]].labels.size();
  Batch b{Tensor({indices.size(), d}), Tensor({indices.size(), t})};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& rec = records[indices[r]];
    if (rec.features.size() != d || rec.labels.size() != t) {
      throw ContractViolation("MakeBatch: ragged records");
    }
    std::copy(rec.features.begin(), rec.features.end(), b.features.data() + r * d);
    for (std::size_t i = 0; i < t; ++i) b.labels.at(r, i) = rec.labels[i];
  }
  return b;
}

Batch MakeBatch(std::span<const ExampleRecord> records) {
  std::vector<std::size_t> idx(records.size());
  std::iota(idx.begin(), idx.end(), 0);
  return MakeBatch(records, idx);
}

BatchIterator::BatchIterator(std::span<const ExampleRecord> records, const BatchConfig& cfg)
    : records_(records), batch_size_(cfg.batch_size), order_(records.size()) {
  if (cfg.batch_size < 2) throw ContractViolation("batch size must be at least 2");
  if (records.empty()) throw ContractViolation("cannot batch an empty partition");
  std::iota(order_.begin(), order_.end(), 0);
  if (cfg.shuffle) {
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchIterator::Next() {
  const std::size_t remaining = order_.size() - cursor_;
  if (remaining < 2) return std::nullopt;
  const std::size_t take = std::min(batch_size_, remaining);
  std::span<const std::size_t> idx(order_.data() + cursor_, take);
  cursor_ += take;
  return MakeBatch(records_, idx);
}

std::size_t BatchIterator::num_batches() const {
  const std::size_t n = order_.size();
  const std::size_t full = n / batch_size_;
  return full + (n % batch_size_ >= 2 ? 1 : 0);
}

std::uint64_t ShardChecksum(std::span<const ScenarioShard> shards) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& s : shards) {
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      for (const auto& rec : *part) {
        mix(rec.features.data(), rec.features.size() * sizeof(double));
        mix(rec.labels.data(), rec.labels.size());
      }
    }
  }
  return h;
}

}  // namespace fedmoe
