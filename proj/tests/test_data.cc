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

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "fedmoe/data.h"
#include "fedmoe/metrics.h"

namespace fedmoe {
namespace {

std::filesystem::path TempDir(const std::string& leaf) {
  const char* env = std::getenv("FEDMOE_TEST_TMP");
  auto dir = std::filesystem::path(env ? env : "/tmp/fedmoe_test") / leaf;
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<ExampleRecord> Counting(std::size_t n) {
  std::vector<ExampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({{static_cast<double>(i)}, {static_cast<std::uint8_t>(i % 2)}});
  }
  return out;
}

std::vector<std::size_t> BatchSizes(std::size_t n, std::size_t k, bool shuffle) {
  const auto recs = Counting(n);
  BatchIterator it(recs, {k, shuffle, 5});
  std::vector<std::size_t> sizes;
  while (auto b = it.Next()) sizes.push_back(b->size());
  EXPECT_EQ(sizes.size(), it.num_batches());
  return sizes;
}

TEST(Batching, TrailingBatchKeptOrDropped) {
  EXPECT_EQ(BatchSizes(10, 4, false), (std::vector<std::size_t>{4, 4, 2}));
  EXPECT_EQ(BatchSizes(9, 4, false), (std::vector<std::size_t>{4, 4}));
  EXPECT_EQ(BatchSizes(10, 4, true), (std::vector<std::size_t>{4, 4, 2}));
}

TEST(Batching, ShuffleIsAPermutationAndSeeded) {
  const auto recs = Counting(49);
  auto collect = [&](std::uint64_t seed) {
    BatchIterator it(recs, {7, true, seed});
    std::vector<double> seen;
    while (auto b = it.Next()) {
      for (std::size_t r = 0; r < b->size(); ++r) seen.push_back(b->features.at(r, 0));
    }
    return seen;
  };
  auto a = collect(1), b = collect(1), c = collect(2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], static_cast<double>(i));
}

TEST(Batching, MakeBatchLayout) {
  std::vector<ExampleRecord> recs = {{{1, 2}, {1, 0}}, {{3, 4}, {0, 1}}};
  Batch b = MakeBatch(recs);
  EXPECT_EQ(b.features, Tensor::Matrix(2, 2, {1, 2, 3, 4}));
  EXPECT_EQ(b.labels, Tensor::Matrix(2, 2, {1, 0, 0, 1}));
}

TEST(Split, SeventyFifteenFifteenInOrder) {
  const auto shard = SplitRecords(Counting(100), 2);
  EXPECT_EQ(shard.scenario, 2u);
  EXPECT_EQ(shard.train.size(), 70u);
  EXPECT_EQ(shard.validation.size(), 15u);
  EXPECT_EQ(shard.test.size(), 15u);
  EXPECT_EQ(shard.train.front().features[0], 0.0);
  EXPECT_EQ(shard.test.back().features[0], 99.0);
  EXPECT_THROW(SplitRecords(Counting(2), 0), DataError);
}

TEST(Csv, ReadsToyFile) {
  const auto path = TempDir("csv") / "toy.csv";
  std::ofstream(path) << "id,f1,click,f0,conv\n7,0.5,1,-1,0\n8,2,0,3.25,1\n9,1e-3,1,0,1\n";
  const CsvSchema schema{{"f0", "f1"}, {"click", "conv"}};
  const auto recs = ReadCsvRecords(path.string(), schema);
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].features, (std::vector<double>{-1, 0.5}));
  EXPECT_EQ(recs[0].labels, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(recs[2].features, (std::vector<double>{0, 1e-3}));
  EXPECT_EQ(recs[1].labels, (std::vector<std::uint8_t>{0, 1}));
}

TEST(Csv, MissingColumnNamed) {
  const auto path = TempDir("csv") / "missing.csv";
  std::ofstream(path) << "f0,click\n1,1\n";
  try {
    ReadCsvRecords(path.string(), {{"f0"}, {"click", "conv"}});
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("conv"), std::string::npos) << e.what();
  }
}

TEST(Csv, BadValuesRejected) {
  const auto dir = TempDir("csv");
  std::ofstream(dir / "label.csv") << "f0,click\n1,2\n";
  std::ofstream(dir / "num.csv") << "f0,click\nabc,1\n";
  std::ofstream(dir / "short.csv") << "f0,click\n1\n";
  const CsvSchema schema{{"f0"}, {"click"}};
  EXPECT_THROW(ReadCsvRecords((dir / "label.csv").string(), schema), DataError);
  EXPECT_THROW(ReadCsvRecords((dir / "num.csv").string(), schema), DataError);
  EXPECT_THROW(ReadCsvRecords((dir / "short.csv").string(), schema), DataError);
  EXPECT_THROW(ReadCsvRecords((dir / "absent.csv").string(), schema), DataError);
}

TEST(Csv, RoundTripIsExact) {
  SyntheticSpec spec;
  spec.samples_per_scenario = 60;
  spec.num_scenarios = 1;
  const auto data = GenerateSynthetic(spec);
  const auto& recs = data.shards[0].train;
  CsvSchema schema;
  for (std::size_t f = 0; f < spec.num_features; ++f) schema.feature_columns.push_back("x" + std::to_string(f));
  schema.label_columns = {"ctr", "ctcvr"};
  const auto path = (TempDir("csv") / "roundtrip.csv").string();
  WriteCsv(path, recs, schema);
  EXPECT_EQ(ReadCsvRecords(path, schema), recs);
}

TEST(Synthetic, ZeroPerturbationSharesCoefficients) {
  SyntheticSpec spec;
  spec.perturbation_scale = 0.0;
  spec.samples_per_scenario = 20;
  const auto data = GenerateSynthetic(spec);
  for (std::size_t j = 1; j < spec.num_scenarios; ++j) {
    EXPECT_EQ(data.coefficients[j], data.coefficients[0]);
  }
  spec.perturbation_scale = 0.5;
  const auto het = GenerateSynthetic(spec);
  EXPECT_NE(het.coefficients[1], het.coefficients[0]);
}

TEST(Synthetic, LowTemperatureIsNearlySeparable) {
  SyntheticSpec spec;
  spec.temperature = 0.05;
  spec.samples_per_scenario = 4000;
  const auto data = GenerateSynthetic(spec);
  for (std::size_t j = 0; j < spec.num_scenarios; ++j) {
    for (std::size_t i = 0; i < spec.num_tasks; ++i) {
      std::vector<double> logits;
      std::vector<std::uint8_t> labels;
      for (const auto& r : data.shards[j].test) {
        double z = 0.0;
        for (std::size_t f = 0; f < spec.num_features; ++f) z += data.coefficients[j][i][f] * r.features[f];
        logits.push_back(z);
        labels.push_back(r.labels[i]);
      }
      EXPECT_GE(AucFast(logits, labels), 0.95) << "scenario " << j << " task " << i;
    }
  }
}

TEST(Synthetic, LabelRatesAreBalancedEnough) {
  SyntheticSpec spec;
  spec.samples_per_scenario = 5000;
  const auto data = GenerateSynthetic(spec);
  for (const auto& shard : data.shards) {
    for (std::size_t i = 0; i < spec.num_tasks; ++i) {
      double pos = 0.0;
      for (const auto& r : shard.train) pos += r.labels[i];
      const double rate = pos / static_cast<double>(shard.train.size());
      EXPECT_GT(rate, 0.05);
      EXPECT_LT(rate, 0.95);
    }
  }
}

TEST(Synthetic, SeedDeterminesShards) {
  SyntheticSpec spec;
  spec.samples_per_scenario = 300;
  const auto a = GenerateSynthetic(spec), b = GenerateSynthetic(spec);
  EXPECT_EQ(ShardChecksum(a.shards), ShardChecksum(b.shards));
  spec.seed = 2;
  EXPECT_NE(ShardChecksum(GenerateSynthetic(spec).shards), ShardChecksum(a.shards));
}

TEST(Synthetic, InvalidSpecRejected) {
  SyntheticSpec spec;
  spec.task_mixing = {{1, 0}};  // wrong row count
  EXPECT_ANY_THROW(GenerateSynthetic(spec));
  SyntheticSpec zero;
  zero.num_features = 0;
  EXPECT_ANY_THROW(GenerateSynthetic(zero));
}

}  // namespace
}  // namespace fedmoe
