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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedmoe/experiment.h"

namespace fedmoe {
namespace {

namespace fs = std::filesystem;

fs::path TempDir(const std::string& leaf) {
  const char* env = std::getenv("FEDMOE_TEST_TMP");
  auto dir = fs::path(env ? env : "/tmp/fedmoe_test") / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig Parse(const std::string& text) {
  std::istringstream in(text);
  return ParseConfig(in);
}

std::vector<std::string> Problems(const std::string& text) {
  try {
    Parse(text);
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

bool Mentions(const std::vector<std::string>& problems, const std::string& key) {
  for (const auto& p : problems) {
    if (p.find(key) != std::string::npos) return true;
  }
  return false;
}

ExperimentConfig Tiny(Strategy s) {
  ExperimentConfig cfg;
  cfg.seed = 4;
  cfg.strategy = s;
  cfg.rounds = 3;
  cfg.output_dir = "";
  cfg.model.num_experts = 2;
  cfg.model.expert_hidden = {6, 4};
  cfg.model.tower_hidden = {4};
  cfg.model.embedding_dim = 4;
  cfg.batch_size = 32;
  cfg.learning_rate = 1e-2;
  cfg.synthetic.num_features = 6;
  cfg.synthetic.samples_per_scenario = 300;
  return cfg;
}

TEST(Config, DefaultsAndOverrides) {
  const auto cfg = Parse(
      "[experiment]\nseed = 9\nstrategy = fedavg\n[model]\nexpert_hidden = 8,4\n"
      "[data]\nscenarios = 4\ntask_mixing = 1,0.5;0,1\n");
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.strategy, Strategy::kPlainFedAvg);
  EXPECT_EQ(cfg.model.expert_hidden, (std::vector<std::size_t>{8, 4}));
  EXPECT_EQ(cfg.synthetic.num_scenarios, 4u);
  EXPECT_EQ(cfg.synthetic.task_mixing[0], (std::vector<double>{1, 0.5}));
  EXPECT_EQ(cfg.rounds, 10u);
  EXPECT_DOUBLE_EQ(cfg.c, 0.4);
  EXPECT_EQ(cfg.ResolvedDataSeed(), 9u);
}

TEST(Config, ErrorsNameEveryBadField) {
  const auto p = Problems(
      "[experiment]\nrounds = zero\nstrategy = nope\n[train]\nc = 1.5\nbatch_size = 1\n"
      "[model]\ncolour = red\n");
  EXPECT_TRUE(Mentions(p, "experiment.rounds"));
  EXPECT_TRUE(Mentions(p, "experiment.strategy"));
  EXPECT_TRUE(Mentions(p, "model.colour"));
  EXPECT_FALSE(p.empty());
  // Range checks run once parsing succeeds.
  const auto v = Problems("[train]\nc = 1.5\nbatch_size = 1\nlearning_rate = -1\n");
  EXPECT_TRUE(Mentions(v, "train.c"));
  EXPECT_TRUE(Mentions(v, "train.batch_size"));
  EXPECT_TRUE(Mentions(v, "train.learning_rate"));
  EXPECT_FALSE(Problems("[data]\nsource = parquet\n").empty());
  EXPECT_FALSE(Problems("[data]\nsource = csv\n").empty());  // no paths or columns
  EXPECT_THROW(LoadConfig("/nonexistent/config.ini"), DataError);
}

TEST(Config, EchoRoundTrips) {
  auto cfg = Tiny(Strategy::kFedAvgTowerOnly);
  cfg.data_seed = 123;
  cfg.c = 0.1 + 0.2;  // not exactly representable in short decimal
  cfg.synthetic.task_mixing = {{1, 0.25}, {0, 1}};
  const auto echo = EchoConfig(cfg);
  const auto back = Parse(echo);
  EXPECT_EQ(EchoConfig(back), echo);
  EXPECT_EQ(back.c, cfg.c);
  EXPECT_EQ(back.ResolvedDataSeed(), 123u);
}

TEST(Experiment, ArtifactsHaveExpectedShape) {
  auto cfg = Tiny(Strategy::kMain);
  const auto dir = TempDir("artifacts");
  cfg.output_dir = dir.string();
  const auto res = RunExperiment(cfg);
  ASSERT_EQ(res.reports.size(), 3u);
  const std::string metrics = Slurp(dir / "metrics.csv");
  const std::string conv = Slurp(dir / "convergence.csv");
  EXPECT_EQ(metrics, res.MetricsCsv());
  EXPECT_EQ(conv, res.ConvergenceCsv());
  EXPECT_EQ(metrics.substr(0, metrics.find('\n')), "round,client,task,auc,bce");
  EXPECT_EQ(conv.substr(0, conv.find('\n')), "round,client,train_loss");
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 1 + 3 * 3 * 2);
  EXPECT_EQ(std::count(conv.begin(), conv.end(), '\n'), 1 + 3 * 3);
  for (int r = 1; r <= 3; ++r) EXPECT_TRUE(fs::exists(dir / "snapshots" / ("round_" + std::to_string(r) + ".bin")));
  EXPECT_EQ(Parse(Slurp(dir / "config.echo")).seed, cfg.seed);
}

TEST(Experiment, SameSeedSameBytes) {
  auto cfg = Tiny(Strategy::kMain);
  const auto a = RunExperiment(cfg), b = RunExperiment(cfg);
  EXPECT_EQ(a.MetricsCsv(), b.MetricsCsv());
  EXPECT_EQ(a.ConvergenceCsv(), b.ConvergenceCsv());
  cfg.seed = 5;
  EXPECT_NE(RunExperiment(cfg).MetricsCsv(), a.MetricsCsv());
}

TEST(Experiment, A3MatchesMain) {
  const auto a = RunExperiment(Tiny(Strategy::kMain));
  const auto b = RunExperiment(Tiny(Strategy::kA3));
  EXPECT_EQ(a.MetricsCsv(), b.MetricsCsv());
  EXPECT_EQ(a.ConvergenceCsv(), b.ConvergenceCsv());
}

TEST(Experiment, AfterRoundHookSeesEveryRound) {
  auto cfg = Tiny(Strategy::kLocalOnly);
  std::vector<int> rounds;
  RunHooks hooks;
  hooks.after_round = [&](int r, const Server& s, const std::vector<Client>& clients) {
    rounds.push_back(r);
    EXPECT_TRUE(s.audit_log().empty());  // local training never uploads
    EXPECT_EQ(clients.size(), 3u);
  };
  RunExperiment(cfg, BuildShards(cfg), hooks);
  EXPECT_EQ(rounds, (std::vector<int>{1, 2, 3}));
}

TEST(Experiment, CsvSourceRuns) {
  const auto dir = TempDir("csvsource");
  auto base = Tiny(Strategy::kMain);
  const auto shards = BuildShards(base);
  ExperimentConfig cfg = base;
  cfg.source = DataSource::kCsv;
  for (std::size_t f = 0; f < 6; ++f) cfg.csv.schema.feature_columns.push_back("f" + std::to_string(f));
  cfg.csv.schema.label_columns = {"ctr", "ctcvr"};
  for (std::size_t j = 0; j < shards.size(); ++j) {
    std::vector<ExampleRecord> all = shards[j].train;
    all.insert(all.end(), shards[j].validation.begin(), shards[j].validation.end());
    all.insert(all.end(), shards[j].test.begin(), shards[j].test.end());
    const auto path = (dir / ("s" + std::to_string(j) + ".csv")).string();
    WriteCsv(path, all, cfg.csv.schema);
    cfg.csv.paths.push_back(path);
  }
  // Same records, same split: the CSV route reproduces the synthetic run.
  EXPECT_EQ(ShardChecksum(BuildShards(cfg)), ShardChecksum(shards));
  EXPECT_EQ(RunExperiment(cfg).MetricsCsv(), RunExperiment(base).MetricsCsv());
}

TEST(Ablation, TableLayout) {
  auto cfg = Tiny(Strategy::kMain);
  cfg.rounds = 2;
  cfg.expert_sweep = {2, 3};
  const auto res = RunAblationSuite(cfg);
  ASSERT_EQ(res.strategies.size(), 4u);
  ASSERT_EQ(res.expert_sweep.size(), 2u);
  EXPECT_EQ(res.strategies[0].label, "A1");
  EXPECT_EQ(res.expert_sweep[1].label, "Expert=3");
  for (const auto* rows : {&res.strategies, &res.expert_sweep}) {
    for (const auto& r : *rows) {
      EXPECT_EQ(r.auc.size(), 3u * 2u);
      EXPECT_EQ(r.shard_checksum, res.strategies[0].shard_checksum);
    }
  }
  const auto table = res.TableCsv();
  EXPECT_EQ(table.substr(0, table.find('\n')),
            "section,variant,scenario0_auc_task0,scenario0_auc_task1,scenario1_auc_task0,"
            "scenario1_auc_task1,scenario2_auc_task0,scenario2_auc_task1");
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 1 + 4 + 2);
}

}  // namespace
}  // namespace fedmoe
