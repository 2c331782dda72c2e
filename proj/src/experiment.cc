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

#include "fedmoe/experiment.h"

#include <fmt/format.h>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

namespace fedmoe {
namespace {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

std::string JoinLines(const std::vector<std::string>& v) {
  std::string out = "invalid configuration:";
  for (const auto& s : v) out += "\n  " + s;
  return out;
}

std::uint64_t Mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Collects field-level parse errors instead of stopping at the first.
class FieldReader {
 public:
  FieldReader(const pt::ptree& tree, std::vector<std::string>& errors)
      : tree_(tree), errors_(errors) {}

  template <typename T>
  void Get(const std::string& path, T& out) {
    seen_.insert(path);
    auto node = tree_.get_child_optional(pt::ptree::path_type(path, '.'));
    if (!node) return;
    const std::string raw = boost::trim_copy(node->data());
    try {
      out = Convert<T>(raw);
    } catch (const std::exception&) {
      errors_.push_back(fmt::format("{}: cannot parse '{}'", path, raw));
    }
  }

  void CheckUnknown() const {
    for (const auto& [section, body] : tree_) {
      if (body.empty() && !body.data().empty()) {
        errors_.push_back(fmt::format("{}: key outside of any section", section));
        continue;
      }
      for (const auto& [key, value] : body) {
        const std::string path = section + "." + key;
        if (!seen_.count(path)) errors_.push_back(fmt::format("{}: unknown key", path));
      }
    }
  }

 private:
  template <typename T>
  static T Convert(const std::string& raw) {
    if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw std::invalid_argument("bool");
    } else if constexpr (std::is_same_v<T, double>) {
      std::size_t pos = 0;
      double v = std::stod(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument("trailing");
      return v;
    } else if constexpr (std::is_same_v<T, std::optional<std::uint64_t>>) {
      if (raw.empty() || raw == "auto") return std::nullopt;
      return Convert<std::uint64_t>(raw);
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      std::vector<std::string> parts;
      if (raw.empty()) return parts;
      boost::split(parts, raw, boost::is_any_of(","));
      for (auto& p : parts) boost::trim(p);
      return parts;
    } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
      std::vector<std::size_t> out;
      for (const auto& p : Convert<std::vector<std::string>>(raw)) out.push_back(Convert<std::size_t>(p));
      return out;
    } else if constexpr (std::is_same_v<T, std::vector<std::vector<double>>>) {
      // rows separated by ';', entries by ','
      std::vector<std::vector<double>> out;
      if (raw.empty()) return out;
      std::vector<std::string> rows;
      boost::split(rows, raw, boost::is_any_of(";"));
      for (const auto& row : rows) {
        std::vector<double> r;
        for (const auto& p : Convert<std::vector<std::string>>(row)) r.push_back(Convert<double>(p));
        out.push_back(std::move(r));
      }
      return out;
    } else {
      static_assert(std::is_unsigned_v<T>);
      if (raw.empty() || raw[0] == '-') throw std::invalid_argument("negative");
      std::size_t pos = 0;
      unsigned long long v = std::stoull(raw, &pos);
      if (pos != raw.size()) throw std::invalid_argument("trailing");
      return static_cast<T>(v);
    }
  }

  const pt::ptree& tree_;
  std::vector<std::string>& errors_;
  std::set<std::string> seen_;
};

std::string Num(double v) { return fmt::format("{}", v); }

std::string JoinSizes(const std::vector<std::size_t>& v) { return fmt::format("{}", fmt::join(v, ",")); }

std::string JoinStrings(const std::vector<std::string>& v) { return fmt::format("{}", fmt::join(v, ",")); }

std::string MixingText(const std::vector<std::vector<double>>& m) {
  std::vector<std::string> rows;
  for (const auto& r : m) {
    std::vector<std::string> e;
    for (double v : r) e.push_back(Num(v));
    rows.push_back(JoinStrings(e));
  }
  return fmt::format("{}", fmt::join(rows, ";"));
}

void WriteText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

// Shapes that follow from the data source rather than from [model].
ModelConfig ResolvedModel(const ExperimentConfig& cfg) {
  ModelConfig m = cfg.model;
  if (cfg.source == DataSource::kSynthetic) {
    m.num_features = cfg.synthetic.num_features;
    m.num_tasks = cfg.synthetic.num_tasks;
    m.num_scenarios = cfg.synthetic.num_scenarios;
  } else {
    m.num_features = cfg.csv.schema.feature_columns.size();
    m.num_tasks = cfg.csv.schema.label_columns.size();
    m.num_scenarios = cfg.csv.paths.empty() ? cfg.csv.train_paths.size() : cfg.csv.paths.size();
  }
  return m;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : DataError(JoinLines(problems)), problems_(std::move(problems)) {}

void ExperimentConfig::Validate() const {
  std::vector<std::string> e;
  const ModelConfig m = ResolvedModel(*this);
  const bool federated = strategy != Strategy::kLocalOnly;
  if (rounds < 1) e.push_back("experiment.rounds: must be >= 1");
  if (local_epochs < 1) e.push_back("experiment.local_epochs: must be >= 1");
  if (m.num_experts < 1) e.push_back("model.num_experts: must be >= 1");
  if (m.expert_hidden.empty()) e.push_back("model.expert_hidden: needs at least one layer");
  for (auto w : m.expert_hidden) {
    if (w == 0) e.push_back("model.expert_hidden: widths must be positive");
  }
  for (auto w : m.tower_hidden) {
    if (w == 0) e.push_back("model.tower_hidden: widths must be positive");
  }
  if (m.embedding_dim == 0) e.push_back("model.embedding_dim: must be positive");
  if (!(m.template_init_scale >= 0.0)) e.push_back("model.template_init_scale: must be >= 0");
  if (!(m.dropout >= 0.0 && m.dropout < 1.0)) e.push_back("model.dropout: must lie in [0,1)");
  if (!(m.bn_eps > 0.0)) e.push_back("model.bn_eps: must be positive");
  if (!(m.bn_momentum > 0.0 && m.bn_momentum < 1.0)) e.push_back("model.bn_momentum: must lie in (0,1)");
  if (batch_size < 2) e.push_back("train.batch_size: must be >= 2 (batch normalization)");
  if (!(learning_rate > 0.0)) e.push_back("train.learning_rate: must be positive");
  if (!(psi_learning_rate >= 0.0)) e.push_back("train.psi_learning_rate: must be >= 0");
  if (!(psi_limit >= 0.0)) e.push_back("train.psi_limit: must be >= 0");
  if (!(lambda >= 0.0)) e.push_back("train.lambda: must be >= 0");
  if (!(c >= 0.0 && c < 1.0)) e.push_back("train.c: must lie in [0,1)");
  if (!(fedbn_eps > 0.0)) e.push_back("train.fedbn_eps: must be positive");
  if (m.num_tasks < 1) e.push_back("data.tasks: must be >= 1");
  if (m.num_features < 1) e.push_back("data.features: must be >= 1");
  if (federated && m.num_scenarios < 2 && !allow_degenerate) {
    e.push_back("data.scenarios: federated strategies need at least 2 scenarios");
  }
  if (m.num_scenarios < 1) e.push_back("data.scenarios: must be >= 1");
  if (source == DataSource::kSynthetic) {
    if (synthetic.samples_per_scenario < 3) e.push_back("data.samples_per_scenario: must be >= 3");
    if (!(synthetic.coefficient_scale >= 0.0)) e.push_back("data.coefficient_scale: must be >= 0");
    if (!(synthetic.perturbation_scale >= 0.0)) e.push_back("data.perturbation_scale: must be >= 0");
    if (!(synthetic.temperature > 0.0)) e.push_back("data.temperature: must be positive");
    if (!synthetic.task_mixing.empty()) {
      bool ok = synthetic.task_mixing.size() == synthetic.num_tasks;
      for (const auto& r : synthetic.task_mixing) ok = ok && r.size() == synthetic.num_tasks;
      if (!ok) e.push_back("data.task_mixing: must be tasks x tasks");
    }
  } else {
    if (csv.schema.feature_columns.empty()) e.push_back("csv.feature_columns: required");
    if (csv.schema.label_columns.empty()) e.push_back("csv.label_columns: required");
    const bool presplit = !csv.train_paths.empty();
    if (presplit == !csv.paths.empty()) {
      e.push_back("csv.paths: give either paths or train/validation/test_paths");
    }
    if (presplit && (csv.validation_paths.size() != csv.train_paths.size() ||
                     csv.test_paths.size() != csv.train_paths.size())) {
      e.push_back("csv.validation_paths: train/validation/test_paths lengths differ");
    }
  }
  for (auto n : expert_sweep) {
    if (n < 1) e.push_back("ablation.expert_sweep: entries must be >= 1");
  }
  if (!e.empty()) throw ConfigError(std::move(e));
}

ClientConfig ExperimentConfig::MakeClientConfig() const {
  ClientConfig c;
  c.strategy = strategy;
  c.local_epochs = local_epochs;
  c.max_batches_per_round = max_batches_per_round;
  c.batching.batch_size = batch_size;
  c.batching.shuffle = shuffle;
  c.learning_rate = learning_rate;
  c.lambda = lambda;
  c.psi_lr = psi_learning_rate;
  c.psi_limit = psi_limit;
  c.fedbn_eps = fedbn_eps;
  return c;
}

ServerConfig ExperimentConfig::MakeServerConfig() const {
  ServerConfig s;
  s.strategy = strategy;
  s.c = c;
  s.fedbn_eps = fedbn_eps;
  s.allow_degenerate = allow_degenerate;
  return s;
}

ExperimentConfig ParseConfig(std::istream& in) {
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& err) {
    throw ConfigError({fmt::format("line {}: {}", err.line(), err.message())});
  }
  ExperimentConfig cfg;
  std::vector<std::string> errors;
  FieldReader r(tree, errors);

  std::string strategy = StrategyName(cfg.strategy);
  r.Get("experiment.seed", cfg.seed);
  r.Get("experiment.strategy", strategy);
  r.Get("experiment.rounds", cfg.rounds);
  r.Get("experiment.local_epochs", cfg.local_epochs);
  r.Get("experiment.output_dir", cfg.output_dir);
  r.Get("experiment.write_snapshots", cfg.write_snapshots);
  try {
    cfg.strategy = ParseStrategy(strategy);
  } catch (const DataError& err) {
    errors.push_back(std::string("experiment.strategy: ") + err.what());
  }

  r.Get("model.num_experts", cfg.model.num_experts);
  r.Get("model.expert_hidden", cfg.model.expert_hidden);
  r.Get("model.tower_hidden", cfg.model.tower_hidden);
  r.Get("model.embedding_dim", cfg.model.embedding_dim);
  r.Get("model.template_init_scale", cfg.model.template_init_scale);
  r.Get("model.dropout", cfg.model.dropout);
  r.Get("model.bn_eps", cfg.model.bn_eps);
  r.Get("model.bn_momentum", cfg.model.bn_momentum);

  r.Get("train.batch_size", cfg.batch_size);
  r.Get("train.shuffle", cfg.shuffle);
  r.Get("train.max_batches_per_round", cfg.max_batches_per_round);
  r.Get("train.learning_rate", cfg.learning_rate);
  r.Get("train.psi_learning_rate", cfg.psi_learning_rate);
  r.Get("train.psi_limit", cfg.psi_limit);
  r.Get("train.lambda", cfg.lambda);
  r.Get("train.c", cfg.c);
  r.Get("train.fedbn_eps", cfg.fedbn_eps);
  r.Get("train.allow_degenerate", cfg.allow_degenerate);

  std::string source = "synthetic";
  r.Get("data.source", source);
  if (source == "synthetic") {
    cfg.source = DataSource::kSynthetic;
  } else if (source == "csv") {
    cfg.source = DataSource::kCsv;
  } else {
    errors.push_back("data.source: expected synthetic or csv, got '" + source + "'");
  }
  r.Get("data.seed", cfg.data_seed);
  r.Get("data.scenarios", cfg.synthetic.num_scenarios);
  r.Get("data.tasks", cfg.synthetic.num_tasks);
  r.Get("data.features", cfg.synthetic.num_features);
  r.Get("data.samples_per_scenario", cfg.synthetic.samples_per_scenario);
  r.Get("data.coefficient_scale", cfg.synthetic.coefficient_scale);
  r.Get("data.perturbation_scale", cfg.synthetic.perturbation_scale);
  r.Get("data.temperature", cfg.synthetic.temperature);
  r.Get("data.task_mixing", cfg.synthetic.task_mixing);

  r.Get("csv.feature_columns", cfg.csv.schema.feature_columns);
  r.Get("csv.label_columns", cfg.csv.schema.label_columns);
  r.Get("csv.paths", cfg.csv.paths);
  r.Get("csv.train_paths", cfg.csv.train_paths);
  r.Get("csv.validation_paths", cfg.csv.validation_paths);
  r.Get("csv.test_paths", cfg.csv.test_paths);

  r.Get("ablation.expert_sweep", cfg.expert_sweep);

  r.CheckUnknown();
  if (!errors.empty()) throw ConfigError(std::move(errors));
  cfg.Validate();
  return cfg;
}

ExperimentConfig LoadConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path);
  return ParseConfig(in);
}

std::string EchoConfig(const ExperimentConfig& cfg) {
  std::string s;
  s += "[experiment]\n";
  s += fmt::format("seed = {}\n", cfg.seed);
  s += fmt::format("strategy = {}\n", StrategyName(cfg.strategy));
  s += fmt::format("rounds = {}\n", cfg.rounds);
  s += fmt::format("local_epochs = {}\n", cfg.local_epochs);
  s += fmt::format("output_dir = {}\n", cfg.output_dir);
  s += fmt::format("write_snapshots = {}\n", cfg.write_snapshots);
  s += "\n[model]\n";
  s += fmt::format("num_experts = {}\n", cfg.model.num_experts);
  s += fmt::format("expert_hidden = {}\n", JoinSizes(cfg.model.expert_hidden));
  s += fmt::format("tower_hidden = {}\n", JoinSizes(cfg.model.tower_hidden));
  s += fmt::format("embedding_dim = {}\n", cfg.model.embedding_dim);
  s += fmt::format("template_init_scale = {}\n", Num(cfg.model.template_init_scale));
  s += fmt::format("dropout = {}\n", Num(cfg.model.dropout));
  s += fmt::format("bn_eps = {}\n", Num(cfg.model.bn_eps));
  s += fmt::format("bn_momentum = {}\n", Num(cfg.model.bn_momentum));
  s += "\n[train]\n";
  s += fmt::format("batch_size = {}\n", cfg.batch_size);
  s += fmt::format("shuffle = {}\n", cfg.shuffle);
  s += fmt::format("max_batches_per_round = {}\n", cfg.max_batches_per_round);
  s += fmt::format("learning_rate = {}\n", Num(cfg.learning_rate));
  s += fmt::format("psi_learning_rate = {}\n", Num(cfg.psi_learning_rate));
  s += fmt::format("psi_limit = {}\n", Num(cfg.psi_limit));
  s += fmt::format("lambda = {}\n", Num(cfg.lambda));
  s += fmt::format("c = {}\n", Num(cfg.c));
  s += fmt::format("fedbn_eps = {}\n", Num(cfg.fedbn_eps));
  s += fmt::format("allow_degenerate = {}\n", cfg.allow_degenerate);
  s += "\n[data]\n";
  s += fmt::format("source = {}\n", cfg.source == DataSource::kSynthetic ? "synthetic" : "csv");
  s += fmt::format("seed = {}\n", cfg.ResolvedDataSeed());
  s += fmt::format("scenarios = {}\n", cfg.synthetic.num_scenarios);
  s += fmt::format("tasks = {}\n", cfg.synthetic.num_tasks);
  s += fmt::format("features = {}\n", cfg.synthetic.num_features);
  s += fmt::format("samples_per_scenario = {}\n", cfg.synthetic.samples_per_scenario);
  s += fmt::format("coefficient_scale = {}\n", Num(cfg.synthetic.coefficient_scale));
  s += fmt::format("perturbation_scale = {}\n", Num(cfg.synthetic.perturbation_scale));
  s += fmt::format("temperature = {}\n", Num(cfg.synthetic.temperature));
  s += fmt::format("task_mixing = {}\n", MixingText(cfg.synthetic.task_mixing));
  if (cfg.source == DataSource::kCsv) {
    s += "\n[csv]\n";
    s += fmt::format("feature_columns = {}\n", JoinStrings(cfg.csv.schema.feature_columns));
    s += fmt::format("label_columns = {}\n", JoinStrings(cfg.csv.schema.label_columns));
    s += fmt::format("paths = {}\n", JoinStrings(cfg.csv.paths));
    s += fmt::format("train_paths = {}\n", JoinStrings(cfg.csv.train_paths));
    s += fmt::format("validation_paths = {}\n", JoinStrings(cfg.csv.validation_paths));
    s += fmt::format("test_paths = {}\n", JoinStrings(cfg.csv.test_paths));
  }
  s += "\n[ablation]\n";
  s += fmt::format("expert_sweep = {}\n", JoinSizes(cfg.expert_sweep));
  return s;
}

std::vector<ScenarioShard> BuildShards(const ExperimentConfig& cfg) {
  if (cfg.source == DataSource::kSynthetic) {
    SyntheticSpec spec = cfg.synthetic;
    spec.seed = cfg.ResolvedDataSeed();
    return GenerateSynthetic(spec).shards;
  }
  std::vector<ScenarioShard> shards;
  if (!cfg.csv.paths.empty()) {
    for (std::size_t j = 0; j < cfg.csv.paths.size(); ++j) {
      shards.push_back(LoadCsv(cfg.csv.paths[j], cfg.csv.schema, j));
    }
  } else {
    for (std::size_t j = 0; j < cfg.csv.train_paths.size(); ++j) {
      shards.push_back(LoadCsvPresplit(cfg.csv.train_paths[j], cfg.csv.validation_paths[j],
                                       cfg.csv.test_paths[j], cfg.csv.schema, j));
    }
  }
  return shards;
}

std::string ExperimentResult::MetricsCsv() const {
  std::string s = "round,client,task,auc,bce\n";
  for (const auto& round : reports) {
    for (const auto& rep : round) {
      for (std::size_t i = 0; i < rep.auc.size(); ++i) {
        s += fmt::format("{},{},{},{},{}\n", rep.round, rep.client, i, rep.auc[i], rep.bce[i]);
      }
    }
  }
  return s;
}

std::string ExperimentResult::ConvergenceCsv() const {
  std::string s = "round,client,train_loss\n";
  for (std::size_t r = 0; r < train_loss.size(); ++r) {
    for (std::size_t j = 0; j < train_loss[r].size(); ++j) {
      s += fmt::format("{},{},{}\n", r + 1, j, train_loss[r][j]);
    }
  }
  return s;
}

double ExperimentResult::FinalMeanAuc() const {
  if (reports.empty()) throw ContractViolation("no rounds were run");
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& rep : reports.back()) {
    for (double a : rep.auc) {
      sum += a;
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

ExperimentResult RunExperiment(const ExperimentConfig& cfg, const std::vector<ScenarioShard>& shards,
                               const RunHooks& hooks) {
  cfg.Validate();
  const ModelConfig mcfg = ResolvedModel(cfg);
  if (shards.size() != mcfg.num_scenarios) {
    throw ContractViolation(fmt::format("expected {} shards, got {}", mcfg.num_scenarios, shards.size()));
  }

  fs::path out;
  if (!cfg.output_dir.empty()) {
    out = cfg.output_dir;
    fs::create_directories(out);
    if (cfg.write_snapshots) fs::create_directories(out / "snapshots");
    WriteText(out / "config.echo", EchoConfig(cfg));
  }

  ExperimentResult result;
  result.shard_checksum = ShardChecksum(shards);

  // One initialization stream shared by every client: only W_scenario
  // differs between them at round 0.
  const std::uint64_t init_seed = Mix(cfg.seed ^ 0x696e6974ULL);
  const ClientConfig ccfg = cfg.MakeClientConfig();
  std::vector<Client> clients;
  clients.reserve(shards.size());
  for (std::size_t j = 0; j < shards.size(); ++j) {
    clients.emplace_back(j, ClientModel(mcfg, j, init_seed), shards[j], ccfg, Mix(cfg.seed + 1 + j));
  }
  Server server(cfg.MakeServerConfig());

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const int round = static_cast<int>(r);
    std::vector<double> losses;
    for (auto& c : clients) losses.push_back(c.TrainRound(round).mean_loss);
    RoundResult rr = RunRound(server, clients, round);
    if (hooks.after_round) hooks.after_round(round, server, clients);
    result.train_loss.push_back(std::move(losses));
    result.reports.push_back(std::move(rr.reports));
    if (!out.empty() && cfg.write_snapshots) {
      RoundSnapshot snap = server.last_snapshot();
      snap.strategy = static_cast<std::uint32_t>(EffectiveStrategy(cfg.strategy));
      snap.round = static_cast<std::uint32_t>(round);
      WriteSnapshot((out / "snapshots" / fmt::format("round_{}.bin", round)).string(), snap);
    }
  }

  if (!out.empty()) {
    WriteText(out / "metrics.csv", result.MetricsCsv());
    WriteText(out / "convergence.csv", result.ConvergenceCsv());
  }
  return result;
}

ExperimentResult RunExperiment(const ExperimentConfig& cfg) {
  cfg.Validate();
  return RunExperiment(cfg, BuildShards(cfg));
}

std::string AblationResult::TableCsv() const {
  std::string s = "section,variant";
  for (std::size_t j = 0; j < num_scenarios; ++j) {
    for (std::size_t i = 0; i < num_tasks; ++i) s += fmt::format(",scenario{}_auc_task{}", j, i);
  }
  s += "\n";
  auto rows = [&](const char* section, const std::vector<AblationRow>& v) {
    for (const auto& row : v) {
      s += fmt::format("{},{}", section, row.label);
      for (double a : row.auc) s += fmt::format(",{:.4f}", a);
      s += "\n";
    }
  };
  rows("ablation", strategies);
  rows("experts", expert_sweep);
  return s;
}

AblationResult RunAblationSuite(const ExperimentConfig& base) {
  base.Validate();
  const auto shards = BuildShards(base);
  const ModelConfig mcfg = ResolvedModel(base);
  const fs::path root = base.output_dir.empty() ? fs::path() : fs::path(base.output_dir);
  if (!root.empty()) fs::create_directories(root);

  AblationResult res;
  res.num_scenarios = mcfg.num_scenarios;
  res.num_tasks = mcfg.num_tasks;
  std::string checksums;

  auto run = [&](const std::string& label, ExperimentConfig cfg) {
    cfg.output_dir = root.empty() ? std::string() : (root / label).string();
    ExperimentResult r = RunExperiment(cfg, shards);
    AblationRow row{label, {}, r.shard_checksum};
    for (const auto& rep : r.reports.back()) {
      for (double a : rep.auc) row.auc.push_back(a);
    }
    checksums += fmt::format("{} shard_checksum={:016x}\n", label, r.shard_checksum);
    std::cerr << fmt::format("[ablate] {} mean auc {:.4f}\n", label, r.FinalMeanAuc());
    return row;
  };

  const std::pair<const char*, Strategy> variants[] = {
      {"A1", Strategy::kFedAvgAll},
      {"A2", Strategy::kFedAvgExpertAll},
      {"A3", Strategy::kA3},
      {"A4", Strategy::kFedAvgTowerOnly},
  };
  for (const auto& [label, strategy] : variants) {
    ExperimentConfig cfg = base;
    cfg.strategy = strategy;
    res.strategies.push_back(run(label, cfg));
  }
  for (std::size_t n : base.expert_sweep) {
    ExperimentConfig cfg = base;
    cfg.strategy = Strategy::kMain;
    cfg.model.num_experts = n;
    res.expert_sweep.push_back(run(fmt::format("Expert={}", n), cfg));
  }

  if (!root.empty()) {
    WriteText(root / "table.csv", res.TableCsv());
    WriteText(root / "checksums.log", checksums);
  }
  return res;
}

}  // namespace fedmoe
