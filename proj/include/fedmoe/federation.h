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

#ifndef FEDMOE_FEDERATION_H_
#define FEDMOE_FEDERATION_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedmoe/aggregation.h"
#include "fedmoe/data.h"
#include "fedmoe/metrics.h"
#include "fedmoe/model.h"
#include "fedmoe/snapshot.h"

namespace fedmoe {

/// Aggregation strategies. kA3 runs exactly the kMain code path.
enum class Strategy : std::uint32_t {
  kMain = 0,
  kFedAvgAll = 1,        // A1: plain mean of scenario weights and towers
  kFedAvgExpertAll = 2,  // A2: plain mean of every expert tensor, towers as main
  kA3 = 3,               // A3: identical to main
  kFedAvgTowerOnly = 4,  // A4: experts untouched, plain mean of towers
  kPlainFedAvg = 5,      // baseline: plain mean of every trainable tensor
  kLocalOnly = 6,        // no server at all
};

std::string StrategyName(Strategy s);
Strategy ParseStrategy(const std::string& name);
/// True for strategies that run server-side batch normalization.
bool UsesFedBN(Strategy s);
/// The aggregation a strategy actually performs. A3 is defined as MAIN, so
/// it maps to kMain; snapshots record this value.
Strategy EffectiveStrategy(Strategy s);

enum class KeyKind {
  kExpertScenario,  // W_scenario of (expert, layer)
  kExpertPrivate,   // other expert tensors (only A2 uploads them)
  kTower,
  kModelPrivate,    // gates, embeddings, input BN (only the plain baseline)
};

/// Identifies one aggregatable tensor of a client.
struct SharedKey {
  KeyKind kind;
  std::size_t group;  // expert or task index
  std::size_t index;  // layer, or tensor index within a tower
  std::string name;
};

/// The keys a client uploads under `strategy`.
std::vector<SharedKey> SharedKeysFor(Strategy strategy, ClientModel& model);

/// Name of the FedBN batch that holds expert scenario weights of `layer`.
std::string ExpertGroupName(std::size_t layer);

struct ClientUpload {
  std::size_t client = 0;
  std::vector<std::pair<SharedKey, Tensor>> tensors;
  /// FedBN affine terms per batch name (expert layer group or tower tensor).
  std::map<std::string, FedBNAffine> fedbn_affine;
};

/// Which scalar mixing weight scales a coordinated update.
struct PsiSlot {
  enum class Kind { kExpert, kTower } kind = Kind::kExpert;
  std::size_t group = 0;  // expert or task index
  std::size_t layer = 0;  // expert layer; unused for towers
};

struct ServerMessage {
  struct Assignment {
    std::string name;
    Tensor value;
  };
  struct Increment {
    std::string name;
    Tensor mean_delta;
    std::optional<Tensor> coordinated;
    PsiSlot slot;
  };
  std::vector<Assignment> assignments;
  std::vector<Increment> increments;
  /// New alignment references for scenario weights.
  ReferenceMap references;
};

struct ClientConfig {
  Strategy strategy = Strategy::kMain;
  std::size_t local_epochs = 1;
  /// > 0 caps the batches per round (e.g. 1 to communicate after each batch).
  std::size_t max_batches_per_round = 0;
  BatchConfig batching;
  double learning_rate = 1e-3;
  double lambda = 0.5;
  double psi_lr = 0.01;
  double psi_limit = 2.0;
  double fedbn_eps = 1e-5;
};

/// A simulated participant: one scenario's model, data and optimizer.
class Client {
 public:
  Client(std::size_t index, ClientModel model, ScenarioShard shard, ClientConfig cfg,
         std::uint64_t seed);

  /// E local epochs on the train partition. Records the round-start value
  /// of every tensor the server may later increment.
  TrainStats TrainRound(int round);

  ClientUpload MakeUpload();

  /// Applies assignments and personalized increments, then takes one psi
  /// step per coordinated slot on the held-out batch.
  void ApplyServerMessage(const ServerMessage& msg);

  /// Directional derivative of the held-out loss along each coordinated
  /// update in `msg`, at the current parameters.
  std::map<std::string, double> DirectionalDerivatives(const ServerMessage& msg);

  EvalReport Evaluate(int round) const;

  std::size_t index() const { return index_; }
  ClientModel& model() { return model_; }
  const ClientModel& model() const { return model_; }
  const ScenarioShard& shard() const { return shard_; }
  const ReferenceMap& references() const { return references_; }
  const ClientConfig& config() const { return cfg_; }
  const Batch& held_out() const { return held_out_; }

 private:
  static std::string SlotId(const PsiSlot& s);
  double& PsiFor(const PsiSlot& s);

  std::size_t index_;
  ClientModel model_;
  ScenarioShard shard_;
  ClientConfig cfg_;
  std::uint64_t seed_;
  AdamState adam_;
  Rng rng_;
  ReferenceMap references_;
  std::map<std::string, Tensor> round_start_;
  Batch held_out_;
};

struct ServerConfig {
  Strategy strategy = Strategy::kMain;
  double c = 0.4;
  double fedbn_eps = 1e-5;
  /// Permits single-upload FedBN batches (one client, one expert).
  bool allow_degenerate = false;
  SolverOptions solver;
};

/// What the server saw, for privacy audits.
struct AuditEntry {
  std::size_t client;
  std::string name;
  KeyKind kind;
  bool affine_only;  // FedBN affine terms rather than a parameter tensor
};

class Server {
 public:
  explicit Server(ServerConfig cfg);

  /// Aggregates one round of uploads (canonicalized by client index) and
  /// returns one message per upload, in the same order.
  std::vector<ServerMessage> Aggregate(std::span<const ClientUpload> uploads, int round);

  const RoundSnapshot& last_snapshot() const { return snapshot_; }
  /// Reloads the previous-round normalized uploads from a snapshot so the
  /// next round can compute increments.
  void Restore(const RoundSnapshot& snap);

  const std::vector<AuditEntry>& audit_log() const { return audit_; }
  const ServerConfig& config() const { return cfg_; }

 private:
  void AggregatePlain(std::span<const ClientUpload> uploads, std::vector<ServerMessage>& out,
                      const std::function<bool(const SharedKey&)>& select);
  void AggregateExperts(std::span<const ClientUpload> uploads, std::vector<ServerMessage>& out);
  void AggregateTowers(std::span<const ClientUpload> uploads, std::vector<ServerMessage>& out);
  FedBNResult Normalize(const std::vector<Tensor>& uploads,
                        const std::vector<FedBNAffine>& affine) const;

  ServerConfig cfg_;
  std::map<std::string, Tensor> history_;  // "c<j>/<name>" -> last normalized upload
  std::map<std::string, Tensor> pending_history_;
  RoundSnapshot snapshot_;
  std::vector<AuditEntry> audit_;
};

struct RoundResult {
  std::vector<EvalReport> reports;  // one per client, after application
};

/// Server phase of round `round`: uploads, aggregation, application, psi
/// updates, then evaluation on each client's test partition. Clients must
/// already have trained for the round.
RoundResult RunRound(Server& server, std::vector<Client>& clients, int round);

}  // namespace fedmoe

#endif  // FEDMOE_FEDERATION_H_
