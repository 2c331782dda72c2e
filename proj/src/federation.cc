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

#include "fedmoe/federation.h"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>

namespace fedmoe {
namespace {

std::uint64_t SplitMix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool AggregatesScenarioWeights(Strategy s) {
  switch (s) {
    case Strategy::kMain:
    case Strategy::kA3:
    case Strategy::kFedAvgAll:
    case Strategy::kFedAvgExpertAll:
    case Strategy::kPlainFedAvg:
      return true;
    default:
      return false;
  }
}

bool TowersUseFedBN(Strategy s) {
  return s == Strategy::kMain || s == Strategy::kA3 || s == Strategy::kFedAvgExpertAll;
}

bool ExpertsUseFedBN(Strategy s) { return s == Strategy::kMain || s == Strategy::kA3; }

std::string HistoryKey(std::size_t client, const std::string& name) {
  return fmt::format("c{}/{}", client, name);
}

Tensor Flatten(std::span<const Tensor> parts) {
  std::vector<double> flat;
  for (const auto& p : parts) flat.insert(flat.end(), p.values().begin(), p.values().end());
  return Tensor::Vector(std::move(flat));
}

Tensor Slice(const Tensor& flat, std::size_t offset, const Shape& shape) {
  const std::size_t n = ShapeNumel(shape);
  std::vector<double> v(flat.data() + offset, flat.data() + offset + n);
  return Tensor(shape, std::move(v));
}

Tensor WeightsTensor(const std::vector<double>& w) { return Tensor::Vector(w); }

}  // namespace

std::string StrategyName(Strategy s) {
  switch (s) {
    case Strategy::kMain: return "main";
    case Strategy::kFedAvgAll: return "a1";
    case Strategy::kFedAvgExpertAll: return "a2";
    case Strategy::kA3: return "a3";
    case Strategy::kFedAvgTowerOnly: return "a4";
    case Strategy::kPlainFedAvg: return "fedavg";
    case Strategy::kLocalOnly: return "local";
  }
  return "unknown";
}

Strategy ParseStrategy(const std::string& name) {
  for (auto s : {Strategy::kMain, Strategy::kFedAvgAll, Strategy::kFedAvgExpertAll, Strategy::kA3,
                 Strategy::kFedAvgTowerOnly, Strategy::kPlainFedAvg, Strategy::kLocalOnly}) {
    if (StrategyName(s) == name) return s;
  }
  throw DataError("unknown strategy '" + name +
                  "' (expected main, a1, a2, a3, a4, fedavg or local)");
}

bool UsesFedBN(Strategy s) { return TowersUseFedBN(s) || ExpertsUseFedBN(s); }

Strategy EffectiveStrategy(Strategy s) { return s == Strategy::kA3 ? Strategy::kMain : s; }

std::string ExpertGroupName(std::size_t layer) {
  return fmt::format("expert_scenario.layer.{}", layer);
}

std::vector<SharedKey> SharedKeysFor(Strategy strategy, ClientModel& model) {
  std::vector<SharedKey> keys;
  for (const auto& np : model.Parameters()) {
    if (!np.param->trainable()) continue;
    const std::string& name = np.param->name();
    const bool is_expert = name.rfind("expert.", 0) == 0;
    KeyKind kind;
    if (np.role == ParamRole::kScenarioShared) {
      kind = KeyKind::kExpertScenario;
    } else if (np.role == ParamRole::kTower) {
      kind = KeyKind::kTower;
    } else if (is_expert) {
      kind = KeyKind::kExpertPrivate;
    } else {
      kind = KeyKind::kModelPrivate;
    }
    bool include = false;
    switch (strategy) {
      case Strategy::kMain:
      case Strategy::kA3:
      case Strategy::kFedAvgAll:
        include = kind == KeyKind::kExpertScenario || kind == KeyKind::kTower;
        break;
      case Strategy::kFedAvgExpertAll:
        include = kind != KeyKind::kModelPrivate;
        break;
      case Strategy::kFedAvgTowerOnly:
        include = kind == KeyKind::kTower;
        break;
      case Strategy::kPlainFedAvg:
        include = true;
        break;
      case Strategy::kLocalOnly:
        include = false;
        break;
    }
    if (include) keys.push_back({kind, np.group, np.index, name});
  }
  return keys;
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

Client::Client(std::size_t index, ClientModel model, ScenarioShard shard, ClientConfig cfg,
               std::uint64_t seed)
    : index_(index),
      model_(std::move(model)),
      shard_(std::move(shard)),
      cfg_(cfg),
      seed_(seed),
      rng_(SplitMix(seed)) {
  if (shard_.train.empty() || shard_.validation.empty() || shard_.test.empty()) {
    throw ContractViolation("client shard partitions must be nonempty");
  }
  adam_.learning_rate = cfg_.learning_rate;
  const std::size_t n_held = std::min(cfg_.batching.batch_size, shard_.validation.size());
  held_out_ = MakeBatch(std::span<const ExampleRecord>(shard_.validation).first(n_held));
  if (AggregatesScenarioWeights(cfg_.strategy)) {
    for (auto& e : model_.experts) {
      for (auto& l : e.layers) {
        references_[l.w_scenario.name()] = Tensor(l.w_scenario.shape(), 0.0);
      }
    }
  }
}

TrainStats Client::TrainRound(int round) {
  round_start_.clear();
  for (const auto& key : SharedKeysFor(cfg_.strategy, model_)) {
    round_start_[key.name] = model_.FindParameter(key.name)->value();
  }
  TrainStats total;
  total.task_bce.assign(model_.config().num_tasks, 0.0);
  for (std::size_t e = 0; e < cfg_.local_epochs; ++e) {
    BatchConfig bc = cfg_.batching;
    bc.seed = SplitMix(seed_ ^ SplitMix(static_cast<std::uint64_t>(round) * 1000003ULL + e));
    auto st = TrainEpoch(model_, shard_.train, bc, adam_, references_, cfg_.lambda, rng_,
                         cfg_.max_batches_per_round);
    total.mean_loss += st.mean_loss;
    for (std::size_t i = 0; i < st.task_bce.size(); ++i) total.task_bce[i] += st.task_bce[i];
    total.batches += st.batches;
  }
  const double e = static_cast<double>(cfg_.local_epochs);
  total.mean_loss /= e;
  for (auto& v : total.task_bce) v /= e;
  return total;
}

ClientUpload Client::MakeUpload() {
  ClientUpload up;
  up.client = index_;
  std::map<std::size_t, std::vector<Tensor>> by_layer;
  for (const auto& key : SharedKeysFor(cfg_.strategy, model_)) {
    const Tensor& v = model_.FindParameter(key.name)->value();
    up.tensors.emplace_back(key, v);
    if (key.kind == KeyKind::kExpertScenario && ExpertsUseFedBN(cfg_.strategy)) {
      by_layer[key.index].push_back(v);
    }
    if (key.kind == KeyKind::kTower && TowersUseFedBN(cfg_.strategy)) {
      up.fedbn_affine[key.name] = ClientFedBNAffine(std::span<const Tensor>(&v, 1), cfg_.fedbn_eps);
    }
  }
  for (const auto& [layer, tensors] : by_layer) {
    up.fedbn_affine[ExpertGroupName(layer)] = ClientFedBNAffine(tensors, cfg_.fedbn_eps);
  }
  return up;
}

std::string Client::SlotId(const PsiSlot& s) {
  return s.kind == PsiSlot::Kind::kExpert ? fmt::format("expert.{}.{}", s.group, s.layer)
                                          : fmt::format("tower.{}", s.group);
}

double& Client::PsiFor(const PsiSlot& s) {
  if (s.kind == PsiSlot::Kind::kExpert) return model_.psi.expert_psi(s.group, s.layer);
  return model_.psi.tower.at(s.group);
}

void Client::ApplyServerMessage(const ServerMessage& msg) {
  for (const auto& a : msg.assignments) {
    Parameter* p = model_.FindParameter(a.name);
    if (p == nullptr) throw ContractViolation("server assigned unknown tensor " + a.name);
    RequireSameShape(p->value(), a.value, "server assignment");
    p->mutable_value() = a.value;
  }
  bool any_coordinated = false;
  for (const auto& inc : msg.increments) {
    Parameter* p = model_.FindParameter(inc.name);
    auto start = round_start_.find(inc.name);
    if (p == nullptr || start == round_start_.end()) {
      throw ContractViolation("server incremented unknown tensor " + inc.name);
    }
    const Tensor* coordinated = inc.coordinated ? &*inc.coordinated : nullptr;
    p->mutable_value() =
        ApplyPersonalizedUpdate(start->second, inc.mean_delta, coordinated, PsiFor(inc.slot));
    any_coordinated = any_coordinated || coordinated != nullptr;
  }
  for (const auto& [name, ref] : msg.references) references_[name] = ref;

  if (!any_coordinated) return;
  auto derivs = DirectionalDerivatives(msg);
  for (const auto& inc : msg.increments) {
    if (!inc.coordinated) continue;
    auto it = derivs.find(SlotId(inc.slot));
    if (it == derivs.end()) continue;
    double& psi = PsiFor(inc.slot);
    psi = PsiStep(psi, it->second, cfg_.psi_lr, cfg_.psi_limit);
    // Each slot steps once even when it spans several tensors.
    derivs.erase(it);
  }
}

std::map<std::string, double> Client::DirectionalDerivatives(const ServerMessage& msg) {
  auto params = model_.TrainableParameters();
  for (Parameter* p : params) p->ZeroGrad();
  Rng unused(0);
  auto loss = LocalLoss(model_, held_out_, references_, cfg_.lambda, Mode::kEval, unused);
  Backward(loss.total);
  std::map<std::string, double> out;
  for (const auto& inc : msg.increments) {
    if (!inc.coordinated) continue;
    const Parameter* p = model_.FindParameter(inc.name);
    out[SlotId(inc.slot)] += Dot(p->grad(), *inc.coordinated);
  }
  for (Parameter* p : params) p->ZeroGrad();
  return out;
}

EvalReport Client::Evaluate(int round) const {
  return EvaluateClient(model_, shard_.test, round, index_);
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

Server::Server(ServerConfig cfg) : cfg_(cfg) {
  if (!(cfg_.c >= 0.0 && cfg_.c < 1.0)) throw ContractViolation("server: c must lie in [0,1)");
}

FedBNResult Server::Normalize(const std::vector<Tensor>& uploads,
                              const std::vector<FedBNAffine>& affine) const {
  if (uploads.size() == 1 && cfg_.allow_degenerate) {
    // A one-element batch has zero spread, so it collapses to beta_g.
    FedBNResult r;
    r.state.mean = uploads[0];
    r.state.var = Tensor(uploads[0].shape(), 0.0);
    std::vector<Tensor> g, b;
    for (const auto& a : affine) {
      g.push_back(a.gamma);
      b.push_back(a.beta);
    }
    r.state.gamma = FedAverage(g);
    r.state.beta = FedAverage(b);
    r.state.eps = cfg_.fedbn_eps;
    r.normalized = {r.state.beta};
    return r;
  }
  return FedBNNormalize(uploads, affine, cfg_.fedbn_eps);
}

std::vector<ServerMessage> Server::Aggregate(std::span<const ClientUpload> uploads, int round) {
  if (round < 1) throw ContractViolation("rounds are numbered from 1");
  for (std::size_t k = 1; k < uploads.size(); ++k) {
    if (uploads[k].client <= uploads[k - 1].client) {
      throw ContractViolation("uploads must be ordered by strictly increasing client index");
    }
  }
  if (UsesFedBN(cfg_.strategy) && uploads.size() < 2 && !cfg_.allow_degenerate) {
    throw ContractViolation(fmt::format("strategy {} needs at least 2 clients, got {}",
                                        StrategyName(cfg_.strategy), uploads.size()));
  }

  for (const auto& up : uploads) {
    for (const auto& [key, t] : up.tensors) audit_.push_back({up.client, key.name, key.kind, false});
    for (const auto& [group, a] : up.fedbn_affine) {
      audit_.push_back({up.client, group, KeyKind::kExpertScenario, true});
    }
  }

  snapshot_ = RoundSnapshot{};
  snapshot_.strategy = static_cast<std::uint32_t>(EffectiveStrategy(cfg_.strategy));
  snapshot_.round = static_cast<std::uint32_t>(round);
  for (const auto& up : uploads) {
    for (const auto& [key, t] : up.tensors) {
      snapshot_.entries[fmt::format("upload/c{}/{}", up.client, key.name)] = t;
    }
  }
  pending_history_.clear();

  std::vector<ServerMessage> out(uploads.size());
  auto kind_in = [](std::initializer_list<KeyKind> kinds) {
    std::vector<KeyKind> ks(kinds);
    return [ks](const SharedKey& k) { return std::find(ks.begin(), ks.end(), k.kind) != ks.end(); };
  };
  switch (cfg_.strategy) {
    case Strategy::kMain:
    case Strategy::kA3:
      AggregateExperts(uploads, out);
      AggregateTowers(uploads, out);
      break;
    case Strategy::kFedAvgAll:
      AggregatePlain(uploads, out, kind_in({KeyKind::kExpertScenario, KeyKind::kTower}));
      break;
    case Strategy::kFedAvgExpertAll:
      AggregatePlain(uploads, out, kind_in({KeyKind::kExpertScenario, KeyKind::kExpertPrivate}));
      AggregateTowers(uploads, out);
      break;
    case Strategy::kFedAvgTowerOnly:
      AggregatePlain(uploads, out, kind_in({KeyKind::kTower}));
      break;
    case Strategy::kPlainFedAvg:
      AggregatePlain(uploads, out, [](const SharedKey&) { return true; });
      break;
    case Strategy::kLocalOnly:
      break;
  }
  for (auto& [k, v] : pending_history_) history_[k] = std::move(v);
  pending_history_.clear();
  return out;
}

void Server::AggregatePlain(std::span<const ClientUpload> uploads, std::vector<ServerMessage>& out,
                            const std::function<bool(const SharedKey&)>& select) {
  if (uploads.empty()) return;
  for (std::size_t t = 0; t < uploads[0].tensors.size(); ++t) {
    const SharedKey& key = uploads[0].tensors[t].first;
    if (!select(key)) continue;
    std::vector<Tensor> members;
    for (const auto& up : uploads) {
      if (t >= up.tensors.size() || up.tensors[t].first.name != key.name) {
        throw ContractViolation("client " + std::to_string(up.client) +
                                " uploaded a different key layout");
      }
      members.push_back(up.tensors[t].second);
    }
    Tensor mean = FedAverage(members);
    for (auto& msg : out) {
      msg.assignments.push_back({key.name, mean});
      if (key.kind == KeyKind::kExpertScenario) msg.references[key.name] = mean;
    }
    snapshot_.entries["aggregate/" + key.name] = std::move(mean);
  }
}

void Server::AggregateExperts(std::span<const ClientUpload> uploads,
                              std::vector<ServerMessage>& out) {
  struct Member {
    std::size_t upload;
    std::size_t expert;
    const std::string* name;
    const Tensor* value;
  };
  std::map<std::size_t, std::vector<Member>> layers;
  for (std::size_t u = 0; u < uploads.size(); ++u) {
    for (const auto& [key, t] : uploads[u].tensors) {
      if (key.kind == KeyKind::kExpertScenario) layers[key.index].push_back({u, key.group, &key.name, &t});
    }
  }

  for (auto& [layer, members] : layers) {
    const std::string group = ExpertGroupName(layer);
    std::vector<Tensor> values;
    for (const auto& m : members) values.push_back(*m.value);
    std::vector<FedBNAffine> affine;
    for (const auto& up : uploads) {
      auto it = up.fedbn_affine.find(group);
      if (it == up.fedbn_affine.end()) {
        throw ContractViolation(fmt::format("client {} sent no FedBN terms for {}", up.client, group));
      }
      affine.push_back(it->second);
    }
    FedBNResult bn = Normalize(values, affine);
    Tensor aggregate = FedAverage(bn.normalized);

    std::vector<Tensor> previous;
    for (const auto& m : members) {
      auto it = history_.find(HistoryKey(uploads[m.upload].client, *m.name));
      if (it == history_.end()) {
        previous.clear();
        break;
      }
      previous.push_back(it->second);
    }
    auto deltas = ComputeDeltas(bn.normalized, previous);
    std::optional<Tensor> coordinated;
    if (deltas) {
      auto coord = SolveConflictWeights(deltas->pair_deltas, deltas->mean_delta, cfg_.c, cfg_.solver);
      coordinated = ComposeCoordinatedUpdate(coord);
      snapshot_.entries["mean_delta/" + group] = deltas->mean_delta;
      snapshot_.entries["coordinated/" + group] = *coordinated;
      snapshot_.entries["weights/" + group] = WeightsTensor(coord.weights);
    }

    for (std::size_t k = 0; k < members.size(); ++k) {
      const Member& m = members[k];
      ServerMessage& msg = out[m.upload];
      msg.references[*m.name] = aggregate;
      if (deltas) {
        msg.increments.push_back({*m.name, deltas->mean_delta, coordinated,
                                  PsiSlot{PsiSlot::Kind::kExpert, m.expert, layer}});
      } else {
        // No history yet: the FedBN average is the whole update.
        msg.assignments.push_back({*m.name, aggregate});
      }
      const std::string hk = HistoryKey(uploads[m.upload].client, *m.name);
      pending_history_[hk] = bn.normalized[k];
      snapshot_.entries["normalized/" + hk] = bn.normalized[k];
    }
    snapshot_.entries["aggregate/" + group] = aggregate;
    snapshot_.entries["fedbn_gamma/" + group] = bn.state.gamma;
    snapshot_.entries["fedbn_beta/" + group] = bn.state.beta;
  }
}

void Server::AggregateTowers(std::span<const ClientUpload> uploads,
                             std::vector<ServerMessage>& out) {
  // task -> ordered tensor keys (taken from the first upload)
  std::map<std::size_t, std::vector<std::pair<std::size_t, std::string>>> tasks;
  if (uploads.empty()) return;
  for (const auto& [key, t] : uploads[0].tensors) {
    if (key.kind == KeyKind::kTower) tasks[key.group].emplace_back(key.index, key.name);
  }
  auto find_tensor = [](const ClientUpload& up, const std::string& name) -> const Tensor& {
    for (const auto& [key, t] : up.tensors) {
      if (key.name == name) return t;
    }
    throw ContractViolation(fmt::format("client {} did not upload {}", up.client, name));
  };

  for (auto& [task, tensors] : tasks) {
    std::sort(tensors.begin(), tensors.end());
    const std::string group = fmt::format("tower.{}", task);
    // normalized[u][t]
    std::vector<std::vector<Tensor>> normalized(uploads.size());
    std::vector<Tensor> aggregates;
    for (const auto& [idx, name] : tensors) {
      std::vector<Tensor> values;
      std::vector<FedBNAffine> affine;
      for (const auto& up : uploads) {
        values.push_back(find_tensor(up, name));
        auto it = up.fedbn_affine.find(name);
        if (it == up.fedbn_affine.end()) {
          throw ContractViolation(fmt::format("client {} sent no FedBN terms for {}", up.client, name));
        }
        affine.push_back(it->second);
      }
      FedBNResult bn = Normalize(values, affine);
      for (std::size_t u = 0; u < uploads.size(); ++u) normalized[u].push_back(bn.normalized[u]);
      aggregates.push_back(FedAverage(bn.normalized));
      snapshot_.entries["aggregate/" + name] = aggregates.back();
    }

    std::vector<Tensor> current, previous;
    bool have_history = true;
    for (std::size_t u = 0; u < uploads.size(); ++u) {
      current.push_back(Flatten(normalized[u]));
      std::vector<Tensor> prev_parts;
      for (const auto& [idx, name] : tensors) {
        auto it = history_.find(HistoryKey(uploads[u].client, name));
        if (it == history_.end()) {
          have_history = false;
          break;
        }
        prev_parts.push_back(it->second);
      }
      if (!have_history) break;
      previous.push_back(Flatten(prev_parts));
    }
    if (!have_history) previous.clear();

    auto deltas = ComputeDeltas(current, previous);
    Tensor coordinated;
    if (deltas) {
      auto coord = SolveConflictWeights(deltas->pair_deltas, deltas->mean_delta, cfg_.c, cfg_.solver);
      coordinated = ComposeCoordinatedUpdate(coord);
      snapshot_.entries["mean_delta/" + group] = deltas->mean_delta;
      snapshot_.entries["coordinated/" + group] = coordinated;
      snapshot_.entries["weights/" + group] = WeightsTensor(coord.weights);
    }

    for (std::size_t u = 0; u < uploads.size(); ++u) {
      std::size_t offset = 0;
      for (std::size_t t = 0; t < tensors.size(); ++t) {
        const std::string& name = tensors[t].second;
        const Tensor& norm = normalized[u][t];
        if (deltas) {
          out[u].increments.push_back({name, Slice(deltas->mean_delta, offset, norm.shape()),
                                       Slice(coordinated, offset, norm.shape()),
                                       PsiSlot{PsiSlot::Kind::kTower, task, 0}});
        } else {
          out[u].assignments.push_back({name, aggregates[t]});
        }
        offset += norm.size();
        const std::string hk = HistoryKey(uploads[u].client, name);
        pending_history_[hk] = norm;
        snapshot_.entries["normalized/" + hk] = norm;
      }
    }
  }
}

void Server::Restore(const RoundSnapshot& snap) {
  if (snap.strategy != static_cast<std::uint32_t>(EffectiveStrategy(cfg_.strategy))) {
    throw DataError("snapshot strategy does not match the server");
  }
  history_.clear();
  const std::string prefix = "normalized/";
  for (const auto& [name, t] : snap.entries) {
    if (name.rfind(prefix, 0) == 0) history_[name.substr(prefix.size())] = t;
  }
  snapshot_ = snap;
}

RoundResult RunRound(Server& server, std::vector<Client>& clients, int round) {
  if (server.config().strategy != Strategy::kLocalOnly) {
    std::vector<ClientUpload> uploads;
    uploads.reserve(clients.size());
    for (auto& c : clients) uploads.push_back(c.MakeUpload());
    auto messages = server.Aggregate(uploads, round);
    for (std::size_t k = 0; k < clients.size(); ++k) clients[k].ApplyServerMessage(messages[k]);
  }
  RoundResult res;
  for (const auto& c : clients) res.reports.push_back(c.Evaluate(round));
  return res;
}

}  // namespace fedmoe
