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

#include "fedmoe/model.h"

#include <fmt/format.h>

#include <cmath>

namespace fedmoe {
namespace {

Tensor RandomNormal(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

Parameter HeWeight(const std::string& name, std::size_t d_in, std::size_t d_out, Rng& rng) {
  return Parameter(name, RandomNormal({d_in, d_out}, std::sqrt(2.0 / static_cast<double>(d_in)), rng));
}

}  // namespace

void ModelConfig::Validate() const {
  if (num_features == 0 || num_tasks == 0 || num_scenarios == 0) {
    throw ContractViolation("model config: feature, task and scenario counts must be positive");
  }
  if (num_experts < 1) throw ContractViolation("model config: need at least one expert");
  if (expert_hidden.empty()) throw ContractViolation("model config: experts need >= 1 layer");
  for (auto w : expert_hidden) {
    if (w == 0) throw ContractViolation("model config: zero expert width");
  }
  for (auto w : tower_hidden) {
    if (w == 0) throw ContractViolation("model config: zero tower width");
  }
  if (embedding_dim == 0) throw ContractViolation("model config: embedding_dim must be > 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ContractViolation("model config: dropout must lie in [0,1)");
  }
}

std::string ScenarioWeightName(std::size_t expert, std::size_t layer) {
  return fmt::format("expert.{}.layer.{}.w_scenario", expert, layer);
}

TemplateNet::TemplateNet(const std::string& prefix, std::size_t embedding_dim,
                         std::size_t hidden, std::size_t d_in, std::size_t d_out,
                         double init_scale, Rng& rng)
    : d_in_(d_in), d_out_(d_out) {
  const std::size_t out = d_in * d_out;
  w1_ = Parameter(prefix + ".w1",
                  RandomNormal({embedding_dim, hidden},
                               1.0 / std::sqrt(static_cast<double>(embedding_dim)), rng));
  b1_ = Parameter(prefix + ".b1", Tensor({hidden}, 0.0));
  w2_ = Parameter(prefix + ".w2",
                  RandomNormal({hidden, out}, init_scale / std::sqrt(static_cast<double>(hidden)), rng));
  b2_ = Parameter(prefix + ".b2", Tensor({out}, 1.0));
}

Var TemplateNet::Generate(const Var& embedding_row) const {
  if (embedding_row.value().rank() != 2 || embedding_row.value().rows() != 1 ||
      embedding_row.value().cols() != w1_.value().rows()) {
    throw ContractViolation("TemplateNet: embedding row has shape " +
                            ShapeToString(embedding_row.shape()));
  }
  Var h = Relu(Affine(embedding_row, w1_.var(), b1_.var()));
  Var flat = Affine(h, w2_.var(), b2_.var());
  return Reshape(flat, {d_in_, d_out_});
}

Var ExpertLayer::EffectiveWeight(const Var& task_row) const {
  Var w_task = task_template.Generate(task_row);
  if (w_task.shape() != w_loc.shape() || w_scenario.shape() != w_loc.shape()) {
    throw ContractViolation("ExpertLayer: local, task and scenario weights disagree in shape");
  }
  return Mul(w_loc.var(), w_task, w_scenario.var());
}

Var ExpertLayer::Forward(const Var& input, const Var& task_row, Mode mode, double dropout,
                         Rng& rng) const {
  Var h = Relu(Affine(input, EffectiveWeight(task_row), bias.var()));
  return Dropout(h, dropout, mode, rng);
}

Var Expert::Forward(const Var& input, const Var& task_row, Mode mode, double dropout,
                    Rng& rng) const {
  Var h = input;
  for (const auto& layer : layers) h = layer.Forward(h, task_row, mode, dropout, rng);
  return h;
}

Var Gate::Forward(const Var& input) const {
  return Softmax(Affine(input, weight.var(), bias.var()));
}

Var Tower::Forward(const Var& mix, Mode mode, double dropout, Rng& rng) const {
  Var h = mix;
  const std::size_t last = weights.size() - 1;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = Affine(h, weights[l].var(), biases[l].var());
    if (l == last) return Sigmoid(h);
    h = Dropout(Relu(h), dropout, mode, rng);
  }
  return h;
}

ClientModel::ClientModel(const ModelConfig& cfg, std::size_t scenario, std::uint64_t init_seed)
    : config_(cfg), scenario_(scenario) {
  cfg.Validate();
  if (scenario >= cfg.num_scenarios) {
    throw ContractViolation(fmt::format("scenario {} out of range for {} scenarios", scenario,
                                        cfg.num_scenarios));
  }
  Rng rng(init_seed);
  const std::size_t d_emb = cfg.embedding_dim;
  const std::size_t n_layers = cfg.expert_hidden.size();

  input_bn = BNState::Create("input_bn", cfg.num_features, cfg.bn_eps, cfg.bn_momentum);
  task_embeddings = Parameter("embedding.task", RandomNormal({cfg.num_tasks, d_emb}, 1.0, rng));
  scenario_embeddings = Parameter("embedding.scenario",
                                  RandomNormal({cfg.num_scenarios, d_emb}, 1.0, rng),
                                  /*trainable=*/false);

  Var scenario_row = SelectRow(scenario_embeddings.var(), scenario);
  experts.resize(cfg.num_experts);
  for (std::size_t n = 0; n < cfg.num_experts; ++n) {
    std::size_t d_in = cfg.num_features;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::size_t d_out = cfg.expert_hidden[l];
      const std::string prefix = fmt::format("expert.{}.layer.{}", n, l);
      ExpertLayer layer;
      layer.w_loc = HeWeight(prefix + ".w_loc", d_in, d_out, rng);
      layer.bias = Parameter(prefix + ".bias", Tensor({d_out}, 0.0));
      layer.task_template = TemplateNet(prefix + ".task_template", d_emb, d_emb, d_in, d_out,
                                        cfg.template_init_scale, rng);
      // The scenario template only initializes the shared weight; it is
      // not kept, so every client draws it identically from the seed.
      TemplateNet scenario_template(prefix + ".scenario_template", d_emb, d_emb, d_in, d_out,
                                    cfg.template_init_scale, rng);
      layer.w_scenario =
          Parameter(ScenarioWeightName(n, l), scenario_template.Generate(scenario_row).value());
      experts[n].layers.push_back(std::move(layer));
      d_in = d_out;
    }
  }

  const std::size_t d_mix = cfg.expert_hidden.back();
  for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
    Gate g;
    g.weight = Parameter(fmt::format("gate.{}.weight", i),
                         RandomNormal({cfg.num_features, cfg.num_experts},
                                      1.0 / std::sqrt(static_cast<double>(cfg.num_features)), rng));
    g.bias = Parameter(fmt::format("gate.{}.bias", i), Tensor({cfg.num_experts}, 0.0));
    gates.push_back(std::move(g));
  }
  for (std::size_t i = 0; i < cfg.num_tasks; ++i) {
    Tower t;
    std::size_t d_in = d_mix;
    std::vector<std::size_t> widths = cfg.tower_hidden;
    widths.push_back(1);
    for (std::size_t l = 0; l < widths.size(); ++l) {
      t.weights.push_back(HeWeight(fmt::format("tower.{}.layer.{}.weight", i, l), d_in, widths[l], rng));
      t.biases.push_back(Parameter(fmt::format("tower.{}.layer.{}.bias", i, l), Tensor({widths[l]}, 0.0)));
      d_in = widths[l];
    }
    towers.push_back(std::move(t));
  }

  psi.num_layers = n_layers;
  psi.expert.assign(cfg.num_experts * n_layers, 0.0);
  psi.tower.assign(cfg.num_tasks, 0.0);
}

ClientModel::Output ClientModel::ForwardImpl(const Tensor& features, Mode mode, Rng& rng) {
  if (features.rank() != 2 || features.cols() != config_.num_features) {
    throw ContractViolation(fmt::format("ClientModel: expected K x {} features, got {}",
                                        config_.num_features, ShapeToString(features.shape())));
  }
  Output out;
  out.normalized_input = BatchNorm(Var::Constant(features), input_bn, mode);
  const double rate = config_.dropout;
  for (std::size_t i = 0; i < config_.num_tasks; ++i) {
    Var task_row = SelectRow(task_embeddings.var(), i);
    std::vector<Var> hidden;
    hidden.reserve(experts.size());
    for (const auto& e : experts) {
      hidden.push_back(e.Forward(out.normalized_input, task_row, mode, rate, rng));
    }
    Var a = gates[i].Forward(out.normalized_input);
    Var mix = WeightedSum(a, hidden);
    Var p = towers[i].Forward(mix, mode, rate, rng);
    out.probabilities.push_back(SelectColumn(p, 0));
    out.gate_weights.push_back(a);
  }
  return out;
}

ClientModel::Output ClientModel::Forward(const Tensor& features, Mode mode, Rng& rng) {
  return ForwardImpl(features, mode, rng);
}

ClientModel::Output ClientModel::Predict(const Tensor& features) const {
  Rng unused(0);
  // Eval mode reads running statistics only and draws no randomness.
  return const_cast<ClientModel*>(this)->ForwardImpl(features, Mode::kEval, unused);
}

std::vector<NamedParam> ClientModel::Parameters() {
  std::vector<NamedParam> out;
  const auto priv = ParamRole::kLocalPrivate;
  out.push_back({priv, &input_bn.gamma, 0, 0});
  out.push_back({priv, &input_bn.beta, 0, 0});
  out.push_back({priv, &task_embeddings, 0, 0});
  out.push_back({priv, &scenario_embeddings, 0, 0});
  for (std::size_t n = 0; n < experts.size(); ++n) {
    for (std::size_t l = 0; l < experts[n].layers.size(); ++l) {
      auto& layer = experts[n].layers[l];
      out.push_back({priv, &layer.w_loc, n, l});
      out.push_back({ParamRole::kScenarioShared, &layer.w_scenario, n, l});
      out.push_back({priv, &layer.bias, n, l});
      for (Parameter* p : layer.task_template.parameters()) out.push_back({priv, p, n, l});
    }
  }
  for (std::size_t i = 0; i < gates.size(); ++i) {
    out.push_back({priv, &gates[i].weight, i, 0});
    out.push_back({priv, &gates[i].bias, i, 0});
  }
  for (std::size_t i = 0; i < towers.size(); ++i) {
    for (std::size_t l = 0; l < towers[i].weights.size(); ++l) {
      out.push_back({ParamRole::kTower, &towers[i].weights[l], i, 2 * l});
      out.push_back({ParamRole::kTower, &towers[i].biases[l], i, 2 * l + 1});
    }
  }
  return out;
}

std::vector<Parameter*> ClientModel::TrainableParameters() {
  std::vector<Parameter*> out;
  for (auto& np : Parameters()) {
    if (np.param->trainable()) out.push_back(np.param);
  }
  return out;
}

Parameter* ClientModel::FindParameter(const std::string& name) {
  for (auto& np : Parameters()) {
    if (np.param->name() == name) return np.param;
  }
  return nullptr;
}

LossBreakdown LocalLoss(ClientModel& model, const Batch& batch, const ReferenceMap& references,
                        double lambda, Mode mode, Rng& rng) {
  const std::size_t t_count = model.config().num_tasks;
  if (batch.labels.rank() != 2 || batch.labels.cols() != t_count ||
      batch.labels.rows() != batch.features.rows()) {
    throw ContractViolation(fmt::format("LocalLoss: batch needs one label per task ({}), got {}",
                                        t_count, ShapeToString(batch.labels.shape())));
  }
  auto out = model.Forward(batch.features, mode, rng);
  LossBreakdown loss;
  std::vector<Var> terms;
  for (std::size_t i = 0; i < t_count; ++i) {
    Tensor y({batch.size()});
    for (std::size_t r = 0; r < batch.size(); ++r) y[r] = batch.labels.at(r, i);
    Var bce = Bce(out.probabilities[i], y);
    loss.task_bce.push_back(bce.value()[0]);
    terms.push_back(bce);
  }
  if (lambda != 0.0) {
    std::vector<Var> reg_terms;
    for (auto& expert : model.experts) {
      for (auto& layer : expert.layers) {
        auto it = references.find(layer.w_scenario.name());
        if (it == references.end()) continue;
        reg_terms.push_back(SquaredDistance(layer.w_scenario.var(), it->second));
      }
    }
    if (!reg_terms.empty()) {
      Var reg = SumScalars(reg_terms);
      loss.regularizer = lambda * reg.value()[0];
      terms.push_back(Scale(reg, lambda));
    }
  }
  loss.total = SumScalars(terms);
  return loss;
}

TrainStats TrainEpoch(ClientModel& model, std::span<const ExampleRecord> records,
                      const BatchConfig& batching, AdamState& adam,
                      const ReferenceMap& references, double lambda, Rng& rng,
                      std::size_t max_batches) {
  if (records.empty()) throw ContractViolation("TrainEpoch: empty shard");
  BatchIterator it(records, batching);
  auto params = model.TrainableParameters();
  TrainStats stats;
  stats.task_bce.assign(model.config().num_tasks, 0.0);
  double loss_sum = 0.0;
  while (auto batch = it.Next()) {
    if (max_batches > 0 && stats.batches >= max_batches) break;
    auto loss = LocalLoss(model, *batch, references, lambda, Mode::kTrain, rng);
    Backward(loss.total);
    AdamStep(params, adam);
    for (Parameter* p : params) p->ZeroGrad();
    loss_sum += loss.total.value()[0];
    for (std::size_t i = 0; i < stats.task_bce.size(); ++i) stats.task_bce[i] += loss.task_bce[i];
    ++stats.batches;
  }
  if (stats.batches == 0) throw ContractViolation("TrainEpoch: no batch of size >= 2");
  stats.mean_loss = loss_sum / static_cast<double>(stats.batches);
  for (auto& v : stats.task_bce) v /= static_cast<double>(stats.batches);
  return stats;
}

}  // namespace fedmoe
