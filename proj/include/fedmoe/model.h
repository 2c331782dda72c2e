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

#ifndef FEDMOE_MODEL_H_
#define FEDMOE_MODEL_H_

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fedmoe/autodiff.h"
#include "fedmoe/data.h"
#include "fedmoe/ops.h"
#include "fedmoe/optim.h"

namespace fedmoe {

struct ModelConfig {
  std::size_t num_features = 16;
  std::size_t num_tasks = 2;
  std::size_t num_scenarios = 3;
  std::size_t num_experts = 4;
  std::vector<std::size_t> expert_hidden{32, 16};
  std::vector<std::size_t> tower_hidden{16, 8};
  std::size_t embedding_dim = 16;
  /// Std of the template output layer weights (times 1/sqrt(hidden)); the
  /// output bias starts at 1 so generated weights start near all-ones.
  double template_init_scale = 0.1;
  double dropout = 0.2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  void Validate() const;
};

/// How the federation layer may treat a tensor. Every trainable tensor has
/// exactly one role.
enum class ParamRole { kLocalPrivate, kScenarioShared, kTower };

struct NamedParam {
  ParamRole role;
  Parameter* param;
  std::size_t group;  // expert index, or task index for towers and gates
  std::size_t index;  // layer index, or tensor index within a tower
};

/// Two-layer perceptron (ReLU hidden) that emits a flattened d_in x d_out
/// weight from an embedding row.
class TemplateNet {
 public:
  TemplateNet() = default;
  TemplateNet(const std::string& prefix, std::size_t embedding_dim, std::size_t hidden,
              std::size_t d_in, std::size_t d_out, double init_scale, Rng& rng);

  /// `embedding_row` is 1 x embedding_dim; returns d_in x d_out.
  Var Generate(const Var& embedding_row) const;

  std::vector<Parameter*> parameters() { return {&w1_, &b1_, &w2_, &b2_}; }
  Parameter& output_weight() { return w2_; }
  Parameter& output_bias() { return b2_; }
  std::size_t d_in() const { return d_in_; }
  std::size_t d_out() const { return d_out_; }

 private:
  Parameter w1_, b1_, w2_, b2_;
  std::size_t d_in_ = 0, d_out_ = 0;
};

/// One expert layer with the decoupled weight
/// E = W_loc (.) W_task (.) W_scenario, followed by ReLU.
struct ExpertLayer {
  Parameter w_loc;
  Parameter w_scenario;  // shared across clients through the server
  Parameter bias;
  TemplateNet task_template;

  Var EffectiveWeight(const Var& task_row) const;
  Var Forward(const Var& input, const Var& task_row, Mode mode, double dropout,
              Rng& rng) const;
};

class Expert {
 public:
  std::vector<ExpertLayer> layers;

  /// Hidden features for one task; `input` is the normalized batch.
  Var Forward(const Var& input, const Var& task_row, Mode mode, double dropout,
              Rng& rng) const;
};

struct Gate {
  Parameter weight;  // d_feat x N
  Parameter bias;    // N
  Var Forward(const Var& input) const;  // K x N simplex rows
};

struct Tower {
  std::vector<Parameter> weights;
  std::vector<Parameter> biases;
  /// K x 1 probabilities.
  Var Forward(const Var& mix, Mode mode, double dropout, Rng& rng) const;
};

/// Per-key scalar mixing weights for the coordinated update, all starting
/// at zero: one per (expert, layer) and one per task tower.
struct PersonalizationState {
  std::size_t num_layers = 0;
  std::vector<double> expert;  // num_experts x num_layers, row-major
  std::vector<double> tower;   // one per task

  double& expert_psi(std::size_t n, std::size_t layer) { return expert[n * num_layers + layer]; }
  double expert_psi(std::size_t n, std::size_t layer) const {
    return expert[n * num_layers + layer];
  }
};

/// Latest server aggregate per scenario-shared parameter name; these anchor
/// the alignment regularizer.
using ReferenceMap = std::map<std::string, Tensor>;

/// One client's multi-gate mixture-of-experts.
class ClientModel {
 public:
  /// Every tensor except the scenario-shared weights is drawn from
  /// `init_seed` in a fixed order, so clients built with the same seed start
  /// identical apart from their scenario row. Each scenario-shared weight is
  /// materialized once from a scenario template applied to that row.
  ClientModel(const ModelConfig& cfg, std::size_t scenario, std::uint64_t init_seed);

  struct Output {
    std::vector<Var> probabilities;  // per task, length K
    std::vector<Var> gate_weights;   // per task, K x N
    Var normalized_input;
  };

  Output Forward(const Tensor& features, Mode mode, Rng& rng);
  /// Eval-mode forward; touches no state.
  Output Predict(const Tensor& features) const;

  std::vector<NamedParam> Parameters();
  std::vector<Parameter*> TrainableParameters();
  Parameter* FindParameter(const std::string& name);

  const ModelConfig& config() const { return config_; }
  std::size_t scenario() const { return scenario_; }

  BNState input_bn;
  Parameter task_embeddings;      // T x d_emb, trainable
  Parameter scenario_embeddings;  // S x d_emb, fixed after initialization
  std::vector<Expert> experts;
  std::vector<Gate> gates;
  std::vector<Tower> towers;
  PersonalizationState psi;

 private:
  Output ForwardImpl(const Tensor& features, Mode mode, Rng& rng);

  ModelConfig config_;
  std::size_t scenario_ = 0;
};

std::string ScenarioWeightName(std::size_t expert, std::size_t layer);

struct LossBreakdown {
  Var total;
  std::vector<double> task_bce;
  double regularizer = 0.0;  // lambda-scaled contribution to total
};

/// Sum over tasks of mean BCE plus lambda * sum ||reference - W_scenario||^2
/// over every scenario-shared weight that has an entry in `references`.
LossBreakdown LocalLoss(ClientModel& model, const Batch& batch, const ReferenceMap& references,
                        double lambda, Mode mode, Rng& rng);

struct TrainStats {
  double mean_loss = 0.0;
  std::vector<double> task_bce;
  std::size_t batches = 0;
};

/// One pass over `records`: loss, backward, Adam step, zero grads per batch.
/// `max_batches` > 0 stops early after that many batches.
TrainStats TrainEpoch(ClientModel& model, std::span<const ExampleRecord> records,
                      const BatchConfig& batching, AdamState& adam,
                      const ReferenceMap& references, double lambda, Rng& rng,
                      std::size_t max_batches = 0);

}  // namespace fedmoe

#endif  // FEDMOE_MODEL_H_
