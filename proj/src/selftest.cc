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

#include "fedmoe/selftest.h"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>

#include "fedmoe/aggregation.h"
#include "fedmoe/metrics.h"
#include "fedmoe/model.h"
#include "fedmoe/ops.h"
#include "fedmoe/optim.h"

namespace fedmoe {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Tensor Random(Shape shape, double scale, Rng& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = n(rng);
  return t;
}

std::size_t Uniform(std::size_t lo, std::size_t hi, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Plain loops on purpose: the oracle must not share code with the solver.
double DirectObjective(std::span<const double> w, std::span<const Tensor> deltas,
                       const Tensor& anchor, double sqrt_phi) {
  std::vector<double> uw(anchor.size(), 0.0);
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    for (std::size_t i = 0; i < uw.size(); ++i) uw[i] += w[k] * deltas[k][i];
  }
  double dot = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < uw.size(); ++i) {
    dot += uw[i] * anchor[i];
    sq += uw[i] * uw[i];
  }
  return dot + sqrt_phi * std::sqrt(sq);
}

double MinInner(std::span<const Tensor> deltas, const Tensor& u) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& d : deltas) m = std::min(m, Dot(d, u));
  return m;
}

}  // namespace

double GridSearchObjective(std::span<const Tensor> deltas, const Tensor& anchor, double c,
                           std::size_t steps) {
  if (deltas.empty() || deltas.size() > 3) throw ContractViolation("grid search takes 1..3 deltas");
  double sq = 0.0;
  for (std::size_t i = 0; i < anchor.size(); ++i) sq += anchor[i] * anchor[i];
  const double sqrt_phi = c * std::sqrt(sq);
  const double h = 1.0 / static_cast<double>(steps);
  double best = std::numeric_limits<double>::infinity();
  const std::size_t m = deltas.size();
  for (std::size_t a = 0; a <= (m >= 2 ? steps : 0); ++a) {
    for (std::size_t b = 0; b + a <= (m == 3 ? steps : a); ++b) {
      std::vector<double> w;
      if (m == 1) {
        w = {1.0};
      } else if (m == 2) {
        w = {a * h, 1.0 - a * h};
      } else {
        w = {a * h, b * h, 1.0 - (a + b) * h};
      }
      best = std::min(best, DirectObjective(w, deltas, anchor, sqrt_phi));
    }
  }
  return best;
}

CheckResult CheckFedBNIdentity(std::uint64_t seed, std::size_t sets) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double worst = 0.0;
  for (std::size_t s = 0; s < sets; ++s) {
    const Shape shape{Uniform(1, 64, rng), Uniform(1, 64, rng)};
    const std::size_t count = Uniform(2, 12, rng);
    const std::size_t clients = Uniform(1, count, rng);
    std::vector<Tensor> uploads;
    std::vector<FedBNAffine> affine;
    for (std::size_t k = 0; k < count; ++k) uploads.push_back(Random(shape, Uniform(1, 5, rng), rng));
    // Arbitrary client affine terms: the identity must not depend on them.
    for (std::size_t j = 0; j < clients; ++j) {
      FedBNAffine a;
      a.gamma = Random(shape, 2.0, rng);
      a.beta = Random(shape, 3.0, rng);
      affine.push_back(std::move(a));
    }
    const FedBNResult res = FedBNNormalize(uploads, affine, 1e-5);
    // Independent mean of the normalized batch.
    for (std::size_t i = 0; i < res.state.beta.size(); ++i) {
      double sum = 0.0;
      for (const auto& n : res.normalized) sum += n[i];
      worst = std::max(worst, std::abs(sum / static_cast<double>(count) - res.state.beta[i]));
    }
  }
  const double secs = Seconds(t0);
  return {"fedbn_identity", worst < 1e-9 && secs < 1.0,
          fmt::format("{} sets, max |mean - beta_g| = {:.3e}, {:.3f}s", sets, worst, secs), secs};
}

CheckResult CheckCoordination(std::uint64_t seed, std::size_t instances) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  double err_a = 0.0, err_b = 0.0, err_c = 0.0, err_d = 0.0, err_e = 0.0;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t dim = Uniform(1, 24, rng);
    const std::size_t m = Uniform(1, 8, rng);
    const double c = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
    std::vector<Tensor> deltas;
    // A shared component keeps most instances away from the degenerate
    // zero-mean case.
    const Tensor common = Random({dim}, 1.0, rng);
    for (std::size_t p = 0; p < m; ++p) deltas.push_back(common + Random({dim}, 1.5, rng));
    const Tensor anchor = FedAverage(deltas);
    const double anchor_norm = Norm(anchor);

    // (a) zero radius
    const Tensor u0 = ComposeCoordinatedUpdate(SolveConflictWeights(deltas, anchor, 0.0));
    err_a = std::max(err_a, MaxAbsDiff(u0, anchor));

    const CoordinationResult res = SolveConflictWeights(deltas, anchor, c);
    const Tensor u = ComposeCoordinatedUpdate(res);
    // (b) on the sphere of radius c ||anchor||
    if (Norm(res.combined) >= 1e-12) err_b = std::max(err_b, std::abs(Norm(u - anchor) - c * anchor_norm));
    // (c) one pair closed form
    const Tensor u1 = ComposeCoordinatedUpdate(
        SolveConflictWeights(std::span<const Tensor>(deltas).first(1), deltas[0], c));
    err_c = std::max(err_c, MaxAbsDiff(u1, deltas[0] * (1.0 + c)));
    // (d) the worst pair does not get worse than under the plain mean
    err_d = std::max(err_d, MinInner(deltas, anchor) - MinInner(deltas, u));
    // (e) grid oracle for small problems
    if (m <= 3) {
      const double grid = GridSearchObjective(std::span<const Tensor>(deltas).first(m), anchor, c,
                                              m == 3 ? 200 : 2000);
      const double solver = DirectObjective(res.weights, deltas, anchor, c * anchor_norm);
      err_e = std::max(err_e, solver - grid);
    }
  }
  const double secs = Seconds(t0);
  const bool ok = err_a == 0.0 && err_b < 1e-6 && err_c < 1e-6 && err_d <= 1e-6 && err_e < 1e-4 &&
                  secs < 30.0;
  return {"coordination", ok,
          fmt::format("{} instances: (a) {:.1e} (b) {:.1e} (c) {:.1e} (d) {:.1e} (e) {:.1e}, {:.2f}s",
                      instances, err_a, err_b, err_c, err_d, err_e, secs),
          secs};
}

std::vector<std::pair<std::string, double>> GradientErrors(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::string, double>> out;
  auto check = [&](const std::string& name, const std::function<Var()>& f,
                   std::vector<Parameter*> params) {
    out.emplace_back(name, GradCheck(f, params));
  };
  // A fixed random target turns any tensor output into a scalar with a
  // non-trivial gradient.
  auto target = [&](const Shape& s) { return Random(s, 1.0, rng); };

  Parameter x("x", Random({5, 4}, 1.0, rng));
  Parameter y("y", Random({5, 4}, 1.0, rng));
  Parameter z("z", Random({5, 4}, 1.0, rng));
  Parameter w("w", Random({4, 3}, 0.7, rng));
  Parameter b("b", Random({3}, 0.5, rng));
  const Tensor t53 = target({5, 3}), t54 = target({5, 4}), t20 = target({20}), t14 = target({1, 4}),
               t5 = target({5});

  check("affine", [&] { return SquaredDistance(Affine(x.var(), w.var(), b.var()), t53); }, {&x, &w, &b});
  check("relu", [&] { return SquaredDistance(Relu(x.var()), t54); }, {&x});
  check("sigmoid", [&] { return SquaredDistance(Sigmoid(x.var()), t54); }, {&x});
  check("mul2", [&] { return SquaredDistance(Mul(x.var(), y.var()), t54); }, {&x, &y});
  check("mul3", [&] { return SquaredDistance(Mul(x.var(), y.var(), z.var()), t54); }, {&x, &y, &z});
  check("add", [&] { return SquaredDistance(Add(x.var(), y.var()), t54); }, {&x, &y});
  check("scale", [&] { return SquaredDistance(Scale(x.var(), -1.7), t54); }, {&x});
  check("softmax", [&] { return SquaredDistance(Softmax(x.var()), t54); }, {&x});
  check("reshape", [&] { return SquaredDistance(Reshape(x.var(), {20}), t20); }, {&x});
  check("select_row", [&] { return SquaredDistance(SelectRow(x.var(), 2), t14); }, {&x});
  check("select_column", [&] { return SquaredDistance(SelectColumn(x.var(), 1), t5); }, {&x});
  {
    Parameter g("g", Random({5, 3}, 1.0, rng));
    check("weighted_sum",
          [&] {
            std::vector<Var> items{x.var(), y.var(), z.var()};
            return SquaredDistance(WeightedSum(Softmax(g.var()), items), t54);
          },
          {&g, &x, &y, &z});
  }
  check("squared_distance", [&] { return SquaredDistance(x.var(), t54); }, {&x});
  check("sum_scalars",
        [&] {
          std::vector<Var> terms{SquaredDistance(x.var(), t54), Scale(SquaredDistance(y.var(), t54), 0.3)};
          return SumScalars(terms);
        },
        {&x, &y});
  {
    BNState bn = BNState::Create("bn", 4);
    bn.gamma.mutable_value() = Random({4}, 1.0, rng);
    bn.beta.mutable_value() = Random({4}, 1.0, rng);
    check("batchnorm_train", [&] { return SquaredDistance(BatchNorm(x.var(), bn, Mode::kTrain), t54); },
          {&x, &bn.gamma, &bn.beta});
    check("batchnorm_eval", [&] { return SquaredDistance(BatchNorm(x.var(), bn, Mode::kEval), t54); },
          {&x, &bn.gamma, &bn.beta});
  }
  check("dropout_frozen",
        [&] {
          Rng mask(99);  // same mask on every evaluation
          return SquaredDistance(Dropout(x.var(), 0.3, Mode::kTrain, mask), t54);
        },
        {&x});
  {
    Parameter logits("logits", Random({6}, 1.5, rng));
    const Tensor labels = Tensor::Vector({1, 0, 0, 1, 1, 0});
    check("bce", [&] { return Bce(Sigmoid(logits.var()), labels); }, {&logits});
  }

  // Composites on a small model.
  ModelConfig mc;
  mc.num_features = 5;
  mc.num_experts = 3;
  mc.expert_hidden = {6, 4};
  mc.tower_hidden = {4};
  mc.embedding_dim = 3;
  mc.num_scenarios = 2;
  ClientModel model(mc, 1, seed);
  // Zero-initialized biases put dead rows exactly on the ReLU kink, where
  // finite differences and the subgradient disagree; check at a generic
  // point instead.
  for (Parameter* p : model.TrainableParameters()) p->mutable_value() += Random(p->shape(), 0.05, rng);
  const Tensor feats = Random({7, 5}, 1.0, rng);
  Var xin = Var::Constant(feats);
  {
    ExpertLayer& layer = model.experts[0].layers[0];
    std::vector<Parameter*> ps{&layer.w_loc, &layer.w_scenario, &layer.bias, &model.task_embeddings};
    for (Parameter* p : layer.task_template.parameters()) ps.push_back(p);
    const Tensor tgt = target({7, 6});
    check("expert_layer",
          [&] {
            Rng mask(5);
            return SquaredDistance(
                layer.Forward(xin, SelectRow(model.task_embeddings.var(), 1), Mode::kTrain, 0.2, mask), tgt);
          },
          ps);
  }
  {
    Tower& tower = model.towers[0];
    std::vector<Parameter*> ps;
    for (auto& p : tower.weights) ps.push_back(&p);
    for (auto& p : tower.biases) ps.push_back(&p);
    Parameter mix("mix", Random({7, 4}, 1.0, rng));
    ps.push_back(&mix);
    const Tensor tgt = target({7, 1});
    check("tower",
          [&] {
            Rng mask(6);
            return SquaredDistance(tower.Forward(mix.var(), Mode::kTrain, 0.2, mask), tgt);
          },
          ps);
  }
  {
    Gate& gate = model.gates[1];
    const Tensor tgt = target({7, 3});
    check("gate", [&] { return SquaredDistance(gate.Forward(xin), tgt); }, {&gate.weight, &gate.bias});
  }
  {
    Batch batch;
    batch.features = feats;
    batch.labels = Tensor({7, 2});
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) batch.labels[i] = coin(rng) ? 1.0 : 0.0;
    ReferenceMap refs;
    for (auto& e : model.experts) {
      for (auto& l : e.layers) refs[l.w_scenario.name()] = Random(l.w_scenario.shape(), 1.0, rng);
    }
    check("local_loss",
          [&] {
            Rng mask(7);
            return LocalLoss(model, batch, refs, 0.5, Mode::kTrain, mask).total;
          },
          model.TrainableParameters());
  }
  return out;
}

CheckResult CheckGradients(std::uint64_t seed) {
  const auto t0 = Clock::now();
  const auto errs = GradientErrors(seed);
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, e] : errs) {
    if (e >= worst) {
      worst = e;
      worst_name = name;
    }
  }
  const double secs = Seconds(t0);
  return {"gradients", worst < 1e-4 && secs < 60.0,
          fmt::format("{} graphs, worst relative error {:.2e} ({}), {:.2f}s", errs.size(), worst,
                      worst_name, secs),
          secs};
}

CheckResult CheckAucEquivalence(std::uint64_t seed, std::size_t instances) {
  const auto t0 = Clock::now();
  Rng rng(seed);
  std::size_t mismatches = 0;
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t n = Uniform(2, 64, rng);
    // Few distinct levels, so ties are common.
    const std::size_t levels = Uniform(1, 8, rng);
    std::vector<double> scores(n);
    std::vector<std::uint8_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(Uniform(0, levels, rng)) / static_cast<double>(levels);
      labels[i] = static_cast<std::uint8_t>(Uniform(0, 1, rng));
    }
    labels[0] = 1;
    labels[1] = 0;
    if (!(AucFastCounts(scores, labels) == AucBruteforceCounts(scores, labels))) ++mismatches;
    if (AucFast(scores, labels) != AucBruteforce(scores, labels)) ++mismatches;
  }
  const std::vector<double> hand_scores{0.9, 0.4, 0.5, 0.1};
  const std::vector<std::uint8_t> hand_labels{1, 1, 0, 0};
  const double hand = AucFast(hand_scores, hand_labels);
  const double secs = Seconds(t0);
  return {"auc_equivalence", mismatches == 0 && hand == 0.75 && secs < 5.0,
          fmt::format("{} instances, {} mismatches, hand case {}, {:.3f}s", instances, mismatches, hand, secs),
          secs};
}

std::vector<CheckResult> RunSelftest(std::uint64_t seed) {
  return {CheckFedBNIdentity(seed), CheckCoordination(seed + 1), CheckGradients(seed + 2),
          CheckAucEquivalence(seed + 3)};
}

}  // namespace fedmoe
