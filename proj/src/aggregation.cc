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

#include "fedmoe/aggregation.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace fedmoe {

FedBNAffine ClientFedBNAffine(std::span<const Tensor> own_uploads, double eps) {
  if (own_uploads.empty()) throw ContractViolation("ClientFedBNAffine: no uploads");
  FedBNAffine a;
  a.beta = FedAverage(own_uploads);
  Tensor var(a.beta.shape(), 0.0);
  for (const auto& u : own_uploads) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double d = u[i] - a.beta[i];
      var[i] += d * d;
    }
  }
  a.gamma = Tensor(a.beta.shape());
  const double n = static_cast<double>(own_uploads.size());
  for (std::size_t i = 0; i < var.size(); ++i) a.gamma[i] = std::sqrt(var[i] / n + eps);
  return a;
}

FedBNResult FedBNNormalize(std::span<const Tensor> uploads,
                           std::span<const FedBNAffine> client_affine, double eps) {
  if (uploads.size() < 2) {
    throw ContractViolation("FedBN needs at least 2 uploads, got " +
                            std::to_string(uploads.size()));
  }
  if (client_affine.empty()) throw ContractViolation("FedBN needs client affine terms");
  if (!(eps > 0.0)) throw ContractViolation("FedBN eps must be positive");
  for (const auto& u : uploads) RequireSameShape(u, uploads[0], "FedBN upload");
  for (const auto& a : client_affine) {
    RequireSameShape(a.gamma, uploads[0], "FedBN gamma");
    RequireSameShape(a.beta, uploads[0], "FedBN beta");
  }

  FedBNResult res;
  FedBNState& st = res.state;
  st.eps = eps;
  st.mean = FedAverage(uploads);
  st.var = Tensor(uploads[0].shape(), 0.0);
  for (const auto& u : uploads) {
    for (std::size_t i = 0; i < u.size(); ++i) {
      const double d = u[i] - st.mean[i];
      st.var[i] += d * d;
    }
  }
  st.var *= 1.0 / static_cast<double>(uploads.size());

  std::vector<Tensor> gammas, betas;
  for (const auto& a : client_affine) {
    gammas.push_back(a.gamma);
    betas.push_back(a.beta);
  }
  st.gamma = FedAverage(gammas);
  st.beta = FedAverage(betas);

  res.normalized.reserve(uploads.size());
  for (const auto& u : uploads) {
    Tensor out(u.shape());
    for (std::size_t i = 0; i < u.size(); ++i) {
      out[i] = st.gamma[i] * (u[i] - st.mean[i]) / std::sqrt(st.var[i] + eps) + st.beta[i];
    }
    res.normalized.push_back(std::move(out));
  }
  return res;
}

Tensor FedAverage(std::span<const Tensor> tensors) {
  if (tensors.empty()) throw ContractViolation("FedAverage: empty set");
  Tensor sum(tensors[0].shape(), 0.0);
  for (const auto& t : tensors) sum += t;
  return sum * (1.0 / static_cast<double>(tensors.size()));
}

std::optional<DeltaSet> ComputeDeltas(std::span<const Tensor> current,
                                      std::span<const Tensor> previous) {
  if (previous.empty()) return std::nullopt;
  if (current.size() != previous.size()) {
    throw ContractViolation("ComputeDeltas: " + std::to_string(current.size()) +
                            " uploads this round vs " + std::to_string(previous.size()) +
                            " last round");
  }
  DeltaSet d;
  for (std::size_t k = 0; k < current.size(); ++k) d.pair_deltas.push_back(current[k] - previous[k]);
  d.mean_delta = FedAverage(d.pair_deltas);
  return d;
}

namespace {

struct Problem {
  std::vector<double> gram;  // m x m
  std::vector<double> lin;   // <delta_k, anchor>
  std::size_t m = 0;
  double sqrt_phi = 0.0;

  double NormUw(std::span<const double> w) const {
    double q = 0.0;
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = 0; b < m; ++b) q += w[a] * gram[a * m + b] * w[b];
    }
    return std::sqrt(std::max(q, 0.0));
  }
  double Value(std::span<const double> w) const {
    return std::inner_product(w.begin(), w.end(), lin.begin(), 0.0) + sqrt_phi * NormUw(w);
  }
  std::vector<double> Gradient(std::span<const double> w) const {
    std::vector<double> g = lin;
    const double norm = NormUw(w);
    if (norm > 1e-12 && sqrt_phi > 0.0) {
      for (std::size_t a = 0; a < m; ++a) {
        double gw = 0.0;
        for (std::size_t b = 0; b < m; ++b) gw += gram[a * m + b] * w[b];
        g[a] += sqrt_phi * gw / norm;
      }
    }
    return g;
  }
};

Problem BuildProblem(std::span<const Tensor> deltas, const Tensor& anchor, double phi) {
  Problem p;
  p.m = deltas.size();
  p.sqrt_phi = std::sqrt(phi);
  p.gram.assign(p.m * p.m, 0.0);
  for (std::size_t a = 0; a < p.m; ++a) {
    p.lin.push_back(Dot(deltas[a], anchor));
    for (std::size_t b = a; b < p.m; ++b) {
      p.gram[a * p.m + b] = p.gram[b * p.m + a] = Dot(deltas[a], deltas[b]);
    }
  }
  return p;
}

}  // namespace

std::vector<double> ProjectToSimplex(std::span<const double> v) {
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumsum += u[k];
    const double t = (cumsum - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) theta = t;
  }
  std::vector<double> w(v.size());
  for (std::size_t k = 0; k < v.size(); ++k) w[k] = std::max(v[k] - theta, 0.0);
  return w;
}

double CoordinationObjective(std::span<const double> weights, std::span<const Tensor> deltas,
                             const Tensor& anchor, double phi) {
  if (weights.size() != deltas.size()) {
    throw ContractViolation("CoordinationObjective: weight/delta count mismatch");
  }
  Tensor uw(anchor.shape(), 0.0);
  for (std::size_t k = 0; k < deltas.size(); ++k) uw += deltas[k] * weights[k];
  return Dot(uw, anchor) + std::sqrt(phi) * Norm(uw);
}

CoordinationResult SolveConflictWeights(std::span<const Tensor> deltas, const Tensor& anchor,
                                        double c, const SolverOptions& opts) {
  if (!(c >= 0.0 && c < 1.0)) throw ContractViolation("conflict radius c must lie in [0,1)");
  if (deltas.empty()) throw ContractViolation("SolveConflictWeights: no deltas");
  for (const auto& d : deltas) {
    if (d.size() != anchor.size()) throw ContractViolation("SolveConflictWeights: size mismatch");
  }

  CoordinationResult res;
  res.c = c;
  res.anchor = anchor;
  res.phi = c * c * SquaredNorm(anchor);
  const Problem prob = BuildProblem(deltas, anchor, res.phi);
  const std::size_t m = prob.m;

  std::vector<double> w(m, 1.0 / static_cast<double>(m));
  double max_sq = 0.0;
  for (std::size_t k = 0; k < m; ++k) max_sq = std::max(max_sq, prob.gram[k * m + k]);

  if (m > 1 && max_sq > 0.0) {
    const double base_step = 1.0 / max_sq;
    double f = prob.Value(w);
    double step = base_step;
    for (int it = 0; it < opts.max_iterations; ++it) {
      res.iterations = it + 1;
      const auto g = prob.Gradient(w);
      // Grow the step again after each accepted move; near-linear instances
      // need far more than 1/L.
      step = std::min(step * 2.0, base_step * 1e6);
      std::vector<double> next;
      double f_next = 0.0;
      // Armijo backtracking along the projected step. A quadratic-model test
      // would stall where ||U_w|| -> 0, since the objective has a kink there.
      for (int bt = 0; bt < 60; ++bt) {
        std::vector<double> trial(m);
        for (std::size_t k = 0; k < m; ++k) trial[k] = w[k] - step * g[k];
        next = ProjectToSimplex(trial);
        f_next = prob.Value(next);
        double lin = 0.0;
        for (std::size_t k = 0; k < m; ++k) lin += g[k] * (next[k] - w[k]);
        if (f_next <= f + 1e-4 * lin) break;
        step *= 0.5;
      }
      double change = 0.0;
      for (std::size_t k = 0; k < m; ++k) change = std::max(change, std::abs(next[k] - w[k]));
      if (f_next <= f) {
        w = std::move(next);
        f = f_next;
      }
      if (change < opts.tolerance) break;
    }
  }

  res.weights = w;
  res.combined = Tensor(anchor.shape(), 0.0);
  for (std::size_t k = 0; k < m; ++k) res.combined += deltas[k] * w[k];
  res.objective = prob.Value(w);
  return res;
}

Tensor ComposeCoordinatedUpdate(const CoordinationResult& result) {
  const double norm = Norm(result.combined);
  if (result.phi == 0.0 || norm < 1e-12) return result.anchor;
  return result.anchor + result.combined * (std::sqrt(result.phi) / norm);
}

Tensor ApplyPersonalizedUpdate(const Tensor& round_start, const Tensor& mean_delta,
                               const Tensor* coordinated, double psi) {
  RequireSameShape(round_start, mean_delta, "ApplyPersonalizedUpdate");
  Tensor out = round_start + mean_delta;
  if (coordinated != nullptr) {
    RequireSameShape(round_start, *coordinated, "ApplyPersonalizedUpdate");
    out += *coordinated * psi;
  }
  return out;
}

double PsiStep(double psi, double directional_derivative, double lr, double limit) {
  return std::clamp(psi - lr * directional_derivative, -limit, limit);
}

}  // namespace fedmoe
