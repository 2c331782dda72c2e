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

#ifndef FEDMOE_AGGREGATION_H_
#define FEDMOE_AGGREGATION_H_

#include <optional>
#include <span>
#include <vector>

#include "fedmoe/tensor.h"

namespace fedmoe {

// ---------------------------------------------------------------------------
// Server-side batch normalization over uploaded parameters.
//
// All uploads of one key shape form a batch. Elementwise global moments are
// taken over the batch (biased variance), and every upload is mapped to
//   gamma_g * (W - mean) / sqrt(var + eps) + beta_g
// where gamma_g and beta_g average the per-client affine terms. The mean of
// the mapped batch is exactly beta_g whatever the uploads are.
// ---------------------------------------------------------------------------

struct FedBNAffine {
  Tensor gamma;
  Tensor beta;
};

/// Affine terms a client reports for one key group, computed from its own
/// uploads only: beta is their elementwise mean, gamma their elementwise
/// sqrt(variance + eps). A client holding a single upload reports gamma =
/// sqrt(eps).
FedBNAffine ClientFedBNAffine(std::span<const Tensor> own_uploads, double eps);

struct FedBNState {
  Tensor mean;
  Tensor var;
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;
};

struct FedBNResult {
  std::vector<Tensor> normalized;
  FedBNState state;
};

/// Requires >= 2 uploads of identical shape and >= 1 client affine pair of
/// that shape.
FedBNResult FedBNNormalize(std::span<const Tensor> uploads,
                           std::span<const FedBNAffine> client_affine, double eps);

/// Arithmetic mean of a nonempty set of same-shaped tensors.
Tensor FedAverage(std::span<const Tensor> tensors);

// ---------------------------------------------------------------------------
// Two-round increments and conflict coordination.
// ---------------------------------------------------------------------------

struct DeltaSet {
  std::vector<Tensor> pair_deltas;  // current - previous, per upload slot
  Tensor mean_delta;
};

/// Per-slot differences between consecutive rounds' normalized uploads.
/// Returns nullopt when there is no previous round, meaning coordination is
/// skipped this round.
std::optional<DeltaSet> ComputeDeltas(std::span<const Tensor> current,
                                      std::span<const Tensor> previous);

struct SolverOptions {
  int max_iterations = 2000;
  double tolerance = 1e-12;  // on ||w_new - w||_inf
};

struct CoordinationResult {
  std::vector<double> weights;  // on the simplex, one per pair delta
  Tensor combined;              // U_w = sum_k w_k * delta_k
  Tensor anchor;                // the mean increment
  double phi = 0.0;             // c^2 * ||anchor||^2
  double c = 0.0;
  double objective = 0.0;
  int iterations = 0;
};

/// Dual objective  F(w) = <U_w, anchor> + sqrt(phi) * ||U_w||.
double CoordinationObjective(std::span<const double> weights, std::span<const Tensor> deltas,
                             const Tensor& anchor, double phi);

/// Minimizes the dual objective over the probability simplex with projected
/// gradient descent plus backtracking. When ||U_w|| vanishes the norm term
/// contributes no gradient. Requires c in [0,1) and at least one delta.
CoordinationResult SolveConflictWeights(std::span<const Tensor> deltas, const Tensor& anchor,
                                        double c, const SolverOptions& opts = {});

/// U* = anchor + sqrt(phi) / ||U_w|| * U_w, or just the anchor when phi is
/// zero or ||U_w|| < 1e-12.
Tensor ComposeCoordinatedUpdate(const CoordinationResult& result);

/// Euclidean projection onto {w >= 0, sum w = 1}.
std::vector<double> ProjectToSimplex(std::span<const double> v);

// ---------------------------------------------------------------------------
// Personalized application.
// ---------------------------------------------------------------------------

/// round_start + mean_delta + psi * coordinated. A null `coordinated` drops
/// the last term.
Tensor ApplyPersonalizedUpdate(const Tensor& round_start, const Tensor& mean_delta,
                               const Tensor* coordinated, double psi);

/// One meta-gradient step psi - lr * directional_derivative, clamped to
/// [-limit, limit].
double PsiStep(double psi, double directional_derivative, double lr, double limit);

}  // namespace fedmoe

#endif  // FEDMOE_AGGREGATION_H_
