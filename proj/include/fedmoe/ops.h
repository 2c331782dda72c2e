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

#ifndef FEDMOE_OPS_H_
#define FEDMOE_OPS_H_

#include <random>
#include <span>
#include <string>

#include "fedmoe/autodiff.h"

namespace fedmoe {

enum class Mode { kTrain, kEval };

using Rng = std::mt19937_64;

enum class Activation { kRelu, kSigmoid };

// Differentiable primitives. Each returns a graph node whose backward
// closure implements the exact derivative.

/// out[k,o] = sum_i x[k,i] * w[i,o] + b[o]. x: KxI, w: IxO, b: O.
Var Affine(const Var& x, const Var& w, const Var& b);

Var Relu(const Var& x);  // relu'(0) = 0
Var Sigmoid(const Var& x);
Var Activate(const Var& x, Activation kind);

Var Mul(const Var& a, const Var& b);
Var Mul(const Var& a, const Var& b, const Var& c);
Var Add(const Var& a, const Var& b);
Var Scale(const Var& a, double s);

/// Softmax along the last axis, one row at a time, with max subtraction.
Var Softmax(const Var& x);

Var Reshape(const Var& x, Shape shape);

/// Row `row` of a rank-2 tensor as a 1xC matrix.
Var SelectRow(const Var& x, std::size_t row);

/// Column `col` of a KxC matrix as a length-K vector.
Var SelectColumn(const Var& x, std::size_t col);

/// sum_n weights[:, n] * items[n], weights: KxN, items[n]: KxD.
Var WeightedSum(const Var& weights, std::span<const Var> items);

/// sum of squared elementwise differences to a constant reference.
Var SquaredDistance(const Var& x, const Tensor& reference);

/// Sum of same-shaped scalars.
Var SumScalars(std::span<const Var> terms);

struct BNState {
  Parameter gamma;
  Parameter beta;
  double eps = 1e-5;
  double momentum = 0.1;
  Tensor running_mean;
  Tensor running_var;

  static BNState Create(const std::string& prefix, std::size_t features,
                        double eps = 1e-5, double momentum = 0.1);
};

/// Per-feature batch normalization over the K rows of x (KxD). Train mode
/// uses the biased batch variance and updates running statistics; eval mode
/// normalizes with the running statistics.
Var BatchNorm(const Var& x, BNState& state, Mode mode);

/// Inverted dropout. Eval mode or rate 0 returns x unchanged.
Var Dropout(const Var& x, double rate, Mode mode, Rng& rng);

/// Mean binary cross-entropy over K predictions. p is clamped to
/// [1e-7, 1 - 1e-7] before the log; labels must be exactly 0 or 1.
Var Bce(const Var& p, const Tensor& labels);

inline constexpr double kProbClamp = 1e-7;

}  // namespace fedmoe

#endif  // FEDMOE_OPS_H_
