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

#ifndef FEDMOE_OPTIM_H_
#define FEDMOE_OPTIM_H_

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>

#include "fedmoe/autodiff.h"

namespace fedmoe {

/// Bias-corrected Adam. Moments are keyed by parameter name, so a state can
/// follow a model across deep copies.
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  struct Moments {
    Tensor m;
    Tensor v;
    std::int64_t step = 0;
  };
  std::map<std::string, Moments> moments;
};

/// Applies one Adam update in place. A parameter whose gradient is exactly
/// zero everywhere is skipped (moments and step count untouched), so a zero
/// gradient never moves a value. Gradients are left for the caller to zero.
void AdamStep(std::span<Parameter* const> params, AdamState& state);

/// Central finite-difference check of the gradients `f` leaves in `params`.
/// `f` must rebuild the graph from the current parameter values each call
/// and be deterministic. Returns the max over checked coordinates of
/// |analytic - numeric| / max(1, |numeric|).
struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates checked per parameter; all of them when the tensor is
  /// smaller than this.
  std::size_t samples_per_param = 24;
  std::uint64_t seed = 7;
};

double GradCheck(const std::function<Var()>& f, std::span<Parameter* const> params,
                 const GradCheckOptions& opts = {});

}  // namespace fedmoe

#endif  // FEDMOE_OPTIM_H_
