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

#include "fedmoe/optim.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace fedmoe {

void AdamStep(std::span<Parameter* const> params, AdamState& state) {
  for (Parameter* p : params) {
    if (!p->trainable()) continue;
    const Tensor& g = p->grad();
    const bool all_zero =
        std::all_of(g.values().begin(), g.values().end(), [](double v) { return v == 0.0; });
    if (all_zero) continue;

    auto& mom = state.moments[p->name()];
    if (mom.m.empty()) {
      mom.m = Tensor(p->shape(), 0.0);
      mom.v = Tensor(p->shape(), 0.0);
    }
    ++mom.step;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(mom.step));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(mom.step));
    Tensor& w = p->mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = state.beta1 * mom.m[i] + (1.0 - state.beta1) * g[i];
      mom.v[i] = state.beta2 * mom.v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / c1;
      const double vhat = mom.v[i] / c2;
      w[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double GradCheck(const std::function<Var()>& f, std::span<Parameter* const> params,
                 const GradCheckOptions& opts) {
  for (Parameter* p : params) p->ZeroGrad();
  Var out = f();
  Backward(out);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad());

  std::mt19937_64 rng(opts.seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    const std::size_t n = p->value().size();
    std::vector<std::size_t> coords(n);
    std::iota(coords.begin(), coords.end(), 0);
    if (n > opts.samples_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.samples_per_param);
    }
    for (std::size_t c : coords) {
      double& slot = p->mutable_value()[c];
      const double saved = slot;
      slot = saved + opts.step;
      const double plus = f().value()[0];
      slot = saved - opts.step;
      const double minus = f().value()[0];
      slot = saved;
      const double numeric = (plus - minus) / (2.0 * opts.step);
      const double err =
          std::abs(analytic[pi][c] - numeric) / std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  for (Parameter* p : params) p->ZeroGrad();
  return worst;
}

}  // namespace fedmoe
