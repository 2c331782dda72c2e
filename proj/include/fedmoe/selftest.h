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

#ifndef FEDMOE_SELFTEST_H_
#define FEDMOE_SELFTEST_H_

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fedmoe/tensor.h"

namespace fedmoe {

/*
 * Oracle suites shared by `fedmoe selftest` and the acceptance binary. Each
 * check compares library output against an independent computation (grid
 * search, brute force, finite differences, closed forms) on seeded random
 * instances.
 */
struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Mean of FedBN-normalized uploads equals beta_g, max abs error < 1e-9.
CheckResult CheckFedBNIdentity(std::uint64_t seed, std::size_t sets = 100);

/// Coordination properties (a)-(e) on random instances.
CheckResult CheckCoordination(std::uint64_t seed, std::size_t instances = 500);

/// Finite-difference gradient checks on every primitive and composite.
CheckResult CheckGradients(std::uint64_t seed);

/// Fast AUC equals the brute-force pair count on random tied instances,
/// plus the hand case.
CheckResult CheckAucEquivalence(std::uint64_t seed, std::size_t instances = 200);

/// Best objective over a simplex grid with `steps` divisions per axis, for
/// at most 3 deltas. Computed directly from the tensors.
double GridSearchObjective(std::span<const Tensor> deltas, const Tensor& anchor, double c,
                           std::size_t steps);

/// Named gradient-check errors, one per primitive or composite graph.
std::vector<std::pair<std::string, double>> GradientErrors(std::uint64_t seed);

std::vector<CheckResult> RunSelftest(std::uint64_t seed = 2024);

}  // namespace fedmoe

#endif  // FEDMOE_SELFTEST_H_
