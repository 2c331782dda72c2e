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

#ifndef FEDMOE_METRICS_H_
#define FEDMOE_METRICS_H_

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedmoe/data.h"
#include "fedmoe/model.h"

namespace fedmoe {

/// AUC is undefined unless both classes are present.
class UndefinedAuc : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Number of (positive, negative) pairs with score(pos) > score(neg).
/// Ties earn nothing.
struct AucCounts {
  std::uint64_t correct = 0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;

  double auc() const {
    return static_cast<double>(correct) /
           (static_cast<double>(positives) * static_cast<double>(negatives));
  }
  friend bool operator==(const AucCounts&, const AucCounts&) = default;
};

/// Exhaustive double loop over every positive/negative pair.
AucCounts AucBruteforceCounts(std::span<const double> scores, std::span<const std::uint8_t> labels);
/// Sort-and-count, O(n log n), identical counts to the exhaustive version.
AucCounts AucFastCounts(std::span<const double> scores, std::span<const std::uint8_t> labels);

double AucBruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels);
double AucFast(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct EvalReport {
  int round = 0;
  std::size_t client = 0;
  std::vector<double> auc;  // per task
  std::vector<double> bce;  // per task, mean over the partition
  std::size_t samples = 0;
};

/// Eval-mode pass over `records` (running BN statistics, no dropout).
EvalReport EvaluateClient(const ClientModel& model, std::span<const ExampleRecord> records,
                          int round, std::size_t client, std::size_t batch_size = 1024);

}  // namespace fedmoe

#endif  // FEDMOE_METRICS_H_
