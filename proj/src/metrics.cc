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

#include "fedmoe/metrics.h"

#include <algorithm>
#include <cmath>

namespace fedmoe {
namespace {

void CheckInputs(std::span<const double> scores, std::span<const std::uint8_t> labels,
                 std::uint64_t& pos, std::uint64_t& neg) {
  if (scores.size() != labels.size()) {
    throw ContractViolation("AUC: scores and labels differ in length");
  }
  pos = neg = 0;
  for (auto y : labels) {
    if (y == 1) {
      ++pos;
    } else if (y == 0) {
      ++neg;
    } else {
      throw ContractViolation("AUC: labels must be 0 or 1");
    }
  }
  if (pos == 0 || neg == 0) {
    throw UndefinedAuc("AUC needs at least one positive and one negative sample");
  }
}

}  // namespace

AucCounts AucBruteforceCounts(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  AucCounts c;
  CheckInputs(scores, labels, c.positives, c.negatives);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 0 && scores[i] > scores[j]) ++c.correct;
    }
  }
  return c;
}

AucCounts AucFastCounts(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  AucCounts c;
  CheckInputs(scores, labels, c.positives, c.negatives);
  std::vector<double> neg;
  neg.reserve(c.negatives);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] == 0) neg.push_back(scores[i]);
  }
  std::sort(neg.begin(), neg.end());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    // Negatives strictly below this positive.
    c.correct += static_cast<std::uint64_t>(
        std::lower_bound(neg.begin(), neg.end(), scores[i]) - neg.begin());
  }
  return c;
}

double AucBruteforce(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return AucBruteforceCounts(scores, labels).auc();
}

double AucFast(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  return AucFastCounts(scores, labels).auc();
}

EvalReport EvaluateClient(const ClientModel& model, std::span<const ExampleRecord> records,
                          int round, std::size_t client, std::size_t batch_size) {
  if (records.empty()) throw ContractViolation("EvaluateClient: empty partition");
  const std::size_t t_count = model.config().num_tasks;
  std::vector<std::vector<double>> scores(t_count);
  std::vector<std::vector<std::uint8_t>> labels(t_count);
  std::vector<double> bce_sum(t_count, 0.0);

  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const std::size_t len = std::min(batch_size, records.size() - start);
    Batch b = MakeBatch(records.subspan(start, len));
    auto out = model.Predict(b.features);
    for (std::size_t i = 0; i < t_count; ++i) {
      const Tensor& p = out.probabilities[i].value();
      for (std::size_t r = 0; r < len; ++r) {
        const auto y = static_cast<std::uint8_t>(b.labels.at(r, i));
        const double q = std::clamp(p[r], kProbClamp, 1.0 - kProbClamp);
        bce_sum[i] += y == 1 ? -std::log(q) : -std::log(1.0 - q);
        scores[i].push_back(p[r]);
        labels[i].push_back(y);
      }
    }
  }

  EvalReport rep;
  rep.round = round;
  rep.client = client;
  rep.samples = records.size();
  for (std::size_t i = 0; i < t_count; ++i) {
    rep.auc.push_back(AucFast(scores[i], labels[i]));
    rep.bce.push_back(bce_sum[i] / static_cast<double>(records.size()));
  }
  return rep;
}

}  // namespace fedmoe
