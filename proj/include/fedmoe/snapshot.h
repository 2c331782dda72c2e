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

#ifndef FEDMOE_SNAPSHOT_H_
#define FEDMOE_SNAPSHOT_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedmoe/tensor.h"

namespace fedmoe {

/// Server-side record of one round: what was uploaded, what FedBN produced,
/// the aggregates and increments. Entry names are '/'-separated paths such as
/// "normalized/c1/expert.0.layer.1.w_scenario".
///
/// On disk (all integers and floats little-endian):
///   "FMSNAP01"                         8-byte magic
///   u32 strategy id, u32 round, u32 entry count
///   per entry, in name order:
///     u32 name length, name bytes (UTF-8)
///     u32 rank, rank x u64 extents
///     product(extents) x f64 values, row-major
struct RoundSnapshot {
  std::uint32_t strategy = 0;
  std::uint32_t round = 0;
  std::map<std::string, Tensor> entries;

  friend bool operator==(const RoundSnapshot&, const RoundSnapshot&) = default;
};

std::vector<std::uint8_t> SerializeSnapshot(const RoundSnapshot& snap);
RoundSnapshot DeserializeSnapshot(const std::vector<std::uint8_t>& bytes);

void WriteSnapshot(const std::string& path, const RoundSnapshot& snap);
RoundSnapshot ReadSnapshot(const std::string& path);

}  // namespace fedmoe

#endif  // FEDMOE_SNAPSHOT_H_
