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

#include "fedmoe/snapshot.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fedmoe {
namespace {

constexpr char kMagic[8] = {'F', 'M', 'S', 'N', 'A', 'P', '0', '1'};

template <typename T>
void PutLe(std::vector<std::uint8_t>& out, T v) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  template <typename T>
  T Get() {
    Need(sizeof(T));
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    }
    pos_ += sizeof(T);
    if constexpr (std::is_same_v<T, double>) {
      return std::bit_cast<double>(bits);
    } else {
      return static_cast<T>(bits);
    }
  }

  std::string GetString(std::size_t n) {
    Need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void Need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw DataError("snapshot truncated");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> SerializeSnapshot(const RoundSnapshot& snap) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  PutLe<std::uint32_t>(out, snap.strategy);
  PutLe<std::uint32_t>(out, snap.round);
  PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(snap.entries.size()));
  for (const auto& [name, t] : snap.entries) {
    PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    PutLe<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) PutLe<std::uint64_t>(out, e);
    for (double v : t.values()) PutLe<double>(out, v);
  }
  return out;
}

RoundSnapshot DeserializeSnapshot(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw DataError("not a round snapshot (bad magic)");
  }
  Reader r(bytes);
  r.GetString(sizeof(kMagic));
  RoundSnapshot snap;
  snap.strategy = r.Get<std::uint32_t>();
  snap.round = r.Get<std::uint32_t>();
  const auto count = r.Get<std::uint32_t>();
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.Get<std::uint32_t>();
    std::string name = r.GetString(len);
    const auto rank = r.Get<std::uint32_t>();
    if (rank == 0 || rank > 8) throw DataError("snapshot entry '" + name + "' has bad rank");
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& s : shape) {
      s = static_cast<std::size_t>(r.Get<std::uint64_t>());
      numel *= s;
    }
    if (numel > bytes.size()) throw DataError("snapshot entry '" + name + "' is too large");
    std::vector<double> values(numel);
    for (auto& v : values) v = r.Get<double>();
    snap.entries.emplace(std::move(name), Tensor(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw DataError("trailing bytes after snapshot");
  return snap;
}

void WriteSnapshot(const std::string& path, const RoundSnapshot& snap) {
  const auto bytes = SerializeSnapshot(snap);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write snapshot " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

RoundSnapshot ReadSnapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open snapshot " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return DeserializeSnapshot(bytes);
}

}  // namespace fedmoe
