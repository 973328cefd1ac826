// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Self-describing model container:
//
//   "RVQK" u32 version
//   str kind
//   u32 n, n x (str key, str value)        architecture
//   u32 n, n x (str key, str value)        metadata
//   u64 rng seed
//   u32 n, n x tensor record:
//     str name, u32 ndim, ndim x u32 dim, numel x f64 value,
//     u64 adam step, numel x f64 first moment, numel x f64 second moment
//
// All integers and floats little-endian.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rvqmotion/core/binary_io.hpp"
#include "rvqmotion/core/layers.hpp"

namespace rvqmotion {

inline constexpr char kCheckpointMagic[4] = {'R', 'V', 'Q', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> values;
    std::uint64_t step = 0;
    std::vector<double> first_moment;
    std::vector<double> second_moment;
  };

  std::string kind;
  std::map<std::string, std::string> architecture;
  std::map<std::string, std::string> metadata;
  std::uint64_t seed = 0;
  std::vector<Entry> tensors;

  static Checkpoint capture(std::string kind, std::map<std::string, std::string> architecture,
                            const ParameterSet& params, std::uint64_t seed) {
    Checkpoint ck;
    ck.kind = std::move(kind);
    ck.architecture = std::move(architecture);
    ck.seed = seed;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Parameter& p = params[i];
      ck.tensors.push_back({p.name, p.value.shape(), p.value.values(), p.step, p.first_moment, p.second_moment});
    }
    return ck;
  }

  /// Loads values and optimizer state; names and shapes must match exactly.
  void restore_into(ParameterSet& params) const {
    if (tensors.size() != params.size()) {
      throw FormatError(FormatError::Kind::kInvalidContent,
                        "checkpoint holds " + std::to_string(tensors.size()) + " tensors, model expects " +
                            std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      Parameter& p = params[i];
      const Entry& e = tensors[i];
      if (e.name != p.name || e.shape != p.value.shape()) {
        throw FormatError(FormatError::Kind::kInvalidContent,
                          "checkpoint tensor " + e.name + shape_str(e.shape) + " does not match model tensor " +
                              p.name + shape_str(p.value.shape()));
      }
      std::copy(e.values.begin(), e.values.end(), p.value.mutable_data().begin());
      p.step = e.step;
      p.first_moment = e.first_moment;
      p.second_moment = e.second_moment;
    }
  }

  const std::string& arch(const std::string& key) const {
    auto it = architecture.find(key);
    if (it == architecture.end()) {
      throw FormatError(FormatError::Kind::kInvalidContent, "checkpoint architecture lacks key '" + key + "'");
    }
    return it->second;
  }

  std::size_t arch_size(const std::string& key) const {
    const std::string& v = arch(key);
    try {
      std::size_t used = 0;
      const unsigned long long n = std::stoull(v, &used);
      if (used == v.size()) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw FormatError(FormatError::Kind::kInvalidContent, "checkpoint architecture key '" + key + "' is not a count");
  }

  double arch_real(const std::string& key) const {
    const std::string& v = arch(key);
    try {
      std::size_t used = 0;
      const double x = std::stod(v, &used);
      if (used == v.size()) return x;
    } catch (const std::exception&) {
    }
    throw FormatError(FormatError::Kind::kInvalidContent, "checkpoint architecture key '" + key + "' is not a number");
  }

  std::vector<char> serialize() const {
    ByteWriter w;
    w.raw(std::string_view(kCheckpointMagic, 4));
    w.u32(kCheckpointVersion);
    w.str(kind);
    for (const auto* table : {&architecture, &metadata}) {
      w.u32(static_cast<std::uint32_t>(table->size()));
      for (const auto& [k, v] : *table) {
        w.str(k);
        w.str(v);
      }
    }
    w.u64(seed);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const Entry& e : tensors) {
      w.str(e.name);
      w.u32(static_cast<std::uint32_t>(e.shape.size()));
      for (std::size_t d : e.shape) w.u32(static_cast<std::uint32_t>(d));
      for (double v : e.values) w.f64(v);
      w.u64(e.step);
      for (double v : e.first_moment) w.f64(v);
      for (double v : e.second_moment) w.f64(v);
    }
    return w.bytes();
  }

  static Checkpoint deserialize(ByteReader r) {
    if (r.remaining() < 4 || r.raw(4) != std::string(kCheckpointMagic, 4)) {
      throw FormatError(FormatError::Kind::kBadMagic, r.source() + ": bad magic, not a checkpoint");
    }
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
      throw FormatError(FormatError::Kind::kVersionMismatch,
                        r.source() + ": checkpoint version " + std::to_string(version) + ", expected " +
                            std::to_string(kCheckpointVersion));
    }
    Checkpoint ck;
    ck.kind = r.str();
    for (auto* table : {&ck.architecture, &ck.metadata}) {
      const std::uint32_t n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        std::string k = r.str();
        (*table)[k] = r.str();
      }
    }
    ck.seed = r.u64();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      Entry e;
      e.name = r.str();
      const std::uint32_t ndim = r.u32();
      for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(r.u32());
      const std::size_t n = shape_numel(e.shape);
      r.need(n * 8);
      e.values.resize(n);
      for (double& v : e.values) v = r.f64();
      e.step = r.u64();
      r.need(n * 16);
      e.first_moment.resize(n);
      e.second_moment.resize(n);
      for (double& v : e.first_moment) v = r.f64();
      for (double& v : e.second_moment) v = r.f64();
      ck.tensors.push_back(std::move(e));
    }
    return ck;
  }

  void write(const std::string& path) const {
    ByteWriter w;
    const auto bytes = serialize();
    w.raw(std::string_view(bytes.data(), bytes.size()));
    w.write_file(path);
  }

  static Checkpoint read(const std::string& path) { return deserialize(ByteReader::from_file(path)); }

  /// Fingerprint of the architecture and parameter values (not optimizer state).
  std::uint64_t checksum() const {
    ByteWriter w;
    w.str(kind);
    for (const auto& [k, v] : architecture) {
      w.str(k);
      w.str(v);
    }
    for (const Entry& e : tensors) {
      w.str(e.name);
      for (double v : e.values) w.f64(v);
    }
    return fnv1a64(w.bytes());
  }
};

inline std::string to_hex(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace rvqmotion
