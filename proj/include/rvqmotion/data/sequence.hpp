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

// Motion and driving-signal sequences and their file formats.
//
// Motion file:  "RVQM" u32 version u32 T u32 V u32 n_lip n_lip x u32 vertex
//               T*3V x f64
// Signal file:  "RVQY" u32 version u32 T u32 dim T*dim x f64

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "rvqmotion/core/binary_io.hpp"
#include "rvqmotion/core/tensor.hpp"

namespace rvqmotion {

inline constexpr std::uint32_t kSequenceVersion = 1;

/// T frames of per-vertex 3-D displacements, row-major [T, 3V].
struct MotionSequence {
  std::size_t frames = 0;
  std::size_t vertices = 0;
  std::vector<double> values;
  std::vector<std::uint32_t> lip;  // vertex indices of the lip region

  MotionSequence() = default;
  MotionSequence(std::size_t t, std::size_t v, std::vector<std::uint32_t> lip_vertices = {})
      : frames(t), vertices(v), values(t * 3 * v, 0.0), lip(std::move(lip_vertices)) {}

  std::size_t width() const { return 3 * vertices; }
  double& at(std::size_t t, std::size_t c) { return values[t * width() + c]; }
  double at(std::size_t t, std::size_t c) const { return values[t * width() + c]; }
  const double* frame(std::size_t t) const { return values.data() + t * width(); }

  Tensor tensor() const { return Tensor::matrix(frames, width(), values); }

  static MotionSequence from_tensor(const Tensor& t, std::vector<std::uint32_t> lip) {
    MotionSequence m;
    m.frames = t.rows();
    m.vertices = t.cols() / 3;
    m.values = t.values();
    m.lip = std::move(lip);
    return m;
  }

  void validate() const {
    if (frames == 0 || vertices == 0) throw ShapeError("motion sequence needs T >= 1 and V >= 1");
    if (values.size() != frames * width()) throw ShapeError("motion sequence payload does not match T*3V");
    for (std::uint32_t v : lip) {
      if (v >= vertices) throw ShapeError("lip vertex " + std::to_string(v) + " out of range");
    }
    for (double x : values) {
      if (!std::isfinite(x)) throw NumericError("motion sequence holds a non-finite value");
    }
  }
};

/// Frame-aligned driving signal, row-major [T, dim].
struct SignalSequence {
  std::size_t frames = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  SignalSequence() = default;
  SignalSequence(std::size_t t, std::size_t d) : frames(t), dim(d), values(t * d, 0.0) {}

  double& at(std::size_t t, std::size_t c) { return values[t * dim + c]; }
  double at(std::size_t t, std::size_t c) const { return values[t * dim + c]; }

  Tensor tensor() const { return Tensor::matrix(frames, dim, values); }
};

namespace detail {

inline void check_magic(ByteReader& r, const char* magic, const char* what) {
  if (r.remaining() < 4 || r.raw(4) != std::string(magic, 4)) {
    throw FormatError(FormatError::Kind::kBadMagic, r.source() + ": bad magic, not a " + what + " file");
  }
  const std::uint32_t version = r.u32();
  if (version != kSequenceVersion) {
    throw FormatError(FormatError::Kind::kVersionMismatch, r.source() + ": " + what + " version " +
                                                               std::to_string(version) + ", expected " +
                                                               std::to_string(kSequenceVersion));
  }
}

inline std::vector<double> read_payload(ByteReader& r, std::size_t count) {
  if (r.remaining() != count * 8) {
    throw FormatError(FormatError::Kind::kTruncatedPayload,
                      r.source() + ": payload holds " + std::to_string(r.remaining()) + " bytes, header implies " +
                          std::to_string(count * 8));
  }
  std::vector<double> v(count);
  for (double& x : v) x = r.f64();
  return v;
}

}  // namespace detail

inline std::vector<char> serialize_motion(const MotionSequence& m) {
  ByteWriter w;
  w.raw("RVQM");
  w.u32(kSequenceVersion);
  w.u32(static_cast<std::uint32_t>(m.frames));
  w.u32(static_cast<std::uint32_t>(m.vertices));
  w.u32(static_cast<std::uint32_t>(m.lip.size()));
  for (std::uint32_t v : m.lip) w.u32(v);
  for (double x : m.values) w.f64(x);
  return w.bytes();
}

inline MotionSequence deserialize_motion(ByteReader r) {
  detail::check_magic(r, "RVQM", "motion");
  MotionSequence m;
  m.frames = r.u32();
  m.vertices = r.u32();
  const std::uint32_t n_lip = r.u32();
  r.need(std::size_t{n_lip} * 4);
  m.lip.resize(n_lip);
  for (auto& v : m.lip) v = r.u32();
  if (m.frames == 0 || m.vertices == 0) {
    throw FormatError(FormatError::Kind::kInvalidContent, r.source() + ": empty motion header");
  }
  m.values = detail::read_payload(r, m.frames * m.width());
  for (std::uint32_t v : m.lip) {
    if (v >= m.vertices) throw FormatError(FormatError::Kind::kInvalidContent, r.source() + ": lip vertex out of range");
  }
  return m;
}

inline void write_motion(const MotionSequence& m, const std::string& path) {
  ByteWriter w;
  const auto bytes = serialize_motion(m);
  w.raw(std::string_view(bytes.data(), bytes.size()));
  w.write_file(path);
}

inline MotionSequence read_motion(const std::string& path) { return deserialize_motion(ByteReader::from_file(path)); }

inline std::vector<char> serialize_signal(const SignalSequence& s) {
  ByteWriter w;
  w.raw("RVQY");
  w.u32(kSequenceVersion);
  w.u32(static_cast<std::uint32_t>(s.frames));
  w.u32(static_cast<std::uint32_t>(s.dim));
  for (double x : s.values) w.f64(x);
  return w.bytes();
}

inline SignalSequence deserialize_signal(ByteReader r) {
  detail::check_magic(r, "RVQY", "signal");
  SignalSequence s;
  s.frames = r.u32();
  s.dim = r.u32();
  if (s.frames == 0 || s.dim == 0) {
    throw FormatError(FormatError::Kind::kInvalidContent, r.source() + ": empty signal header");
  }
  s.values = detail::read_payload(r, s.frames * s.dim);
  return s;
}

inline void write_signal(const SignalSequence& s, const std::string& path) {
  ByteWriter w;
  const auto bytes = serialize_signal(s);
  w.raw(std::string_view(bytes.data(), bytes.size()));
  w.write_file(path);
}

inline SignalSequence read_signal(const std::string& path) { return deserialize_signal(ByteReader::from_file(path)); }

}  // namespace rvqmotion
