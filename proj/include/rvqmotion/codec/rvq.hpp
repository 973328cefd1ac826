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

// Residual quantization against one codebook shared by every depth, and the
// T x D index grid with its file format:
//
//   "RVQJ" u32 T u32 D u32 codebook_size T*D x u16

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvqmotion/core/binary_io.hpp"
#include "rvqmotion/core/tensor.hpp"

namespace rvqmotion {

/// Non-owning view of `size` codes of width `dim`, row-major.
struct CodebookView {
  std::span<const double> codes;
  std::size_t dim = 0;

  std::size_t size() const { return dim == 0 ? 0 : codes.size() / dim; }
  const double* code(std::size_t i) const { return codes.data() + i * dim; }
};

struct RvqResult {
  std::vector<int> indices;
  std::vector<double> quantized;       // running sum of the selected codes
  std::vector<double> residual_norms;  // |z - quantized| after each depth
};

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Nearest code to `r`; the lowest index wins ties.
inline int nearest_code(const double* r, const CodebookView& cb) {
  int best = 0;
  double best_d = squared_distance(r, cb.code(0), cb.dim);
  for (std::size_t i = 1; i < cb.size(); ++i) {
    const double d = squared_distance(r, cb.code(i), cb.dim);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

namespace detail {

inline void validate_rvq(std::span<const double> z, const CodebookView& cb, std::size_t depth) {
  if (cb.size() == 0 || cb.codes.size() != cb.size() * cb.dim) throw ShapeError("rvq: empty or ragged codebook");
  if (z.size() != cb.dim) {
    throw ShapeError("rvq: vector of width " + std::to_string(z.size()) + " against codes of width " +
                     std::to_string(cb.dim));
  }
  if (depth == 0) throw std::invalid_argument("rvq: depth limit must be >= 1");
}

}  // namespace detail

/// Greedy residual quantization of `z` to `depth` indices.
inline RvqResult rvq_quantize(std::span<const double> z, const CodebookView& cb, std::size_t depth) {
  detail::validate_rvq(z, cb, depth);
  RvqResult out;
  std::vector<double> residual(z.begin(), z.end());
  out.quantized.assign(cb.dim, 0.0);
  for (std::size_t d = 0; d < depth; ++d) {
    const int j = nearest_code(residual.data(), cb);
    const double* e = cb.code(static_cast<std::size_t>(j));
    double norm = 0.0;
    for (std::size_t k = 0; k < cb.dim; ++k) {
      residual[k] -= e[k];
      out.quantized[k] += e[k];
      norm += residual[k] * residual[k];
    }
    out.indices.push_back(j);
    out.residual_norms.push_back(std::sqrt(norm));
  }
  return out;
}

/// Residual quantization that draws each index with probability proportional
/// to exp(-|r - e_i|^2 / temperature) instead of taking the nearest code.
inline RvqResult rvq_quantize_stochastic(std::span<const double> z, const CodebookView& cb, std::size_t depth,
                                         double temperature, std::mt19937_64& rng) {
  detail::validate_rvq(z, cb, depth);
  if (!(temperature > 0.0)) return rvq_quantize(z, cb, depth);
  RvqResult out;
  std::vector<double> residual(z.begin(), z.end()), weights(cb.size());
  out.quantized.assign(cb.dim, 0.0);
  for (std::size_t d = 0; d < depth; ++d) {
    double best = 1e300;
    for (std::size_t i = 0; i < cb.size(); ++i) {
      weights[i] = squared_distance(residual.data(), cb.code(i), cb.dim);
      best = std::min(best, weights[i]);
    }
    for (double& w : weights) w = std::exp(-(w - best) / temperature);
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    const int j = pick(rng);
    const double* e = cb.code(static_cast<std::size_t>(j));
    double norm = 0.0;
    for (std::size_t k = 0; k < cb.dim; ++k) {
      residual[k] -= e[k];
      out.quantized[k] += e[k];
      norm += residual[k] * residual[k];
    }
    out.indices.push_back(j);
    out.residual_norms.push_back(std::sqrt(norm));
  }
  return out;
}

/// Sum of the first `depth` selected codes, accumulated in depth order.
inline std::vector<double> sum_codes(std::span<const int> indices, const CodebookView& cb, std::size_t depth) {
  std::vector<double> q(cb.dim, 0.0);
  for (std::size_t d = 0; d < depth; ++d) {
    const int j = indices[d];
    if (j < 0 || static_cast<std::size_t>(j) >= cb.size()) {
      throw std::out_of_range("code index " + std::to_string(j) + " outside codebook of " + std::to_string(cb.size()));
    }
    const double* e = cb.code(static_cast<std::size_t>(j));
    for (std::size_t k = 0; k < cb.dim; ++k) q[k] += e[k];
  }
  return q;
}

/// T x D code indices, row-major.
struct CodeGrid {
  std::size_t frames = 0;
  std::size_t depth = 0;
  std::size_t codebook_size = 0;
  std::vector<int> indices;

  CodeGrid() = default;
  CodeGrid(std::size_t t, std::size_t d, std::size_t c) : frames(t), depth(d), codebook_size(c), indices(t * d, 0) {}

  int& at(std::size_t t, std::size_t d) { return indices[t * depth + d]; }
  int at(std::size_t t, std::size_t d) const { return indices[t * depth + d]; }
  std::span<const int> row(std::size_t t) const { return {indices.data() + t * depth, depth}; }

  void validate() const {
    if (indices.size() != frames * depth) throw ShapeError("code grid is not rectangular");
    for (int j : indices) {
      if (j < 0 || static_cast<std::size_t>(j) >= codebook_size) {
        throw std::out_of_range("code grid index " + std::to_string(j) + " outside codebook of " +
                                std::to_string(codebook_size));
      }
    }
  }
};

inline std::vector<char> serialize_grid(const CodeGrid& g) {
  g.validate();
  ByteWriter w;
  w.raw("RVQJ");
  w.u32(static_cast<std::uint32_t>(g.frames));
  w.u32(static_cast<std::uint32_t>(g.depth));
  w.u32(static_cast<std::uint32_t>(g.codebook_size));
  for (int j : g.indices) w.u16(static_cast<std::uint16_t>(j));
  return w.bytes();
}

inline CodeGrid deserialize_grid(ByteReader r) {
  if (r.remaining() < 4 || r.raw(4) != "RVQJ") {
    throw FormatError(FormatError::Kind::kBadMagic, r.source() + ": bad magic, not a code grid file");
  }
  CodeGrid g;
  g.frames = r.u32();
  g.depth = r.u32();
  g.codebook_size = r.u32();
  if (r.remaining() != g.frames * g.depth * 2) {
    throw FormatError(FormatError::Kind::kTruncatedPayload, r.source() + ": code grid payload does not match header");
  }
  g.indices.resize(g.frames * g.depth);
  for (int& j : g.indices) j = r.u16();
  try {
    g.validate();
  } catch (const std::exception& e) {
    throw FormatError(FormatError::Kind::kInvalidContent, r.source() + ": " + e.what());
  }
  return g;
}

inline void write_grid(const CodeGrid& g, const std::string& path) {
  ByteWriter w;
  const auto bytes = serialize_grid(g);
  w.raw(std::string_view(bytes.data(), bytes.size()));
  w.write_file(path);
}

inline CodeGrid read_grid(const std::string& path) { return deserialize_grid(ByteReader::from_file(path)); }

}  // namespace rvqmotion
