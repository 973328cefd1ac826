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

// Lip errors of a probabilistic generator against one ground truth x:
//   vertex: max over frames and lip vertices of the 3-D displacement error
//   cover:  min of the vertex error over a sample set
//   mean:   vertex error of the frame-wise sample mean

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "rvqmotion/data/sequence.hpp"

namespace rvqmotion {

inline double lip_vertex_error(const MotionSequence& x, const MotionSequence& xh, std::span<const std::uint32_t> lip) {
  if (x.frames != xh.frames || x.vertices != xh.vertices) {
    throw ShapeError("lip error: sequences differ in shape (" + std::to_string(x.frames) + "x" +
                     std::to_string(x.vertices) + " vs " + std::to_string(xh.frames) + "x" +
                     std::to_string(xh.vertices) + ")");
  }
  if (lip.empty()) throw std::invalid_argument("lip error: empty lip vertex set");
  double worst = 0.0;
  for (std::size_t t = 0; t < x.frames; ++t) {
    for (std::uint32_t v : lip) {
      if (v >= x.vertices) throw ShapeError("lip vertex " + std::to_string(v) + " out of range");
      double sq = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        const double d = x.at(t, 3 * v + k) - xh.at(t, 3 * v + k);
        sq += d * d;
      }
      worst = std::max(worst, std::sqrt(sq));
    }
  }
  return worst;
}

inline double coverage_error(const MotionSequence& x, std::span<const MotionSequence> samples,
                             std::span<const std::uint32_t> lip) {
  if (samples.empty()) throw std::invalid_argument("coverage error: empty sample set");
  double best = lip_vertex_error(x, samples.front(), lip);
  for (const auto& s : samples.subspan(1)) best = std::min(best, lip_vertex_error(x, s, lip));
  return best;
}

inline MotionSequence mean_sequence(std::span<const MotionSequence> samples) {
  if (samples.empty()) throw std::invalid_argument("mean of an empty sample set");
  // Running mean: exact when every sample is the same sequence.
  MotionSequence mean = samples.front();
  double k = 1.0;
  for (const auto& s : samples.subspan(1)) {
    if (s.frames != mean.frames || s.vertices != mean.vertices) throw ShapeError("samples differ in shape");
    k += 1.0;
    for (std::size_t i = 0; i < mean.values.size(); ++i) mean.values[i] += (s.values[i] - mean.values[i]) / k;
  }
  return mean;
}

inline double mean_estimate_error(const MotionSequence& x, std::span<const MotionSequence> samples,
                                  std::span<const std::uint32_t> lip) {
  if (samples.empty()) throw std::invalid_argument("mean-estimate error: empty sample set");
  return lip_vertex_error(x, mean_sequence(samples), lip);
}

/// Lip coordinates only, [T, 3*|lip|].
inline std::vector<double> lip_coordinates(const MotionSequence& m, std::span<const std::uint32_t> lip) {
  std::vector<double> out;
  out.reserve(m.frames * 3 * lip.size());
  for (std::size_t t = 0; t < m.frames; ++t) {
    for (std::uint32_t v : lip) {
      for (std::size_t k = 0; k < 3; ++k) out.push_back(m.at(t, 3 * v + k));
    }
  }
  return out;
}

/// Mean over samples of the per-frame, per-coordinate variance across samples.
inline double sample_variance(std::span<const MotionSequence> samples) {
  if (samples.size() < 2) return 0.0;
  const MotionSequence mean = mean_sequence(samples);
  double total = 0.0;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      const double d = s.values[i] - mean.values[i];
      total += d * d;
    }
  }
  return total / (static_cast<double>(samples.size() - 1) * static_cast<double>(mean.values.size()));
}

}  // namespace rvqmotion
