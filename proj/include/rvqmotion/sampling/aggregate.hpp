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

// Aggregation of N candidate frame embeddings (rows of width C) into one.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvqmotion/codec/rvq.hpp"

namespace rvqmotion {

enum class Strategy { kDefault, kKnn, kAverage, kSyncReject };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::kDefault: return "default";
    case Strategy::kKnn: return "knn";
    case Strategy::kAverage: return "average";
    case Strategy::kSyncReject: return "syncnet-rejection";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "default") return Strategy::kDefault;
  if (s == "knn") return Strategy::kKnn;
  if (s == "average") return Strategy::kAverage;
  if (s == "syncnet-rejection") return Strategy::kSyncReject;
  throw std::invalid_argument("unknown sampling strategy '" + s + "' (default, knn, average, syncnet-rejection)");
}

struct SamplingConfig {
  Strategy strategy = Strategy::kDefault;
  std::size_t n = 1;
  std::size_t k = 3;
  double keep_fraction = 0.5;
  bool keep_best = false;       // rejection: keep the single best candidate instead of averaging survivors
  std::size_t depth_limit = 0;  // 0 = full depth
  double temperature = 1.0;     // <= kGreedyTemperature means argmax
  std::uint64_t seed = 1;

  static constexpr double kGreedyTemperature = 1e-6;

  void validate(std::size_t depth) const {
    if (n == 0) throw std::invalid_argument("sampling needs n >= 1");
    if (strategy == Strategy::kDefault && n != 1) {
      throw std::invalid_argument("strategy 'default' draws a single candidate; n must be 1");
    }
    if (strategy == Strategy::kKnn && (k == 0 || k > n)) throw std::invalid_argument("knn needs 1 <= k <= n");
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw std::invalid_argument("keep_fraction must be in (0, 1]");
    if (depth_limit > depth) {
      throw std::invalid_argument("depth limit " + std::to_string(depth_limit) + " exceeds model depth " +
                                  std::to_string(depth));
    }
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) throw std::invalid_argument("temperature must be >= 0");
  }

  std::size_t resolved_depth(std::size_t depth) const { return depth_limit ? depth_limit : depth; }
};

/// Running mean of the listed rows in the given order; exact when the rows
/// are identical.
inline std::vector<double> mean_rows(std::span<const double> rows, std::size_t width, std::span<const std::size_t> pick) {
  if (pick.empty()) throw std::invalid_argument("mean of no candidates");
  std::vector<double> out(rows.begin() + static_cast<long>(pick[0] * width),
                          rows.begin() + static_cast<long>((pick[0] + 1) * width));
  double k = 1.0;
  for (std::size_t i : pick.subspan(1)) {
    k += 1.0;
    for (std::size_t c = 0; c < width; ++c) out[c] += (rows[i * width + c] - out[c]) / k;
  }
  return out;
}

inline std::vector<double> average_aggregate(std::span<const double> candidates, std::size_t width) {
  std::vector<std::size_t> all(candidates.size() / width);
  std::iota(all.begin(), all.end(), 0);
  return mean_rows(candidates, width, all);
}

/// Mean of every candidate no farther from the anchor than its K-th nearest
/// candidate (the anchor counts as its own nearest, at distance 0).
inline std::vector<double> knn_aggregate(std::span<const double> candidates, std::size_t width, std::size_t anchor,
                                         std::size_t k) {
  const std::size_t n = candidates.size() / width;
  if (anchor >= n || k == 0 || k > n) throw std::invalid_argument("knn: need anchor < n and 1 <= k <= n");
  std::vector<double> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    dist[i] = squared_distance(candidates.data() + i * width, candidates.data() + anchor * width, width);
  }
  std::vector<double> sorted = dist;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(k - 1), sorted.end());
  const double radius = sorted[k - 1];
  std::vector<std::size_t> pick;
  for (std::size_t i = 0; i < n; ++i) {
    if (dist[i] <= radius) pick.push_back(i);
  }
  return mean_rows(candidates, width, pick);
}

/// Indices of the ceil(keep_fraction * n) highest scores, ties to the lower
/// index, returned in ascending index order.
inline std::vector<std::size_t> top_scoring(std::span<const double> scores, double keep_fraction) {
  const std::size_t n = scores.size();
  const auto keep = std::max<std::size_t>(
      1, std::min(n, static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(n) - 1e-9))));
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Rejection by score: mean of the surviving candidates, or the single best
/// candidate when `keep_best`.
inline std::vector<double> syncnet_reject(std::span<const double> candidates, std::size_t width,
                                          std::span<const double> scores, double keep_fraction, bool keep_best = false) {
  if (scores.size() * width != candidates.size()) throw std::invalid_argument("one score per candidate required");
  const auto survivors = top_scoring(scores, keep_best ? 0.0 : keep_fraction);
  return mean_rows(candidates, width, survivors);
}

}  // namespace rvqmotion
