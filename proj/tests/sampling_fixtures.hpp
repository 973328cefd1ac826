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

// A tiny codec + scrambled model pair for generation and distillation
// tests, and the exact grid distribution of one-frame models.

#include <cmath>
#include <random>
#include <vector>

#include "ar_fixtures.hpp"
#include "rvqmotion/sampling/distill.hpp"

namespace rvqmotion::testing {

struct TinyPipeline {
  Codec codec;
  ArModel model;
  SignalSequence signal;
  std::vector<double> reference;
  std::size_t ref_frames = 4;
  std::vector<std::uint32_t> lip{0};

  explicit TinyPipeline(std::size_t frames = 10, ArConfig ac = tiny_config(TemporalKind::kConv, false, 32))
      : codec(CodecConfig{.vertices = 2, .code_dim = 2, .codebook_size = 3, .depth = 2}, 3), model(ac, 5) {
    scramble(model, 9);
    model.codec_checksum = codec.checksum();
    std::mt19937_64 rng(21);
    signal = SignalSequence(frames, ac.signal_dim);
    signal.values = random_values(frames * ac.signal_dim, rng);
    reference = random_values(ref_frames * 3 * ac.vertices, rng);
  }

  std::vector<GeneratedSample> run(const SamplingConfig& cfg, std::size_t samples, const SyncNet* sync = nullptr) const {
    return generate(model, codec, signal, reference, ref_frames, cfg, samples, lip, sync);
  }
};

/// Probabilities of the 9 grids of a one-frame, two-depth, three-code model,
/// indexed 3 * depth1 + depth2.
inline std::vector<double> grid_distribution(const ArModel& model, const CodebookView& cb,
                                             const SignalSequence& signal, const std::vector<double>& reference,
                                             std::size_t ref_frames) {
  std::vector<double> p;
  CodeGrid grid(1, 2, 3);
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      grid.indices = {a, b};
      p.push_back(std::exp(sequence_log_prob(model, cb, grid, signal, reference, ref_frames)));
    }
  }
  return p;
}

/// KL(p || q); terms with p = 0 contribute nothing.
inline double kl(const std::vector<double>& p, const std::vector<double>& q) {
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

}  // namespace rvqmotion::testing
