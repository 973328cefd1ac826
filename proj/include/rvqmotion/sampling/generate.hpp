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

// Frame-by-frame generation of S independent samples in one batch. At each
// frame the temporal stage runs once per sample; the depth stage then draws
// N candidate code rows per sample, which are aggregated, re-quantized to
// legal codes and fed back as the next frame's history.

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "rvqmotion/ar/model.hpp"
#include "rvqmotion/codec/codec.hpp"
#include "rvqmotion/metrics/syncnet.hpp"
#include "rvqmotion/sampling/aggregate.hpp"

namespace rvqmotion {

struct GeneratedSample {
  MotionSequence motion;
  CodeGrid grid;  // depth = resolved depth limit
};

/// Per-sample random stream: sample s of a run is independent of how many
/// samples are drawn alongside it.
inline std::mt19937_64 sample_rng(std::uint64_t seed, std::size_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(sample), 0x5a17u};
  return std::mt19937_64(seq);
}

/// Draws one index from softmax(logits / temperature); argmax (lowest index
/// on ties) at temperature <= kGreedyTemperature.
inline int sample_index(std::span<const double> logits, double temperature, std::mt19937_64& rng) {
  const std::size_t K = logits.size();
  std::size_t best = 0;
  for (std::size_t i = 1; i < K; ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  if (temperature <= SamplingConfig::kGreedyTemperature) return static_cast<int>(best);
  std::vector<double> w(K);
  double total = 0.0;
  for (std::size_t i = 0; i < K; ++i) total += w[i] = std::exp((logits[i] - logits[best]) / temperature);
  double u = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (std::size_t i = 0; i < K; ++i) {
    u -= w[i];
    if (u < 0.0) return static_cast<int>(i);
  }
  return static_cast<int>(K - 1);
}

/// Legal code row for an aggregated embedding: a candidate's own indices when
/// the aggregate equals that candidate bit for bit, else full residual
/// quantization of the aggregate.
inline std::vector<int> requantize(std::span<const double> aggregate, std::span<const double> candidates,
                                   std::span<const int> candidate_codes, const CodebookView& cb, std::size_t depth) {
  const std::size_t n = candidates.size() / cb.dim;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::equal(aggregate.begin(), aggregate.end(), candidates.begin() + static_cast<long>(i * cb.dim))) {
      return {candidate_codes.begin() + static_cast<long>(i * depth),
              candidate_codes.begin() + static_cast<long>((i + 1) * depth)};
    }
  }
  return rvq_quantize(aggregate, cb, depth).indices;
}

/// Scores every candidate of one frame: its embedding is decoded together
/// with the sample's already generated latents, and the lip window ending at
/// frame t is scored against the signal window over the same frames.
class CandidateScorer {
 public:
  CandidateScorer(const SyncNet& net, const Codec& codec, const SignalSequence& signal,
                  std::vector<std::uint32_t> lip)
      : net_(net), codec_(codec), signal_(signal), lip_(std::move(lip)) {}

  /// `history` holds the sample's latents for frames < t, `candidates` [N, C].
  std::vector<double> score(std::span<const double> history, std::size_t t, std::span<const double> candidates) const {
    const std::size_t C = codec_.config().code_dim, W = net_.config().window, n = candidates.size() / C;
    const std::size_t context = W + 4;  // decoder look-around beyond the window
    const std::size_t first = t + 1 > context ? t + 1 - context : 0, len = t + 1 - first;
    std::vector<double> latent;
    latent.reserve(n * len * C);
    for (std::size_t i = 0; i < n; ++i) {
      latent.insert(latent.end(), history.begin() + static_cast<long>(first * C), history.begin() + static_cast<long>(t * C));
      latent.insert(latent.end(), candidates.begin() + static_cast<long>(i * C),
                    candidates.begin() + static_cast<long>((i + 1) * C));
    }
    Tensor decoded;
    {
      NoGradGuard guard;
      decoded = codec_.decode_latent(Tensor({n * len, C}, std::move(latent)), len);
    }
    const std::size_t width = decoded.cols(), lip_dims = 3 * lip_.size();
    const long start = static_cast<long>(t) - static_cast<long>(W) + 1;
    std::vector<double> motion, sig;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> lip_rows;
      lip_rows.reserve(len * lip_dims);
      for (std::size_t r = 0; r < len; ++r) {
        const double* row = decoded.data().data() + (i * len + r) * width;
        for (std::uint32_t v : lip_) lip_rows.insert(lip_rows.end(), row + 3 * v, row + 3 * v + 3);
      }
      append_window(motion, lip_rows, len, lip_dims, start - static_cast<long>(first), W);
      append_window(sig, signal_.values, signal_.frames, signal_.dim, start, W);
    }
    return net_.score_pairs(motion, sig);
  }

 private:
  const SyncNet& net_;
  const Codec& codec_;
  const SignalSequence& signal_;
  std::vector<std::uint32_t> lip_;
};

/// Aggregates one sample's N candidates into a legal code row.
inline std::vector<int> aggregate_candidates(const SamplingConfig& cfg, std::span<const double> embeds,
                                             std::span<const int> codes, const CodebookView& cb, std::size_t depth,
                                             const std::vector<double>* scores) {
  std::vector<double> agg;
  switch (cfg.strategy) {
    case Strategy::kDefault:
      return {codes.begin(), codes.begin() + static_cast<long>(depth)};
    case Strategy::kAverage:
      agg = average_aggregate(embeds, cb.dim);
      break;
    case Strategy::kKnn:
      agg = knn_aggregate(embeds, cb.dim, 0, cfg.k);
      break;
    case Strategy::kSyncReject:
      agg = syncnet_reject(embeds, cb.dim, *scores, cfg.keep_fraction, cfg.keep_best);
      break;
  }
  return requantize(agg, embeds, codes, cb, depth);
}

/// Draws `samples` motion sequences for one driving signal and style reference.
inline std::vector<GeneratedSample> generate(const ArModel& model, const Codec& codec, const SignalSequence& signal,
                                             const std::vector<double>& reference, std::size_t ref_frames,
                                             const SamplingConfig& cfg, std::size_t samples,
                                             const std::vector<std::uint32_t>& lip, const SyncNet* sync = nullptr) {
  const ArConfig& ac = model.config();
  cfg.validate(ac.depth);
  model.require_codec(codec.checksum());
  if (cfg.strategy == Strategy::kSyncReject && sync == nullptr) {
    throw std::invalid_argument("syncnet-rejection sampling needs a trained sync network");
  }
  if (samples == 0) throw std::invalid_argument("generate needs samples >= 1");
  if (signal.dim != ac.signal_dim || signal.frames == 0) throw ShapeError("driving signal does not match the model");
  if (ref_frames == 0 || reference.size() != ref_frames * 3 * ac.vertices) throw ShapeError("style reference shape");

  NoGradGuard guard;
  const std::size_t T = signal.frames, S = samples, N = cfg.n, M = S * N, C = ac.code_dim;
  const std::size_t D = cfg.resolved_depth(ac.depth);
  const CodebookView cb = codec.codebook();
  std::vector<std::mt19937_64> rngs;
  for (std::size_t s = 0; s < S; ++s) rngs.push_back(sample_rng(cfg.seed, s));

  const Tensor audio = model.encode_audio(signal.tensor(), T);
  const Tensor style = model.encode_style(Tensor({ref_frames, 3 * ac.vertices}, reference), ref_frames);
  const Tensor sample_style = gather_rows({style}, std::vector<RowRef>(S, RowRef{0, 0}));
  const Tensor candidate_style = gather_rows({style}, std::vector<RowRef>(M, RowRef{0, 0}));
  std::vector<RowRef> spread(M);
  for (std::size_t m = 0; m < M; ++m) spread[m] = RowRef{0, m / N};
  std::optional<CandidateScorer> scorer;
  if (cfg.strategy == Strategy::kSyncReject) scorer.emplace(*sync, codec, signal, lip);

  std::vector<CodeGrid> grids(S, CodeGrid(T, D, cb.size()));
  std::vector<std::vector<double>> latents(S);  // per sample, chosen latents so far [t, C]
  std::vector<double> previous;
  auto state = model.start_temporal(S);
  std::vector<int> codes(M * D);
  std::vector<double> embeds(M * C);
  for (std::size_t t = 0; t < T; ++t) {
    const std::vector<RowRef> at_t{RowRef{0, t}};
    const Tensor h = model.temporal_step(state, model.temporal_input(gather_rows({audio}, at_t), sample_style, previous, S));
    const Tensor context = gather_rows({h}, spread);

    std::fill(embeds.begin(), embeds.end(), 0.0);
    std::vector<double> partial;
    for (std::size_t d = 0; d < D; ++d) {
      const Tensor logits = model.depth_step(context, candidate_style, partial, d + 1);
      const std::size_t K = logits.cols();
      for (std::size_t m = 0; m < M; ++m) {
        const int j = sample_index(logits.data().subspan(m * K, K), cfg.temperature, rngs[m / N]);
        codes[m * D + d] = j;
        const double* e = cb.code(static_cast<std::size_t>(j));
        for (std::size_t c = 0; c < C; ++c) embeds[m * C + c] += e[c];
      }
      if (d + 1 == D) break;
      std::vector<double> next;
      next.reserve(M * (d + 1) * C);
      for (std::size_t m = 0; m < M; ++m) {
        next.insert(next.end(), partial.begin() + static_cast<long>(m * d * C),
                    partial.begin() + static_cast<long>((m + 1) * d * C));
        next.insert(next.end(), embeds.begin() + static_cast<long>(m * C), embeds.begin() + static_cast<long>((m + 1) * C));
      }
      partial = std::move(next);
    }

    previous.assign(S * C, 0.0);
    for (std::size_t s = 0; s < S; ++s) {
      const std::span<const double> mine(embeds.data() + s * N * C, N * C);
      const std::span<const int> my_codes(codes.data() + s * N * D, N * D);
      std::optional<std::vector<double>> scores;
      if (scorer) scores = scorer->score(latents[s], t, mine);
      const auto row = aggregate_candidates(cfg, mine, my_codes, cb, D, scores ? &*scores : nullptr);
      std::copy(row.begin(), row.end(), grids[s].indices.begin() + static_cast<long>(t * D));
      const auto e = sum_codes(row, cb, D);
      std::copy(e.begin(), e.end(), previous.begin() + static_cast<long>(s * C));
      latents[s].insert(latents[s].end(), e.begin(), e.end());
    }
  }

  std::vector<GeneratedSample> out;
  for (std::size_t s = 0; s < S; ++s) {
    GeneratedSample g;
    g.motion = codec.decode_latent(latents[s], T, lip);
    g.grid = std::move(grids[s]);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace rvqmotion
