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

#include <cmath>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "rvqmotion/ar/model.hpp"
#include "rvqmotion/codec/codec.hpp"
#include "rvqmotion/core/adam.hpp"

namespace rvqmotion {

struct ArTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 16;
  double lr = 1e-3;
  double final_lr_fraction = 0.1;
  double clip_norm = 1.0;
  // Boltzmann sampling of quantizer indices when building targets; the
  // temperature is in squared latent distance units.
  bool stochastic_codes = false;
  double code_temperature = 0.01;
  // Label smoothing toward every code whose residual distance is within
  // `soft_radius` of the selected one.
  bool soft_targets = false;
  double soft_radius = 0.1;
  double soft_mass = 0.1;
  std::uint64_t seed = 1;
  // With validation clips: finish with the parameters of the epoch that had
  // the lowest validation cross-entropy.
  bool keep_best_val = true;
};

struct ArEpochStats {
  double loss = 0.0;
  double val_ce = std::numeric_limits<double>::quiet_NaN();
};

/// Throws CodecMismatchError if the codec's geometry differs from the model's.
inline void check_codec_geometry(const ArModel& model, const Codec& codec) {
  const ArConfig& a = model.config();
  const CodecConfig& c = codec.config();
  if (a.code_dim != c.code_dim || a.codebook_size != c.codebook_size || a.depth != c.depth ||
      a.vertices != c.vertices) {
    throw CodecMismatchError("codec geometry (code_dim, codebook size, depth, vertices) does not match the model");
  }
}

/// Grid for `latent` [T, C] with Boltzmann-sampled indices at every depth.
inline CodeGrid stochastic_grid(std::span<const double> latent, std::size_t frames, const CodebookView& cb,
                                std::size_t depth, double temperature, std::mt19937_64& rng) {
  CodeGrid grid(frames, depth, cb.size());
  for (std::size_t t = 0; t < frames; ++t) {
    const auto r = rvq_quantize_stochastic(latent.subspan(t * cb.dim, cb.dim), cb, depth, temperature, rng);
    for (std::size_t d = 0; d < depth; ++d) grid.indices[t * depth + d] = r.indices[d];
  }
  return grid;
}

/// Smoothed targets [T*D, |C|] along the residual path of `grid`.
inline std::vector<double> soft_code_targets(std::span<const double> latent, const CodeGrid& grid,
                                             const CodebookView& cb, double radius, double mass) {
  const std::size_t K = cb.size(), C = cb.dim;
  std::vector<double> out(grid.frames * grid.depth * K, 0.0);
  std::vector<double> dist(K);
  for (std::size_t t = 0; t < grid.frames; ++t) {
    std::vector<double> residual(latent.begin() + static_cast<long>(t * C), latent.begin() + static_cast<long>((t + 1) * C));
    for (std::size_t d = 0; d < grid.depth; ++d) {
      const auto j = static_cast<std::size_t>(grid.at(t, d));
      for (std::size_t i = 0; i < K; ++i) dist[i] = std::sqrt(squared_distance(residual.data(), cb.code(i), C));
      double* row = out.data() + (t * grid.depth + d) * K;
      std::size_t near = 0;
      for (std::size_t i = 0; i < K; ++i) near += dist[i] <= dist[j] + radius ? 1 : 0;
      if (near <= 1) {
        row[j] = 1.0;
      } else {
        for (std::size_t i = 0; i < K; ++i) {
          if (dist[i] <= dist[j] + radius) row[i] = mass / static_cast<double>(near);
        }
        row[j] += 1.0 - mass;
      }
      const double* e = cb.code(j);
      for (std::size_t k = 0; k < C; ++k) residual[k] -= e[k];
    }
  }
  return out;
}

/// Greedy code grids of a set of clips under a frozen codec.
struct QuantizedCorpus {
  std::vector<std::size_t> clips;
  std::vector<std::vector<double>> latents;  // per clip [T, C]
  std::vector<CodeGrid> grids;
};

inline QuantizedCorpus quantize_clips(const Codec& codec, const Corpus& corpus, std::span<const std::size_t> clips) {
  QuantizedCorpus q;
  for (std::size_t c : clips) {
    const MotionSequence& m = corpus.clips.at(c).motion;
    q.clips.push_back(c);
    q.latents.push_back(codec.encode(m));
    q.grids.push_back(codec.quantize(q.latents.back(), m.frames).grid);
  }
  return q;
}

/// Mean per-position cross-entropy (nats) on `clips` with greedy grids and
/// each clip's fixed reference.
inline double ar_cross_entropy(const ArModel& model, const Codec& codec, const Corpus& corpus,
                               std::span<const std::size_t> clips, std::size_t batch_size = 16) {
  NoGradGuard guard;
  const QuantizedCorpus q = quantize_clips(codec, corpus, clips);
  const CodebookView cb = codec.codebook();
  double total = 0.0;
  std::size_t positions = 0;
  for (std::size_t start = 0; start < q.clips.size(); start += batch_size) {
    std::vector<ArExample> examples;
    for (std::size_t i = start; i < std::min(q.clips.size(), start + batch_size); ++i) {
      const auto& ref = corpus.clips[corpus.fixed_reference_for(q.clips[i])].motion;
      examples.push_back({&corpus.clips[q.clips[i]].signal, &ref.values, ref.frames, &q.grids[i], &q.grids[i], nullptr});
    }
    const ArBatch batch = make_batch(examples, cb);
    total += model.loss(batch).item() * static_cast<double>(batch.targets.size());
    positions += batch.targets.size();
  }
  return total / static_cast<double>(positions);
}

/// Teacher-forced cross-entropy training of the AR model on a frozen codec.
/// Records the codec checksum in the model. A non-finite loss or gradient
/// rolls back to the last good epoch and throws DivergenceError.
inline std::vector<ArEpochStats> train_ar(ArModel& model, const Codec& codec, const Corpus& corpus,
                                          std::span<const std::size_t> clips, const ArTrainConfig& cfg,
                                          std::span<const std::size_t> val_clips = {}, const LogSink& log = {}) {
  check_codec_geometry(model, codec);
  if (corpus.signal_dim() != model.config().signal_dim) throw ShapeError("corpus signal dimension does not match the model");
  std::vector<ArEpochStats> history;
  model.codec_checksum = codec.checksum();
  if (cfg.epochs == 0) return history;
  if (clips.empty()) throw std::invalid_argument("AR training needs at least one clip");

  const QuantizedCorpus q = quantize_clips(codec, corpus, clips);
  const CodebookView cb = codec.codebook();
  const std::size_t D = model.config().depth;
  std::mt19937_64 rng(cfg.seed);
  GuardedAdam opt(model.params(), AdamConfig{.lr = cfg.lr, .clip_norm = cfg.clip_norm}, cfg.final_lr_fraction,
                  cfg.epochs, "ar", log);
  std::vector<std::size_t> order(q.clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  ParameterSet best;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    opt.begin_epoch(epoch);
    ArEpochStats stats;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<CodeGrid> grids;
      std::vector<std::vector<double>> soft;
      grids.reserve(n);
      soft.reserve(n);
      std::vector<std::size_t> refs;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = order[start + i];
        const std::size_t T = q.grids[k].frames;
        grids.push_back(cfg.stochastic_codes
                            ? stochastic_grid(q.latents[k], T, cb, D, cfg.code_temperature, rng)
                            : q.grids[k]);
        if (cfg.soft_targets) soft.push_back(soft_code_targets(q.latents[k], grids.back(), cb, cfg.soft_radius, cfg.soft_mass));
        refs.push_back(corpus.reference_for(q.clips[k], rng));
      }
      std::vector<ArExample> examples;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& ref = corpus.clips[refs[i]].motion;
        examples.push_back({&corpus.clips[q.clips[order[start + i]]].signal, &ref.values, ref.frames, &grids[i],
                            &grids[i], cfg.soft_targets ? &soft[i] : nullptr});
      }
      stats.loss += opt.step(model.loss(make_batch(examples, cb)));
      ++batches;
    }
    stats.loss /= static_cast<double>(batches);
    if (!val_clips.empty()) stats.val_ce = ar_cross_entropy(model, codec, corpus, val_clips);
    opt.end_epoch();
    LogRecord rec("epoch");
    rec.kv("stage", "ar").kv("epoch", epoch + 1).kv("loss", stats.loss);
    if (!val_clips.empty()) rec.kv("val_ce", stats.val_ce);
    rec.emit(log);
    history.push_back(stats);
    if (cfg.keep_best_val && stats.val_ce < best_val) {
      best_val = stats.val_ce;
      best_epoch = epoch + 1;
      best = ParameterSet();
      for (std::size_t i = 0; i < model.params().size(); ++i) {
        const Parameter& p = model.params()[i];
        best.add(p.name, p.value.shape(), p.value.values());
      }
    }
  }
  if (best.size() != 0 && best_epoch != cfg.epochs) {
    model.params().copy_values_from(best);
    LogRecord("restored").kv("stage", "ar").kv("epoch", best_epoch).kv("val_ce", best_val).emit(log);
  }
  return history;
}

}  // namespace rvqmotion
