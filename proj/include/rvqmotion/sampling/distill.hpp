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

// Distillation of aggregated sampling into a single-pass student.
//
// Relabeling, per clip:
//   1. temporal context of the teacher over the ground-truth grid (teacher forcing)
//   2. N code rows per frame from the teacher's depth stage, sampled freely
//   3. aggregation of each frame's candidates, re-quantized to legal codes
// The student sees the ground-truth grid at its temporal stage and the
// relabeled grid as both depth-stage input and target. Labels are redrawn
// every epoch.

#include <functional>
#include <random>
#include <vector>

#include "rvqmotion/ar/train.hpp"
#include "rvqmotion/sampling/generate.hpp"

namespace rvqmotion {

struct DistillConfig {
  SamplingConfig aggregation{.strategy = Strategy::kAverage, .n = 20};
  ArTrainConfig train;
};

struct DistillItem {
  const SignalSequence* signal = nullptr;
  const std::vector<double>* reference = nullptr;
  std::size_t ref_frames = 0;
  const CodeGrid* truth = nullptr;
};

/// Steps 1-3 for one clip. `scorer` is required for rejection aggregation;
/// it sees the ground-truth latents as the history of each frame.
inline CodeGrid relabel(const ArModel& teacher, const CodebookView& cb, const DistillItem& item,
                        const SamplingConfig& agg, std::mt19937_64& rng, const CandidateScorer* scorer = nullptr) {
  NoGradGuard guard;
  const ArConfig& ac = teacher.config();
  const std::size_t T = item.truth->frames, D = ac.depth, N = agg.n, M = T * N, C = cb.dim;
  if (agg.strategy == Strategy::kSyncReject && scorer == nullptr) {
    throw std::invalid_argument("rejection relabeling needs a sync network");
  }
  const ArBatch batch = make_batch({ArExample{item.signal, item.reference, item.ref_frames, item.truth, item.truth, nullptr}}, cb);
  const Tensor audio = teacher.encode_audio(Tensor({T, ac.signal_dim}, batch.signal), T);
  const Tensor style = teacher.encode_style(Tensor({item.ref_frames, 3 * ac.vertices}, batch.reference), item.ref_frames);
  const Tensor context = teacher.temporal(audio, style, Tensor({T, C}, batch.history), 1, T);

  std::vector<RowRef> spread(M);
  for (std::size_t m = 0; m < M; ++m) spread[m] = RowRef{0, m / N};
  const Tensor rows = gather_rows({context}, spread);
  const Tensor styles = gather_rows({style}, std::vector<RowRef>(M, RowRef{0, 0}));
  std::vector<int> codes(M * D);
  std::vector<double> embeds(M * C, 0.0), partial;
  for (std::size_t d = 0; d < D; ++d) {
    const Tensor logits = teacher.depth_step(rows, styles, partial, d + 1);
    const std::size_t K = logits.cols();
    for (std::size_t m = 0; m < M; ++m) {
      const int j = sample_index(logits.data().subspan(m * K, K), agg.temperature, rng);
      codes[m * D + d] = j;
      const double* e = cb.code(static_cast<std::size_t>(j));
      for (std::size_t c = 0; c < C; ++c) embeds[m * C + c] += e[c];
    }
    std::vector<double> next;
    next.reserve(M * (d + 1) * C);
    for (std::size_t m = 0; m < M; ++m) {
      next.insert(next.end(), partial.begin() + static_cast<long>(m * d * C), partial.begin() + static_cast<long>((m + 1) * d * C));
      next.insert(next.end(), embeds.begin() + static_cast<long>(m * C), embeds.begin() + static_cast<long>((m + 1) * C));
    }
    partial = std::move(next);
  }

  CodeGrid out(T, D, cb.size());
  for (std::size_t t = 0; t < T; ++t) {
    const std::span<const double> mine(embeds.data() + t * N * C, N * C);
    const std::span<const int> my_codes(codes.data() + t * N * D, N * D);
    std::optional<std::vector<double>> scores;
    if (agg.strategy == Strategy::kSyncReject) scores = scorer->score(batch.history, t, mine);
    const auto row = aggregate_candidates(agg, mine, my_codes, cb, D, scores ? &*scores : nullptr);
    std::copy(row.begin(), row.end(), out.indices.begin() + static_cast<long>(t * D));
  }
  return out;
}

/// Trains `student` on relabeled targets. `items(epoch, rng)` supplies the
/// epoch's clips; `on_epoch` (optional) sees the student after every epoch.
inline std::vector<double> distill_student(
    ArModel& student, const ArModel& teacher, const CodebookView& cb,
    const std::function<std::vector<DistillItem>(std::size_t, std::mt19937_64&)>& items, const DistillConfig& cfg,
    const LogSink& log = {}, const std::function<void(std::size_t, const ArModel&)>& on_epoch = {},
    const std::function<const CandidateScorer*(const DistillItem&)>& scorer_for = {}) {
  cfg.aggregation.validate(teacher.config().depth);
  if (cfg.aggregation.depth_limit != 0 && cfg.aggregation.depth_limit != teacher.config().depth) {
    throw std::invalid_argument("distillation relabels every depth; depth_limit must be 0");
  }
  std::mt19937_64 rng(cfg.train.seed);
  std::mt19937_64 sample_stream = sample_rng(cfg.aggregation.seed, 0);
  GuardedAdam opt(student.params(), AdamConfig{.lr = cfg.train.lr, .clip_norm = cfg.train.clip_norm},
                  cfg.train.final_lr_fraction, cfg.train.epochs, "distill", log);
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    opt.begin_epoch(epoch);
    std::vector<DistillItem> epoch_items = items(epoch, rng);
    std::shuffle(epoch_items.begin(), epoch_items.end(), rng);
    std::vector<CodeGrid> labels;
    labels.reserve(epoch_items.size());
    for (const auto& item : epoch_items) {
      labels.push_back(relabel(teacher, cb, item, cfg.aggregation, sample_stream, scorer_for ? scorer_for(item) : nullptr));
    }
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < epoch_items.size(); start += cfg.train.batch) {
      std::vector<ArExample> examples;
      for (std::size_t i = start; i < std::min(epoch_items.size(), start + cfg.train.batch); ++i) {
        const DistillItem& it = epoch_items[i];
        examples.push_back({it.signal, it.reference, it.ref_frames, it.truth, &labels[i], nullptr});
      }
      total += opt.step(student.loss(make_batch(examples, cb)));
      ++batches;
    }
    opt.end_epoch();
    history.push_back(total / static_cast<double>(batches));
    LogRecord("epoch").kv("stage", "distill").kv("epoch", epoch + 1).kv("loss", history.back()).emit(log);
    if (on_epoch) on_epoch(epoch, student);
  }
  return history;
}

/// Corpus-level distillation: returns a freshly initialised student trained
/// on `clips` against the teacher's aggregated samples.
inline ArModel distill(const ArModel& teacher, const Codec& codec, const Corpus& corpus,
                       std::span<const std::size_t> clips, const DistillConfig& cfg, const SyncNet* sync = nullptr,
                       const LogSink& log = {}, std::uint64_t student_seed = 7) {
  check_codec_geometry(teacher, codec);
  teacher.require_codec(codec.checksum());
  if (cfg.aggregation.strategy == Strategy::kSyncReject && sync == nullptr) {
    throw std::invalid_argument("syncnet-rejection distillation needs a trained sync network");
  }
  if (clips.empty()) throw std::invalid_argument("distillation needs at least one clip");
  ArModel student(teacher.config(), student_seed);
  student.codec_checksum = teacher.codec_checksum;
  const QuantizedCorpus q = quantize_clips(codec, corpus, clips);
  std::vector<std::unique_ptr<CandidateScorer>> scorers;
  if (sync) {
    for (std::size_t c : q.clips) scorers.push_back(std::make_unique<CandidateScorer>(*sync, codec, corpus.clips[c].signal, corpus.lip));
  }
  auto items = [&](std::size_t, std::mt19937_64& rng) {
    std::vector<DistillItem> out;
    for (std::size_t i = 0; i < q.clips.size(); ++i) {
      const auto& ref = corpus.clips[corpus.reference_for(q.clips[i], rng)].motion;
      out.push_back({&corpus.clips[q.clips[i]].signal, &ref.values, ref.frames, &q.grids[i]});
    }
    return out;
  };
  auto scorer_for = [&](const DistillItem& item) -> const CandidateScorer* {
    if (scorers.empty()) return nullptr;
    const std::size_t i = static_cast<std::size_t>(item.truth - q.grids.data());
    return scorers[i].get();
  };
  distill_student(student, teacher, codec.codebook(), items, cfg, log, {}, scorer_for);
  return student;
}

}  // namespace rvqmotion
