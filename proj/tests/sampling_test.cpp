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

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "ar_fixtures.hpp"
#include "rvqmotion/sampling/distill.hpp"
#include "sampling_fixtures.hpp"

namespace rvqmotion {
namespace {

using namespace rvqmotion::testing;

// ---------------------------------------------------------------------------
// Aggregation algebra

TEST(Aggregate, ScalarExamples) {
  const std::vector<double> e{1.0, 1.1, 5.0};
  EXPECT_DOUBLE_EQ(knn_aggregate(e, 1, 0, 2)[0], 1.05);
  EXPECT_NEAR(average_aggregate(e, 1)[0], 7.1 / 3.0, 1e-15);
  EXPECT_NEAR(average_aggregate(e, 1)[0], 2.3667, 1e-4);
  EXPECT_DOUBLE_EQ(knn_aggregate(e, 1, 0, 1)[0], 1.0);  // only the anchor itself
  EXPECT_DOUBLE_EQ(knn_aggregate(e, 1, 2, 2)[0], 3.05);
}

TEST(Aggregate, IdenticalCandidatesAggregateToThemselves) {
  const std::vector<double> same{0.5, -2.0, 0.5, -2.0, 0.5, -2.0, 0.5, -2.0};
  EXPECT_EQ(average_aggregate(same, 2), (std::vector<double>{0.5, -2.0}));
  EXPECT_EQ(knn_aggregate(same, 2, 1, 2), (std::vector<double>{0.5, -2.0}));
}

TEST(Aggregate, KnnWithKEqualNIsAverageExactly) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 1 + rng() % 40, width = 1 + rng() % 16;
    const auto cands = random_values(n * width, rng);
    const std::size_t anchor = rng() % n;
    ASSERT_EQ(knn_aggregate(cands, width, anchor, n), average_aggregate(cands, width)) << trial;
  }
}

TEST(Aggregate, AverageOfOneIsIdentity) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const auto cand = random_values(1 + rng() % 16, rng);
    ASSERT_EQ(average_aggregate(cand, cand.size()), cand);
  }
}

TEST(Aggregate, RejectionKeepingEverythingIsAverageExactly) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng() % 30, width = 1 + rng() % 8;
    const auto cands = random_values(n * width, rng);
    const auto scores = random_values(n, rng);
    ASSERT_EQ(syncnet_reject(cands, width, scores, 1.0), average_aggregate(cands, width));
  }
}

TEST(Aggregate, HalfOfOneHundredSurvives) {
  std::mt19937_64 rng(4);
  const auto scores = random_values(100, rng);
  const auto kept = top_scoring(scores, 0.5);
  ASSERT_EQ(kept.size(), 50u);
  double kept_mean = 0.0;
  for (std::size_t i : kept) kept_mean += scores[i] / 50.0;
  const double all_mean = std::accumulate(scores.begin(), scores.end(), 0.0) / 100.0;
  EXPECT_GE(kept_mean, all_mean);
  double worst_kept = 1e300, best_dropped = -1e300;
  for (std::size_t i = 0; i < 100; ++i) {
    if (std::find(kept.begin(), kept.end(), i) != kept.end()) {
      worst_kept = std::min(worst_kept, scores[i]);
    } else {
      best_dropped = std::max(best_dropped, scores[i]);
    }
  }
  EXPECT_GE(worst_kept, best_dropped);
}

TEST(Aggregate, SurvivorCountIsCeilingAndTiesFavourLowerIndex) {
  const std::vector<double> tied{1.0, 2.0, 2.0, 2.0, 0.0};
  EXPECT_EQ(top_scoring(tied, 0.4), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_scoring(tied, 0.41).size(), 3u);
  EXPECT_EQ(top_scoring(tied, 1e-9).size(), 1u);
}

TEST(Aggregate, KeepBestSelectsTheTopCandidate) {
  const std::vector<double> cands{0.0, 0.0, 1.0, 1.0, 2.0, 2.0};
  const std::vector<double> scores{0.1, 0.9, 0.5};
  EXPECT_EQ(syncnet_reject(cands, 2, scores, 0.5, true), (std::vector<double>{1.0, 1.0}));
  EXPECT_EQ(syncnet_reject(cands, 2, scores, 0.5, false), (std::vector<double>{1.5, 1.5}));
}

TEST(Aggregate, ConfigValidation) {
  SamplingConfig c;
  EXPECT_NO_THROW(c.validate(4));
  c.n = 3;
  EXPECT_THROW(c.validate(4), std::invalid_argument);  // default draws a single candidate
  c.strategy = Strategy::kKnn;
  c.k = 4;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
  c.k = 3;
  EXPECT_NO_THROW(c.validate(4));
  c.keep_fraction = 0.0;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
  c.keep_fraction = 1.0;
  c.depth_limit = 5;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
  c.depth_limit = 4;
  c.temperature = -1.0;
  EXPECT_THROW(c.validate(4), std::invalid_argument);
  EXPECT_THROW(parse_strategy("beam"), std::invalid_argument);
  for (auto s : {Strategy::kDefault, Strategy::kKnn, Strategy::kAverage, Strategy::kSyncReject}) {
    EXPECT_EQ(parse_strategy(strategy_name(s)), s);
  }
}

TEST(Aggregate, RequantizeReusesAMatchingCandidate) {
  // Two codes that sum to the same point as a third: reuse must keep the
  // candidate's own indices rather than the greedy ones.
  const std::vector<double> codes{1.0, 0.0, 0.0, 0.0, 0.9, 0.0};
  const CodebookView cb{codes, 2};
  const std::vector<double> cand{1.0, 0.0, 1.9, 0.0};
  const std::vector<int> cand_codes{1, 0, 2, 0};
  EXPECT_EQ(requantize(std::vector<double>{1.0, 0.0}, cand, cand_codes, cb, 2), (std::vector<int>{1, 0}));
  EXPECT_EQ(requantize(std::vector<double>{1.45, 0.0}, cand, cand_codes, cb, 2),
            rvq_quantize(std::vector<double>{1.45, 0.0}, cb, 2).indices);
}

// ---------------------------------------------------------------------------
// Generation on a tiny random model

SyncNet tiny_sync(SyncVariant v) {
  SyncConfig c;
  c.variant = v;
  c.lip_dims = 3;
  c.signal_dim = 2;
  c.width = 8;
  c.embed = 8;
  SyncNet net(c, 4);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (std::size_t i = 0; i < net.params().size(); ++i) {
    for (double& v : net.params()[i].value.mutable_data()) v += u(rng);
  }
  return net;
}

TEST(Generate, GreedyIsAPureFunction) {
  const TinyPipeline s;
  SamplingConfig a{.temperature = 0.0, .seed = 1};
  SamplingConfig b{.temperature = 0.0, .seed = 99};
  const auto x = s.run(a, 2), y = s.run(b, 1);
  EXPECT_EQ(x[0].grid.indices, y[0].grid.indices);
  EXPECT_EQ(x[1].grid.indices, y[0].grid.indices);
  EXPECT_EQ(x[0].motion.values, y[0].motion.values);
}

TEST(Generate, GreedyAggregationOfIdenticalCandidatesIsGreedyDecoding) {
  const TinyPipeline s;
  const auto plain = s.run(SamplingConfig{.temperature = 0.0}, 1);
  for (auto strategy : {Strategy::kAverage, Strategy::kKnn}) {
    const auto agg = s.run(SamplingConfig{.strategy = strategy, .n = 5, .k = 2, .temperature = 0.0}, 1);
    EXPECT_EQ(agg[0].grid.indices, plain[0].grid.indices);
  }
}

TEST(Generate, SeedsAndSamplesDiffer) {
  const TinyPipeline s(16);
  const auto a = s.run(SamplingConfig{.seed = 1}, 3);
  const auto b = s.run(SamplingConfig{.seed = 2}, 1);
  EXPECT_NE(a[0].grid.indices, b[0].grid.indices);
  EXPECT_NE(a[0].grid.indices, a[1].grid.indices);
  // Sample s does not depend on how many samples are drawn with it.
  const auto c = s.run(SamplingConfig{.seed = 1}, 1);
  EXPECT_EQ(a[0].grid.indices, c[0].grid.indices);
}

TEST(Generate, EveryStrategyEmitsLegalCodes) {
  const TinyPipeline s;
  const SyncNet sync = tiny_sync(SyncVariant::kFusion);
  const std::vector<SamplingConfig> configs{
      {.strategy = Strategy::kDefault},
      {.strategy = Strategy::kKnn, .n = 6, .k = 3},
      {.strategy = Strategy::kAverage, .n = 6},
      {.strategy = Strategy::kSyncReject, .n = 6, .keep_fraction = 0.5},
      {.strategy = Strategy::kSyncReject, .n = 6, .keep_best = true},
  };
  for (const auto& cfg : configs) {
    for (const auto& g : s.run(cfg, 2, &sync)) {
      ASSERT_EQ(g.grid.frames, s.signal.frames);
      ASSERT_EQ(g.motion.frames, s.signal.frames);
      for (int j : g.grid.indices) {
        ASSERT_GE(j, 0);
        ASSERT_LT(j, 3);
      }
    }
  }
}

TEST(Generate, AggregatedHistoryIsTheDecodedLatent) {
  const TinyPipeline s;
  const auto out = s.run(SamplingConfig{.strategy = Strategy::kAverage, .n = 5}, 1);
  const MotionSequence again = s.codec.decode(out[0].grid, 0, s.lip);
  EXPECT_EQ(again.values, out[0].motion.values);
}

TEST(Generate, DepthPassesMatchTheOperationCount) {
  const TinyPipeline s;
  const std::size_t T = s.signal.frames;
  s.model.reset_depth_passes();
  s.run(SamplingConfig{}, 3);
  EXPECT_EQ(s.model.depth_passes(), 3 * T * 2);
  s.model.reset_depth_passes();
  s.run(SamplingConfig{.strategy = Strategy::kAverage, .n = 7}, 2);
  EXPECT_EQ(s.model.depth_passes(), 2 * 7 * T * 2);
}

TEST(Generate, TruncationNeverTouchesDeeperCodes) {
  const TinyPipeline s;
  s.model.reset_depth_passes();
  const auto out = s.run(SamplingConfig{.strategy = Strategy::kAverage, .n = 4, .depth_limit = 1}, 2);
  EXPECT_EQ(s.model.depth_passes(), 2 * 4 * s.signal.frames * 1);
  EXPECT_EQ(out[0].grid.depth, 1u);
  const MotionSequence again = s.codec.decode(out[0].grid, 1, s.lip);
  EXPECT_EQ(again.values, out[0].motion.values);
}

TEST(Generate, RejectsBadRequests) {
  const TinyPipeline s;
  EXPECT_THROW(s.run(SamplingConfig{.strategy = Strategy::kSyncReject, .n = 4}, 1), std::invalid_argument);
  EXPECT_THROW(s.run(SamplingConfig{.n = 4}, 1), std::invalid_argument);
  EXPECT_THROW(s.run(SamplingConfig{.depth_limit = 3}, 1), std::invalid_argument);
  const Codec other(CodecConfig{.vertices = 2, .code_dim = 2, .codebook_size = 3, .depth = 2}, 4);
  EXPECT_THROW(generate(s.model, other, s.signal, s.reference, s.ref_frames, SamplingConfig{}, 1, s.lip),
               CodecMismatchError);
}

TEST(Generate, CandidateScoresDependOnlyOnTheTrailingWindow) {
  const TinyPipeline s(12);
  const SyncNet sync = tiny_sync(SyncVariant::kCosine);
  const CandidateScorer scorer(sync, s.codec, s.signal, s.lip);
  std::mt19937_64 rng(5);
  const auto history = random_values(12 * 2, rng);
  const auto cands = random_values(4 * 2, rng);
  const auto scores = scorer.score(history, 8, cands);
  ASSERT_EQ(scores.size(), 4u);
  for (double v : scores) {
    EXPECT_GE(v, -1.0 - 1e-12);
    EXPECT_LE(v, 1.0 + 1e-12);
  }
  // Frames at or after t in the history buffer are never read.
  auto changed = history;
  for (std::size_t i = 8 * 2; i < changed.size(); ++i) changed[i] += 3.0;
  EXPECT_EQ(scorer.score(changed, 8, cands), scores);
}

// ---------------------------------------------------------------------------
// Distillation on the enumerable tiny model (T = 1, D = 2, |C| = 3)

TEST(Distill, StudentApproachesTheTeacherAndRunsOnePassPerCell) {
  const TinyPipeline s(1);
  const CodebookView cb = s.codec.codebook();
  const auto target = grid_distribution(s.model, cb, s.signal, s.reference, s.ref_frames);

  ArModel student(s.model.config(), 77);
  student.codec_checksum = s.model.codec_checksum;
  const CodeGrid truth(1, 2, 3);
  auto items = [&](std::size_t, std::mt19937_64&) {
    return std::vector<DistillItem>(4096, DistillItem{&s.signal, &s.reference, s.ref_frames, &truth});
  };
  DistillConfig cfg;
  cfg.aggregation = SamplingConfig{.strategy = Strategy::kAverage, .n = 1};
  cfg.train.epochs = 8;
  cfg.train.batch = 256;
  cfg.train.lr = 2e-3;
  std::vector<double> kls{kl(target, grid_distribution(student, cb, s.signal, s.reference, s.ref_frames))};
  distill_student(student, s.model, cb, items, cfg, {}, [&](std::size_t, const ArModel& st) {
    kls.push_back(kl(target, grid_distribution(st, cb, s.signal, s.reference, s.ref_frames)));
  });
  for (std::size_t i = 1; i < kls.size(); ++i) EXPECT_LT(kls[i], kls[i - 1]) << "checkpoint " << i << " " << ::testing::PrintToString(kls);
  EXPECT_LT(kls.back(), 0.25 * kls.front());

  const TinyPipeline gen(6);
  student.reset_depth_passes();
  generate(student, gen.codec, gen.signal, gen.reference, gen.ref_frames, SamplingConfig{}, 1, gen.lip);
  EXPECT_EQ(student.depth_passes(), 6u * 2u);
}

TEST(Distill, RelabelingWithOneGreedyCandidateIsTheTeacherArgmax) {
  const TinyPipeline s(5);
  const CodebookView cb = s.codec.codebook();
  CodeGrid truth(5, 2, 3);
  for (std::size_t i = 0; i < truth.indices.size(); ++i) truth.indices[i] = static_cast<int>(i % 3);
  std::mt19937_64 rng(1);
  const DistillItem item{&s.signal, &s.reference, s.ref_frames, &truth};
  const CodeGrid a = relabel(s.model, cb, item, SamplingConfig{.strategy = Strategy::kAverage, .n = 1, .temperature = 0},
                             rng);
  const CodeGrid b = relabel(s.model, cb, item, SamplingConfig{.strategy = Strategy::kAverage, .n = 4, .temperature = 0},
                             rng);
  EXPECT_EQ(a.indices, b.indices);
  // Each relabeled frame is the greedy depth-stage row under a teacher-forced context.
  NoGradGuard guard;
  const ArBatch batch = make_batch({ArExample{&s.signal, &s.reference, s.ref_frames, &truth, &a, nullptr}}, cb);
  const Tensor logits = s.model.forward(batch);
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.data().subspan(r * 3, 3);
    const int arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    EXPECT_EQ(arg, a.indices[r]);
  }
}

TEST(Distill, RejectsForeignCodecAndMissingSyncNet) {
  const TinyPipeline s(4);
  CorpusConfig cc;
  cc.speakers = 2;
  cc.clips_per_speaker = 2;
  cc.vertices = 2;
  cc.signal_dim = 2;
  cc.frames = 4;
  const Corpus corpus = generate_corpus(cc);
  const std::vector<std::size_t> clips{0, 1};
  const Codec other(CodecConfig{.vertices = 2, .code_dim = 2, .codebook_size = 3, .depth = 2}, 8);
  EXPECT_THROW(distill(s.model, other, corpus, clips, DistillConfig{}), CodecMismatchError);
  DistillConfig rej;
  rej.aggregation = SamplingConfig{.strategy = Strategy::kSyncReject, .n = 4};
  EXPECT_THROW(distill(s.model, s.codec, corpus, clips, rej), std::invalid_argument);
}

}  // namespace
}  // namespace rvqmotion
