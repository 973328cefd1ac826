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

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>
#include <random>

#include "rvqmotion/metrics/frechet.hpp"
#include "rvqmotion/metrics/lip_error.hpp"
#include "rvqmotion/metrics/style.hpp"
#include "rvqmotion/metrics/syncnet.hpp"

namespace rvqmotion {
namespace {

MotionSequence random_motion(std::size_t frames, std::size_t vertices, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  MotionSequence m(frames, vertices);
  for (double& v : m.values) v = n01(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Lip errors

TEST(LipError, HandExample) {
  MotionSequence x(2, 1), xh(2, 1);
  x.at(1, 2) = 3.0;
  xh.at(0, 2) = 1.0;
  xh.at(1, 2) = 1.0;
  const std::vector<std::uint32_t> lip{0};
  EXPECT_EQ(lip_vertex_error(x, xh, lip), 2.0);
  EXPECT_EQ(lip_vertex_error(xh, x, lip), 2.0);
  EXPECT_EQ(lip_vertex_error(x, x, lip), 0.0);
}

TEST(LipError, OnlyLipVerticesCount) {
  MotionSequence x(3, 4), xh(3, 4);
  xh.at(1, 3 * 3 + 1) = 10.0;  // vertex 3, outside the lip set
  xh.at(2, 3 * 1) = 0.25;
  const std::vector<std::uint32_t> lip{0, 1};
  EXPECT_EQ(lip_vertex_error(x, xh, lip), 0.25);
}

TEST(LipError, RejectsShapeMismatchAndEmptySets) {
  MotionSequence a(3, 2), b(4, 2);
  const std::vector<std::uint32_t> lip{0};
  EXPECT_THROW(lip_vertex_error(a, b, lip), ShapeError);
  EXPECT_THROW(lip_vertex_error(a, a, std::vector<std::uint32_t>{}), std::invalid_argument);
  EXPECT_THROW(coverage_error(a, std::vector<MotionSequence>{}, lip), std::invalid_argument);
  EXPECT_THROW(mean_estimate_error(a, std::vector<MotionSequence>{}, lip), std::invalid_argument);
}

TEST(LipError, CoverageIsTheClosestSample) {
  MotionSequence x(1, 1), far(1, 1), near(1, 1);
  far.at(0, 0) = 2.0;
  near.at(0, 1) = -0.5;
  const std::vector<std::uint32_t> lip{0};
  const std::vector<MotionSequence> set{far, near};
  EXPECT_EQ(coverage_error(x, set, lip), 0.5);
  const std::vector<MotionSequence> with_truth{far, x};
  EXPECT_EQ(coverage_error(x, with_truth, lip), 0.0);
}

TEST(LipError, DeterministicGeneratorMakesAllThreeEqual) {
  std::mt19937_64 rng(3);
  const std::vector<std::uint32_t> lip{0, 2, 3};
  for (int trial = 0; trial < 50; ++trial) {
    const MotionSequence x = random_motion(7, 5, rng), xh = random_motion(7, 5, rng);
    const std::vector<MotionSequence> set(1 + trial % 5, xh);
    const double v = lip_vertex_error(x, xh, lip);
    EXPECT_EQ(coverage_error(x, set, lip), v);
    EXPECT_EQ(mean_estimate_error(x, set, lip), v);
  }
}

TEST(LipError, MirrorPairHasZeroMeanErrorButPositiveCoverage) {
  // Quarter-integer values keep the mirrored mean exact.
  MotionSequence x(4, 2), plus(4, 2), minus(4, 2);
  for (std::size_t i = 0; i < x.values.size(); ++i) {
    x.values[i] = 0.25 * static_cast<double>(i % 7);
    const double delta = 0.5 * static_cast<double>(1 + i % 3);
    plus.values[i] = x.values[i] + delta;
    minus.values[i] = x.values[i] - delta;
  }
  const std::vector<std::uint32_t> lip{0, 1};
  const std::vector<MotionSequence> set{plus, minus};
  EXPECT_EQ(mean_estimate_error(x, set, lip), 0.0);
  EXPECT_GT(coverage_error(x, set, lip), 0.0);
}

TEST(LipError, CoverageNeverGrowsWithTheSampleSet) {
  std::mt19937_64 rng(17);
  const std::vector<std::uint32_t> lip{1, 2};
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t frames = 1 + rng() % 6;
    const MotionSequence x = random_motion(frames, 3, rng);
    std::vector<MotionSequence> set;
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 8; ++k) {
      set.push_back(random_motion(frames, 3, rng));
      const double cover = coverage_error(x, set, lip);
      ASSERT_LE(cover, previous);
      for (const auto& s : set) ASSERT_LE(cover, lip_vertex_error(x, s, lip));
      previous = cover;
    }
  }
}

TEST(LipError, SampleVarianceOfIdenticalSamplesIsZero) {
  std::mt19937_64 rng(2);
  const MotionSequence m = random_motion(5, 3, rng);
  EXPECT_EQ(sample_variance(std::vector<MotionSequence>(4, m)), 0.0);
  MotionSequence a(1, 1), b(1, 1);
  a.values = {1.0, 1.0, 1.0};
  b.values = {3.0, 3.0, 3.0};
  EXPECT_DOUBLE_EQ(sample_variance(std::vector<MotionSequence>{a, b}), 2.0);
}

// ---------------------------------------------------------------------------
// Frechet distance

std::vector<double> gaussian_rows(std::size_t n, std::size_t width, std::mt19937_64& rng, double shift = 0.0) {
  std::normal_distribution<double> n01(0.0, 1.0);
  // Correlated rows: a fixed mixing of white noise.
  std::vector<double> out(n * width);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> z(width);
    for (double& v : z) v = n01(rng);
    for (std::size_t c = 0; c < width; ++c) {
      out[i * width + c] = shift + z[c] + 0.5 * z[(c + 1) % width];
    }
  }
  return out;
}

// Independent form: tr(A) + tr(B) - 2 * sum of sqrt(eigenvalues of A B).
double frechet_oracle(const GaussianStats& a, const GaussianStats& b) {
  const Eigen::MatrixXd prod = a.covariance * b.covariance;
  Eigen::EigenSolver<Eigen::MatrixXd> es(prod);
  double root_trace = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    root_trace += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
  }
  return (a.mean - b.mean).squaredNorm() + a.covariance.trace() + b.covariance.trace() - 2.0 * root_trace;
}

TEST(Frechet, IdenticalSetsHaveZeroDistance) {
  std::mt19937_64 rng(5);
  for (std::size_t width : {1u, 4u, 16u}) {
    const auto rows = gaussian_rows(600, width, rng);
    EXPECT_LE(std::abs(frechet_distance(rows, rows, width)), 1e-8) << width;
  }
}

TEST(Frechet, OneDimensionalClosedForm) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> a(0.0, 1.0), b(3.0, 1.0);
  std::vector<double> xa(10000), xb(10000);
  for (double& v : xa) v = a(rng);
  for (double& v : xb) v = b(rng);
  EXPECT_NEAR(frechet_distance(xa, xb, 1), 9.0, 0.05 * 9.0);
  // Exact 1-D form on the sample statistics.
  const GaussianStats sa = gaussian_stats(xa, 1), sb = gaussian_stats(xb, 1);
  const double da = sa.mean(0) - sb.mean(0);
  const double ds = std::sqrt(sa.covariance(0, 0)) - std::sqrt(sb.covariance(0, 0));
  EXPECT_NEAR(frechet_distance(sa, sb), da * da + ds * ds, 1e-9);
}

TEST(Frechet, MatchesEigenvalueOracleAndIsSymmetric) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t width = 1 + rng() % 8;
    const auto x = gaussian_rows(200, width, rng), y = gaussian_rows(150, width, rng, 0.3 * trial);
    const GaussianStats a = gaussian_stats(x, width), b = gaussian_stats(y, width);
    const double fd = frechet_distance(a, b);
    EXPECT_NEAR(fd, frechet_oracle(a, b), 1e-8 * std::max(1.0, fd));
    EXPECT_NEAR(fd, frechet_distance(b, a), 1e-9 * std::max(1.0, fd));
    EXPECT_GE(fd, -1e-8);
  }
}

TEST(Frechet, DiagonalCovariancesReduceToStdDifferences) {
  GaussianStats a{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Zero(3, 3)};
  GaussianStats b{Eigen::VectorXd::Constant(3, 1.0), Eigen::MatrixXd::Zero(3, 3)};
  a.covariance.diagonal() << 1.0, 4.0, 9.0;
  b.covariance.diagonal() << 4.0, 4.0, 1.0;
  // 3 + (1-2)^2 + 0 + (3-1)^2
  EXPECT_NEAR(frechet_distance(a, b), 8.0, 1e-12);
}

TEST(Frechet, RejectsBadInputs) {
  const std::vector<double> one{1.0, 2.0};
  EXPECT_THROW(gaussian_stats(one, 2), std::invalid_argument);
  std::mt19937_64 rng(1);
  const auto x = gaussian_rows(10, 2, rng), y = gaussian_rows(10, 3, rng);
  EXPECT_THROW(frechet_distance(gaussian_stats(x, 2), gaussian_stats(y, 3)), ShapeError);
}

// ---------------------------------------------------------------------------
// Sync networks

TEST(SyncNet, InfoNceAtUniformLogitsIsLogBatch) {
  const Tensor zeros({64, 64}, std::vector<double>(64 * 64, 0.0));
  EXPECT_NEAR(info_nce(zeros, 1.0 / 0.07).item(), std::log(64.0), 1e-12);
}

TEST(SyncNet, FreshFusionNetGivesUniformLoss) {
  SyncConfig cfg;
  cfg.variant = SyncVariant::kFusion;
  SyncNet net(cfg, 3);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  std::vector<double> motion(64 * cfg.window * cfg.lip_dims), signal(64 * cfg.window * cfg.signal_dim);
  for (double& v : motion) v = n01(rng);
  for (double& v : signal) v = n01(rng);
  const Tensor scores = net.score_matrix(Tensor({64 * cfg.window, cfg.lip_dims}, motion),
                                         Tensor({64 * cfg.window, cfg.signal_dim}, signal));
  EXPECT_NEAR(info_nce(scores, net.logit_scale()).item(), std::log(64.0), 1e-12);
}

TEST(SyncNet, CosineScoresAreBounded) {
  SyncConfig cfg;
  cfg.variant = SyncVariant::kCosine;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> wide(0.0, 5.0);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyncNet net(cfg, seed);
    std::vector<double> motion(20 * cfg.window * cfg.lip_dims), signal(20 * cfg.window * cfg.signal_dim);
    for (double& v : motion) v = wide(rng);
    for (double& v : signal) v = wide(rng);
    for (double s : net.score_pairs(motion, signal)) {
      EXPECT_GE(s, -1.0 - 1e-12);
      EXPECT_LE(s, 1.0 + 1e-12);
    }
  }
}

TEST(SyncNet, PairScoresMatchTheScoreMatrixDiagonal) {
  for (auto variant : {SyncVariant::kFusion, SyncVariant::kCosine}) {
    SyncConfig cfg;
    cfg.variant = variant;
    SyncNet net(cfg, 2);
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (std::size_t i = 0; i < net.params().size(); ++i) {
      for (double& v : net.params()[i].value.mutable_data()) v += u(rng);
    }
    std::normal_distribution<double> n01;
    std::vector<double> motion(6 * cfg.window * cfg.lip_dims), signal(6 * cfg.window * cfg.signal_dim);
    for (double& v : motion) v = n01(rng);
    for (double& v : signal) v = n01(rng);
    NoGradGuard guard;
    const Tensor m = net.score_matrix(Tensor({6 * cfg.window, cfg.lip_dims}, motion),
                                      Tensor({6 * cfg.window, cfg.signal_dim}, signal));
    const auto pairs = net.score_pairs(motion, signal);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(pairs[i], m[i * 6 + i], 1e-12);
  }
}

TEST(SyncNet, CheckpointRoundTrip) {
  SyncConfig cfg;
  cfg.variant = SyncVariant::kCosine;
  SyncNet net(cfg, 5);
  const auto bytes = net.to_checkpoint(5).serialize();
  const SyncNet back = SyncNet::from_checkpoint(Checkpoint::deserialize(ByteReader(bytes, "memory")));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::vector<double> motion(3 * cfg.window * cfg.lip_dims), signal(3 * cfg.window * cfg.signal_dim);
  for (double& v : motion) v = n01(rng);
  for (double& v : signal) v = n01(rng);
  EXPECT_EQ(net.score_pairs(motion, signal), back.score_pairs(motion, signal));
  EXPECT_EQ(back.config().variant, SyncVariant::kCosine);
}

TEST(SyncNet, WindowsClampAtClipEdges) {
  const std::vector<double> values{0.0, 1.0, 2.0};
  std::vector<double> out;
  append_window(out, values, 3, 1, -2, 5);
  EXPECT_EQ(out, (std::vector<double>{0.0, 0.0, 0.0, 1.0, 2.0}));
}

TEST(SyncNet, RejectsBatchLargerThanCorpus) {
  CorpusConfig cc;
  cc.speakers = 4;
  cc.clips_per_speaker = 2;
  const Corpus corpus = generate_corpus(cc);
  std::vector<std::size_t> all(corpus.clips.size());
  std::iota(all.begin(), all.end(), 0);
  SyncNet net(SyncConfig{}, 1);
  SyncTrainConfig tc;
  tc.epochs = 1;
  EXPECT_THROW(train_sync_net(net, sync_clips(corpus, all), tc), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Style recognition

TEST(Style, SelfSimilarityIsOneAndCentroidRanksFirst) {
  StyleConfig cfg;
  cfg.speakers = 4;
  cfg.embed = 3;
  StyleNet net(cfg, 1);
  net.centroids = {1, 0, 0, 0, 1, 0, 0, 0, 1, 0.6, 0.8, 0};
  const std::vector<double> q{0.6, 0.8, 0.0};
  EXPECT_DOUBLE_EQ(cosine(q, q), 1.0);
  EXPECT_EQ(net.rank(q, std::span<const double>(net.centroids).subspan(9, 3)), 1u);
  // Target = speaker 0 centroid: speakers 1 and 3 are more similar to q.
  EXPECT_EQ(net.rank(q, std::span<const double>(net.centroids).subspan(0, 3)), 3u);
}

TEST(Style, CheckpointKeepsCentroids) {
  StyleConfig cfg;
  cfg.speakers = 3;
  StyleNet net(cfg, 2);
  net.centroids.assign(cfg.speakers * cfg.embed, 0.0);
  for (std::size_t i = 0; i < net.centroids.size(); ++i) net.centroids[i] = 0.01 * static_cast<double>(i);
  const auto bytes = net.to_checkpoint(2).serialize();
  const StyleNet back = StyleNet::from_checkpoint(Checkpoint::deserialize(ByteReader(bytes, "memory")));
  EXPECT_EQ(back.centroids, net.centroids);
  std::mt19937_64 rng(3);
  const MotionSequence m = random_motion(16, cfg.vertices, rng);
  EXPECT_EQ(back.embed(m), net.embed(m));
}

TEST(Style, RejectsSingleSpeaker) {
  StyleConfig cfg;
  cfg.speakers = 1;
  EXPECT_THROW(StyleNet(cfg, 1), std::invalid_argument);
}

TEST(Style, TrainedNetSeparatesHeldOutSpeakers) {
  CorpusConfig cc;
  cc.speakers = 16;
  cc.clips_per_speaker = 8;
  const Corpus corpus = generate_corpus(cc);
  const auto train = corpus.indices(Split::kTrain);
  const auto test = corpus.indices(Split::kTest);
  ASSERT_FALSE(test.empty());
  StyleConfig sc;
  sc.speakers = corpus.speakers_in(Split::kTrain).size();
  StyleNet net(sc, 1);
  StyleTrainConfig tc;
  tc.epochs = 15;
  train_style_net(net, corpus, train, tc);
  double same = 0.0, other = 0.0;
  std::size_t ns = 0, no = 0;
  for (std::size_t a : test) {
    for (std::size_t b : test) {
      if (a == b) continue;
      const double s = cosine(net.embed(corpus.clips[a].motion), net.embed(corpus.clips[b].motion));
      if (corpus.clips[a].speaker == corpus.clips[b].speaker) {
        same += s;
        ++ns;
      } else {
        other += s;
        ++no;
      }
    }
  }
  EXPECT_GT(same / static_cast<double>(ns), other / static_cast<double>(no));
}

}  // namespace
}  // namespace rvqmotion
