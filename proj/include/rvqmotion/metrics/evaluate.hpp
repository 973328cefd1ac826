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

// Evaluation table: for every generation method, lip errors over a sample
// set, per-frame sample variance, both sync scores and sync-embedding FDs,
// and style similarity, rank and FD.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rvqmotion/metrics/frechet.hpp"
#include "rvqmotion/metrics/lip_error.hpp"
#include "rvqmotion/metrics/style.hpp"
#include "rvqmotion/metrics/syncnet.hpp"
#include "rvqmotion/sampling/generate.hpp"

namespace rvqmotion {

struct EvalMethod {
  std::string tag;
  SamplingConfig sampling;
  bool constant_style = false;      // condition on an all-zero reference instead of the speaker's clip
  const ArModel* model = nullptr;   // overrides the evaluation's model (e.g. a distilled student)
};

struct EvalConfig {
  std::size_t samples = 100;  // |S| per driving signal
  std::size_t clips = 0;      // evenly spaced clips of the split to evaluate; 0 = all
  std::uint64_t seed = 1;     // other-speaker draws
};

struct EvalModels {
  const Codec* codec = nullptr;
  const ArModel* model = nullptr;
  const SyncNet* sync_fusion = nullptr;
  const SyncNet* sync_cosine = nullptr;
  const StyleNet* style = nullptr;
  const SyncNet* rejection = nullptr;  // scorer for syncnet-rejection methods
};

struct MetricRow {
  std::string method;
  std::string metric;
  double value = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;

  void add(const std::string& method, const std::string& metric, double value) {
    rows.push_back({method, metric, value});
  }

  double get(const std::string& method, const std::string& metric) const {
    for (const auto& r : rows) {
      if (r.method == method && r.metric == metric) return r.value;
    }
    throw std::out_of_range("no metric " + method + "/" + metric + " in the report");
  }

  std::string table() const {
    int wm = 8, wk = 8;
    for (const auto& r : rows) {
      wm = std::max(wm, static_cast<int>(r.method.size()) + 2);
      wk = std::max(wk, static_cast<int>(r.metric.size()) + 2);
    }
    std::ostringstream os;
    os << std::left << std::setw(wm) << "method" << std::setw(wk) << "metric" << "value\n";
    for (const auto& r : rows) {
      os << std::left << std::setw(wm) << r.method << std::setw(wk) << r.metric << std::setprecision(6) << r.value
         << '\n';
    }
    return os.str();
  }

  std::string key_values() const {
    std::ostringstream os;
    os << std::setprecision(10);
    for (const auto& r : rows) os << "eval." << r.method << '.' << r.metric << '=' << r.value << '\n';
    return os.str();
  }
};

namespace detail {

inline void append(std::vector<double>& out, const std::vector<double>& more) {
  out.insert(out.end(), more.begin(), more.end());
}

inline std::vector<double> window_embeddings(const SyncNet& net, const MotionSequence& m,
                                             const std::vector<std::uint32_t>& lip, const SignalSequence& signal) {
  const auto [motion, sig] =
      sliding_windows(lip_coordinates(m, lip), signal, net.config().lip_dims, net.config().window);
  return net.embed_motion(motion);
}

}  // namespace detail

/// Evaluates every method on `clips` (driving signal plus the fixed
/// same-speaker reference of each clip).
inline EvalReport evaluate(const EvalModels& m, const Corpus& corpus, std::span<const std::size_t> split_clips,
                           const std::vector<EvalMethod>& methods, const EvalConfig& cfg, const LogSink& log = {}) {
  if (cfg.samples == 0) throw std::invalid_argument("evaluation needs at least one sample per signal");
  const std::size_t n_clips = cfg.clips ? std::min(cfg.clips, split_clips.size()) : split_clips.size();
  if (n_clips < 2) throw std::invalid_argument("evaluation needs at least 2 clips");
  // Evenly spaced so that a subset still covers every speaker of the split.
  std::vector<std::size_t> clips(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) clips[i] = split_clips[i * split_clips.size() / n_clips];
  const auto& lip = corpus.lip;
  const StyleNet& style = *m.style;

  // Real-data statistics shared by every method. Frechet distances compare
  // every clip of the split with every generated sample.
  std::vector<double> real_fusion, real_cosine, real_style_rows;
  for (std::size_t c : split_clips) {
    const Clip& clip = corpus.clips[c];
    detail::append(real_style_rows, style.embed(clip.motion));
    detail::append(real_fusion, detail::window_embeddings(*m.sync_fusion, clip.motion, lip, clip.signal));
    detail::append(real_cosine, detail::window_embeddings(*m.sync_cosine, clip.motion, lip, clip.signal));
  }
  std::vector<std::vector<double>> real_style(n_clips);
  double gt_sync_fusion = 0.0, gt_sync_cosine = 0.0, gt_own = 0.0, gt_other = 0.0;
  std::mt19937_64 rng(cfg.seed);
  // Other-speaker clip per evaluated clip: from the split when it holds
  // another speaker, otherwise from the whole corpus.
  std::vector<std::vector<double>> other_style(n_clips);
  for (std::size_t i = 0; i < n_clips; ++i) {
    const Clip& c = corpus.clips[clips[i]];
    real_style[i] = style.embed(c.motion);
    const auto coords = lip_coordinates(c.motion, lip);
    gt_sync_fusion += sync_score(*m.sync_fusion, coords, c.signal) / static_cast<double>(n_clips);
    gt_sync_cosine += sync_score(*m.sync_cosine, coords, c.signal) / static_cast<double>(n_clips);
    std::vector<std::size_t> others;
    for (std::size_t j : split_clips) {
      if (corpus.clips[j].speaker != c.speaker) others.push_back(j);
    }
    if (others.empty()) {
      for (std::size_t j = 0; j < corpus.clips.size(); ++j) {
        if (corpus.clips[j].speaker != c.speaker) others.push_back(j);
      }
    }
    if (others.empty()) throw std::invalid_argument("evaluation needs a corpus with at least 2 speakers");
    const std::size_t o = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    other_style[i] = style.embed(corpus.clips[o].motion);
  }
  for (std::size_t i = 0; i < n_clips; ++i) {
    const auto ref = style.embed(corpus.clips[corpus.fixed_reference_for(clips[i])].motion);
    gt_own += cosine(real_style[i], ref) / static_cast<double>(n_clips);
    gt_other += cosine(real_style[i], other_style[i]) / static_cast<double>(n_clips);
  }
  EvalReport report;
  report.add("ground_truth", "sync_fusion", gt_sync_fusion);
  report.add("ground_truth", "sync_cosine", gt_sync_cosine);
  report.add("ground_truth", "style_sim_own", gt_own);
  report.add("ground_truth", "style_sim_other", gt_other);
  report.add("ground_truth", "style_rank_chance", (static_cast<double>(style.config().speakers) + 2.0) / 2.0);

  for (const EvalMethod& method : methods) {
    const auto start = std::chrono::steady_clock::now();
    const ArModel& model = method.model ? *method.model : *m.model;
    double vertex = 0.0, cover = 0.0, mean_err = 0.0, variance = 0.0, sync_f = 0.0, sync_c = 0.0;
    double own = 0.0, other_sim = 0.0, rank = 0.0;
    std::vector<double> gen_fusion, gen_cosine, gen_style;
    const double per_clip = 1.0 / static_cast<double>(n_clips);
    for (std::size_t i = 0; i < n_clips; ++i) {
      const Clip& c = corpus.clips[clips[i]];
      const auto& ref = corpus.clips[corpus.fixed_reference_for(clips[i])].motion;
      const std::vector<double> zero(ref.values.size(), 0.0);
      SamplingConfig sc = method.sampling;
      sc.seed = method.sampling.seed * 1000003u + clips[i];
      const auto generated = generate(model, *m.codec, c.signal, method.constant_style ? zero : ref.values,
                                      ref.frames, sc, cfg.samples, lip, m.rejection);
      std::vector<MotionSequence> set;
      set.reserve(generated.size());
      for (const auto& g : generated) set.push_back(g.motion);

      vertex += lip_vertex_error(c.motion, set.front(), lip) * per_clip;
      cover += coverage_error(c.motion, set, lip) * per_clip;
      mean_err += mean_estimate_error(c.motion, set, lip) * per_clip;
      variance += sample_variance(set) * per_clip;
      const double per_sample = per_clip / static_cast<double>(set.size());
      for (const auto& s : set) {
        const auto coords = lip_coordinates(s, lip);
        sync_f += sync_score(*m.sync_fusion, coords, c.signal) * per_sample;
        sync_c += sync_score(*m.sync_cosine, coords, c.signal) * per_sample;
        const auto e = style.embed(s);
        own += cosine(e, real_style[i]) * per_sample;
        other_sim += cosine(e, other_style[i]) * per_sample;
        if (!style.centroids.empty()) rank += static_cast<double>(style.rank(e, real_style[i])) * per_sample;
        detail::append(gen_style, e);
        detail::append(gen_fusion, detail::window_embeddings(*m.sync_fusion, s, lip, c.signal));
        detail::append(gen_cosine, detail::window_embeddings(*m.sync_cosine, s, lip, c.signal));
      }
    }
    const std::string& t = method.tag;
    report.add(t, "lip_vertex", vertex);
    report.add(t, "lip_cover", cover);
    report.add(t, "lip_mean", mean_err);
    report.add(t, "sample_variance", variance);
    report.add(t, "sync_fusion", sync_f);
    report.add(t, "sync_cosine", sync_c);
    report.add(t, "sync_fusion_fd", frechet_distance(real_fusion, gen_fusion, m.sync_fusion->embed_width()));
    report.add(t, "sync_cosine_fd", frechet_distance(real_cosine, gen_cosine, m.sync_cosine->embed_width()));
    report.add(t, "style_sim_own", own);
    report.add(t, "style_sim_other", other_sim);
    if (!style.centroids.empty()) report.add(t, "style_rank", rank);
    report.add(t, "style_fd", frechet_distance(real_style_rows, gen_style, style.config().embed));
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report.add(t, "seconds", seconds);
    LogRecord("eval").kv("method", t).kv("clips", n_clips).kv("samples", cfg.samples).kv("seconds", seconds).emit(log);
  }
  return report;
}

}  // namespace rvqmotion
