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

// Contrastive lip/signal synchronization scorers over short windows.
//
// Both variants encode each modality frame by frame with two centred
// convolutions. The fusion variant adds the two feature streams frame by
// frame, mixes, averages over the window and reads a linear score. The cosine
// variant pools each stream into a unit embedding and scores by dot product.

#include <algorithm>
#include <random>
#include <span>
#include <vector>

#include "rvqmotion/core/adam.hpp"
#include "rvqmotion/core/checkpoint.hpp"
#include "rvqmotion/core/log.hpp"
#include "rvqmotion/data/synthetic.hpp"
#include "rvqmotion/metrics/lip_error.hpp"

namespace rvqmotion {

enum class SyncVariant { kFusion = 1, kCosine = 2 };

inline SyncVariant parse_sync_variant(std::size_t v) {
  if (v == 1) return SyncVariant::kFusion;
  if (v == 2) return SyncVariant::kCosine;
  throw std::invalid_argument("sync variant must be 1 (fusion) or 2 (cosine), got " + std::to_string(v));
}

struct SyncConfig {
  SyncVariant variant = SyncVariant::kFusion;
  std::size_t lip_dims = 30;
  std::size_t signal_dim = 8;
  std::size_t window = 5;
  std::size_t width = 32;
  std::size_t embed = 32;
  double temperature = 0.07;  // cosine variant only; fusion scores are unbounded

  void validate() const {
    if (lip_dims == 0 || signal_dim == 0 || window == 0 || width == 0 || embed == 0) {
      throw std::invalid_argument("sync net sizes must be >= 1");
    }
    if (!(temperature > 0.0)) throw std::invalid_argument("sync temperature must be > 0");
  }
};

/// Copies frames [start, start + window) of a [T, dim] sequence, clamping
/// out-of-range frame indices to the sequence ends.
inline void append_window(std::vector<double>& out, std::span<const double> values, std::size_t frames,
                          std::size_t dim, long start, std::size_t window) {
  for (std::size_t k = 0; k < window; ++k) {
    const long t = std::clamp(start + static_cast<long>(k), 0L, static_cast<long>(frames) - 1);
    const auto* row = values.data() + static_cast<std::size_t>(t) * dim;
    out.insert(out.end(), row, row + dim);
  }
}

class SyncNet {
 public:
  SyncNet(const SyncConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t H = cfg.width;
    motion_[0] = Layer(LayerSpec::conv(cfg.lip_dims, H, 3, Padding::kSame), params_, "motion.0", rng);
    motion_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kSame), params_, "motion.1", rng);
    signal_[0] = Layer(LayerSpec::conv(cfg.signal_dim, H, 3, Padding::kSame), params_, "signal.0", rng);
    signal_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kSame), params_, "signal.1", rng);
    if (cfg.variant == SyncVariant::kFusion) {
      fuse_ = Layer(LayerSpec::dense(H, H), params_, "fusion.mix", rng);
      LayerSpec head = LayerSpec::dense(H, 1);
      head.zero_init = true;
      head_ = Layer(head, params_, "fusion.score", rng);
    } else {
      motion_proj_ = Layer(LayerSpec::dense(H, cfg.embed), params_, "motion.proj", rng);
      signal_proj_ = Layer(LayerSpec::dense(H, cfg.embed), params_, "signal.proj", rng);
    }
  }

  const SyncConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }

  /// Frame features of N windows: [N*W, lip_dims] -> [N*W, width].
  Tensor motion_features(const Tensor& x) const {
    return motion_[1].forward(leaky_relu(motion_[0].forward(x, cfg_.window)), cfg_.window);
  }
  Tensor signal_features(const Tensor& y) const {
    return signal_[1].forward(leaky_relu(signal_[0].forward(y, cfg_.window)), cfg_.window);
  }

  /// Scores of every (motion window, signal window) pair: [Nm, Na]. These are
  /// the InfoNCE logits before the temperature.
  Tensor score_matrix(const Tensor& motion, const Tensor& signal) const {
    const std::size_t W = cfg_.window, nm = motion.rows() / W, na = signal.rows() / W;
    const Tensor mf = motion_features(motion), sf = signal_features(signal);
    if (cfg_.variant == SyncVariant::kCosine) return matmul_nt(pool(mf, motion_proj_), pool(sf, signal_proj_));
    return reshape(fused_score(pairwise_add(mf, sf, W)), {nm, na});
  }

  /// Scores of aligned pairs, motion window i against signal window i.
  std::vector<double> score_pairs(const std::vector<double>& motion, const std::vector<double>& signal) const {
    NoGradGuard guard;
    const std::size_t W = cfg_.window, n = motion.size() / (W * cfg_.lip_dims);
    if (n == 0 || signal.size() != n * W * cfg_.signal_dim) throw ShapeError("sync scoring: window counts differ");
    const Tensor mf = motion_features(Tensor({n * W, cfg_.lip_dims}, motion));
    const Tensor sf = signal_features(Tensor({n * W, cfg_.signal_dim}, signal));
    if (cfg_.variant == SyncVariant::kFusion) return fused_score(add(mf, sf)).values();
    const Tensor a = pool(mf, motion_proj_), b = pool(sf, signal_proj_);
    std::vector<double> out(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < cfg_.embed; ++k) out[i] += a[i * cfg_.embed + k] * b[i * cfg_.embed + k];
    }
    return out;
  }

  /// Per-window motion embeddings used for distribution distances: [N, embed_width()].
  std::vector<double> embed_motion(const std::vector<double>& motion) const {
    NoGradGuard guard;
    const std::size_t n = motion.size() / (cfg_.window * cfg_.lip_dims);
    const Tensor mf = motion_features(Tensor({n * cfg_.window, cfg_.lip_dims}, motion));
    if (cfg_.variant == SyncVariant::kCosine) return pool(mf, motion_proj_).values();
    return segment_mean(mf, cfg_.window).values();
  }
  std::size_t embed_width() const { return cfg_.variant == SyncVariant::kCosine ? cfg_.embed : cfg_.width; }

  double logit_scale() const { return cfg_.variant == SyncVariant::kCosine ? 1.0 / cfg_.temperature : 1.0; }

  Checkpoint to_checkpoint(std::uint64_t seed = 0) const {
    return Checkpoint::capture("sync", architecture(), params_, seed);
  }

  std::map<std::string, std::string> architecture() const {
    return {{"variant", std::to_string(static_cast<int>(cfg_.variant))},
            {"lip_dims", std::to_string(cfg_.lip_dims)},
            {"signal_dim", std::to_string(cfg_.signal_dim)},
            {"window", std::to_string(cfg_.window)},
            {"width", std::to_string(cfg_.width)},
            {"embed", std::to_string(cfg_.embed)},
            {"temperature", std::to_string(cfg_.temperature)}};
  }

  static SyncNet from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "sync") {
      throw FormatError(FormatError::Kind::kInvalidContent, "expected a sync-net checkpoint, found '" + ck.kind + "'");
    }
    SyncConfig cfg;
    try {
      cfg.variant = parse_sync_variant(ck.arch_size("variant"));
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatError::Kind::kInvalidContent, e.what());
    }
    cfg.lip_dims = ck.arch_size("lip_dims");
    cfg.signal_dim = ck.arch_size("signal_dim");
    cfg.window = ck.arch_size("window");
    cfg.width = ck.arch_size("width");
    cfg.embed = ck.arch_size("embed");
    cfg.temperature = ck.arch_real("temperature");
    SyncNet net(cfg, ck.seed);
    ck.restore_into(net.params_);
    return net;
  }

 private:
  Tensor pool(const Tensor& features, const Layer& proj) const {
    return normalize_rows(proj.forward(segment_mean(features, cfg_.window)));
  }

  Tensor fused_score(const Tensor& fused) const {
    return head_.forward(segment_mean(leaky_relu(fuse_.forward(leaky_relu(fused))), cfg_.window));
  }

  SyncConfig cfg_;
  ParameterSet params_;
  Layer motion_[2];
  Layer signal_[2];
  Layer fuse_, head_;
  Layer motion_proj_, signal_proj_;
};

/// Mean of -log softmax(scale * scores)[i, i]: the InfoNCE loss where row i's
/// positive is column i and every other column is a negative.
inline Tensor info_nce(const Tensor& scores, double logit_scale) {
  if (scores.rows() != scores.cols()) throw ShapeError("InfoNCE needs a square score matrix");
  std::vector<int> diag(scores.rows());
  for (std::size_t i = 0; i < diag.size(); ++i) diag[i] = static_cast<int>(i);
  return cross_entropy(scale(scores, logit_scale), diag);
}

struct SyncTrainConfig {
  std::size_t epochs = 30;
  std::size_t clips_per_batch = 16;
  std::size_t windows_per_clip = 4;  // consecutive starts, so in-clip negatives are 1..3 frame shifts
  double lr = 1e-3;
  double final_lr_fraction = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
};

/// Lip-coordinate and signal sequences of one clip.
struct SyncClip {
  std::vector<double> lip;  // [T, lip_dims]
  const SignalSequence* signal = nullptr;
  std::size_t frames = 0;
};

inline std::vector<SyncClip> sync_clips(const Corpus& corpus, std::span<const std::size_t> clips) {
  std::vector<SyncClip> out;
  for (std::size_t c : clips) {
    const Clip& clip = corpus.clips.at(c);
    out.push_back({lip_coordinates(clip.motion, corpus.lip), &clip.signal, clip.motion.frames});
  }
  return out;
}

/// InfoNCE training: each batch holds `clips_per_batch` clips with
/// `windows_per_clip` consecutive windows each, so every positive meets
/// cross-clip negatives and 1-frame-shifted negatives from its own clip.
inline std::vector<double> train_sync_net(SyncNet& net, const std::vector<SyncClip>& clips, const SyncTrainConfig& cfg,
                                          const LogSink& log = {}) {
  const SyncConfig& sc = net.config();
  const std::size_t W = sc.window, per = cfg.windows_per_clip;
  if (cfg.clips_per_batch == 0 || per == 0) throw std::invalid_argument("sync batch sizes must be >= 1");
  if (cfg.clips_per_batch > clips.size()) {
    throw std::invalid_argument("sync batch of " + std::to_string(cfg.clips_per_batch) + " clips exceeds the " +
                                std::to_string(clips.size()) + " available");
  }
  for (const auto& c : clips) {
    if (c.frames < W + per - 1) throw std::invalid_argument("clip too short for the sync window layout");
  }
  std::mt19937_64 rng(cfg.seed);
  AdamConfig adam{.lr = cfg.lr, .clip_norm = cfg.clip_norm};
  std::vector<std::size_t> order(clips.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<double> history;
  ParameterSet& params = net.params();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    adam.lr = cosine_lr(cfg.lr, cfg.final_lr_fraction, epoch, cfg.epochs);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + cfg.clips_per_batch <= order.size(); start += cfg.clips_per_batch) {
      std::vector<double> motion, signal;
      for (std::size_t b = 0; b < cfg.clips_per_batch; ++b) {
        const SyncClip& c = clips[order[start + b]];
        std::uniform_int_distribution<long> first(0, static_cast<long>(c.frames - W - (per - 1)));
        const long s = first(rng);
        for (std::size_t k = 0; k < per; ++k) {
          append_window(motion, c.lip, c.frames, sc.lip_dims, s + static_cast<long>(k), W);
          append_window(signal, c.signal->values, c.frames, sc.signal_dim, s + static_cast<long>(k), W);
        }
      }
      const std::size_t n = cfg.clips_per_batch * per;
      const Tensor loss = info_nce(
          net.score_matrix(Tensor({n * W, sc.lip_dims}, motion), Tensor({n * W, sc.signal_dim}, signal)),
          net.logit_scale());
      if (!std::isfinite(loss.item())) {
        LogRecord("diverged").kv("stage", "sync").kv("epoch", epoch).emit(log);
        throw DivergenceError("sync-net training produced a non-finite loss", epoch);
      }
      params.zero_grad();
      backward(loss);
      try {
        adam_step(params, adam);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("sync-net training: ") + e.what(), epoch);
      }
      total += loss.item();
      ++batches;
    }
    history.push_back(total / static_cast<double>(batches));
    LogRecord("epoch")
        .kv("stage", "sync")
        .kv("variant", static_cast<int>(sc.variant))
        .kv("epoch", epoch + 1)
        .kv("loss", history.back())
        .emit(log);
  }
  return history;
}

/// Lip and signal windows of every start 0..T-W, motion frames shifted by `shift`.
inline std::pair<std::vector<double>, std::vector<double>> sliding_windows(std::span<const double> lip,
                                                                           const SignalSequence& signal,
                                                                           std::size_t lip_dims, std::size_t window,
                                                                           long shift = 0) {
  std::vector<double> motion, sig;
  const std::size_t T = signal.frames;
  const long first = std::max(0L, -shift), last = static_cast<long>(T) - static_cast<long>(window) - std::max(0L, shift);
  for (long t = first; t <= last; ++t) {
    append_window(motion, lip, T, lip_dims, t + shift, window);
    append_window(sig, signal.values, T, signal.dim, t, window);
  }
  return {motion, sig};
}

/// Mean aligned score of a clip's lip motion against its driving signal;
/// `shift` offsets the motion by that many frames.
inline double sync_score(const SyncNet& net, std::span<const double> lip, const SignalSequence& signal, long shift = 0) {
  const auto [motion, sig] = sliding_windows(lip, signal, net.config().lip_dims, net.config().window, shift);
  if (motion.empty()) throw std::invalid_argument("clip shorter than the sync window");
  const auto scores = net.score_pairs(motion, sig);
  double total = 0.0;
  for (double s : scores) total += s;
  return total / static_cast<double>(scores.size());
}

}  // namespace rvqmotion
