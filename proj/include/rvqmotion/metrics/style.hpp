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

// Speaking-style recognizer: the codec encoder layout with centred
// convolutions, mean-pooled to a unit embedding, trained as a speaker
// classifier with additive angular margin logits.

#include <algorithm>
#include <random>
#include <span>
#include <vector>

#include "rvqmotion/core/adam.hpp"
#include "rvqmotion/core/checkpoint.hpp"
#include "rvqmotion/core/log.hpp"
#include "rvqmotion/data/synthetic.hpp"

namespace rvqmotion {

struct StyleConfig {
  std::size_t vertices = 20;
  std::size_t width = 64;
  std::size_t embed = 32;
  std::size_t speakers = 48;  // classes: the training speakers
  double margin = 0.3;
  double scale = 16.0;

  void validate() const {
    if (vertices == 0 || width == 0 || embed == 0) throw std::invalid_argument("style net sizes must be >= 1");
    if (speakers < 2) throw std::invalid_argument("style recognition needs at least 2 training speakers");
  }
};

struct StyleTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 32;
  double lr = 1e-3;
  double final_lr_fraction = 0.1;
  double clip_norm = 1.0;
  std::uint64_t seed = 1;
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(std::max(aa * bb, 1e-300));
}

class StyleNet {
 public:
  StyleNet(const StyleConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t H = cfg.width;
    enc_[0] = Layer(LayerSpec::conv(3 * cfg.vertices, H, 1, Padding::kSame), params_, "enc.0", rng);
    enc_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kSame), params_, "enc.1", rng);
    enc_[2] = Layer(LayerSpec::conv(H, cfg.embed, 3, Padding::kSame), params_, "enc.2", rng);
    classes_ = &params_.add_uniform("classes", {cfg.speakers, cfg.embed}, 1.0, rng);
  }

  const StyleConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }

  /// Unit embeddings of B clips of T frames: [B*T, 3V] -> [B, embed].
  Tensor embed(const Tensor& x, std::size_t frames) const {
    Tensor h = leaky_relu(enc_[0].forward(x, frames));
    h = leaky_relu(enc_[1].forward(h, frames));
    return normalize_rows(segment_mean(enc_[2].forward(h, frames), frames));
  }

  std::vector<double> embed(const MotionSequence& m) const {
    NoGradGuard guard;
    if (m.vertices != cfg_.vertices) throw ShapeError("style net: vertex count differs");
    return embed(m.tensor(), m.frames).values();
  }

  Tensor loss(const Tensor& x, std::size_t frames, std::span<const int> labels) const {
    const Tensor cos = matmul_nt(embed(x, frames), normalize_rows(classes_->value));
    return cross_entropy(angular_margin_logits(cos, labels, cfg_.margin, cfg_.scale), labels);
  }

  std::map<std::string, std::string> architecture() const {
    return {{"vertices", std::to_string(cfg_.vertices)}, {"width", std::to_string(cfg_.width)},
            {"embed", std::to_string(cfg_.embed)},       {"speakers", std::to_string(cfg_.speakers)},
            {"margin", std::to_string(cfg_.margin)},     {"scale", std::to_string(cfg_.scale)}};
  }

  /// Checkpoint with the unit centroid of every training speaker appended.
  Checkpoint to_checkpoint(std::uint64_t seed = 0) const {
    ParameterSet with_centroids;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      with_centroids.add(params_[i].name, params_[i].value.shape(), params_[i].value.values());
    }
    with_centroids.add("centroids", {cfg_.speakers, cfg_.embed},
                       centroids.empty() ? std::vector<double>(cfg_.speakers * cfg_.embed, 0.0) : centroids);
    return Checkpoint::capture("style", architecture(), with_centroids, seed);
  }

  static StyleNet from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "style") {
      throw FormatError(FormatError::Kind::kInvalidContent, "expected a style-net checkpoint, found '" + ck.kind + "'");
    }
    StyleConfig cfg;
    cfg.vertices = ck.arch_size("vertices");
    cfg.width = ck.arch_size("width");
    cfg.embed = ck.arch_size("embed");
    cfg.speakers = ck.arch_size("speakers");
    cfg.margin = ck.arch_real("margin");
    cfg.scale = ck.arch_real("scale");
    StyleNet net(cfg, ck.seed);
    ParameterSet all;
    for (std::size_t i = 0; i < net.params_.size(); ++i) {
      all.add(net.params_[i].name, net.params_[i].value.shape(), net.params_[i].value.values());
    }
    all.add("centroids", {cfg.speakers, cfg.embed}, std::vector<double>(cfg.speakers * cfg.embed, 0.0));
    ck.restore_into(all);
    for (std::size_t i = 0; i < net.params_.size(); ++i) {
      const auto src = all[i].value.data();
      std::copy(src.begin(), src.end(), net.params_[i].value.mutable_data().begin());
    }
    net.centroids = all.get("centroids").value.values();
    if (std::all_of(net.centroids.begin(), net.centroids.end(), [](double v) { return v == 0.0; })) net.centroids.clear();
    return net;
  }

  /// Unit centroids of the training speakers, row-major [speakers, embed].
  std::vector<double> centroids;

  /// 1 + number of training-speaker centroids more similar to `query` than
  /// `target` is. 1 is best; uniform chance is (speakers + 2) / 2.
  std::size_t rank(std::span<const double> query, std::span<const double> target) const {
    if (centroids.empty()) throw std::logic_error("style net has no speaker centroids");
    const double own = cosine(query, target);
    std::size_t better = 0;
    for (std::size_t s = 0; s < cfg_.speakers; ++s) {
      if (cosine(query, std::span<const double>(centroids).subspan(s * cfg_.embed, cfg_.embed)) > own) ++better;
    }
    return better + 1;
  }

 private:
  StyleConfig cfg_;
  ParameterSet params_;
  Layer enc_[3];
  Parameter* classes_ = nullptr;
};

/// Trains on `clips`, classes are the distinct speakers in order of first
/// appearance, then stores their embedding centroids.
inline std::vector<double> train_style_net(StyleNet& net, const Corpus& corpus, std::span<const std::size_t> clips,
                                           const StyleTrainConfig& cfg, const LogSink& log = {}) {
  std::vector<std::size_t> speakers;
  std::vector<int> label(corpus.clips.size(), -1);
  for (std::size_t c : clips) {
    const std::size_t s = corpus.clips.at(c).speaker;
    auto it = std::find(speakers.begin(), speakers.end(), s);
    if (it == speakers.end()) {
      speakers.push_back(s);
      it = speakers.end() - 1;
    }
    label[c] = static_cast<int>(it - speakers.begin());
  }
  if (speakers.size() < 2) throw std::invalid_argument("style training needs clips from at least 2 speakers");
  if (speakers.size() != net.config().speakers) {
    throw std::invalid_argument("style net has " + std::to_string(net.config().speakers) + " classes but the clips hold " +
                                std::to_string(speakers.size()) + " speakers");
  }
  const std::size_t T = corpus.frames(), W = 3 * corpus.vertices();
  std::mt19937_64 rng(cfg.seed);
  AdamConfig adam{.lr = cfg.lr, .clip_norm = cfg.clip_norm};
  std::vector<std::size_t> order(clips.begin(), clips.end());
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    adam.lr = cosine_lr(cfg.lr, cfg.final_lr_fraction, epoch, cfg.epochs);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<double> x;
      std::vector<int> y;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& m = corpus.clips[order[start + i]].motion;
        x.insert(x.end(), m.values.begin(), m.values.end());
        y.push_back(label[order[start + i]]);
      }
      const Tensor loss = net.loss(Tensor({n * T, W}, x), T, y);
      if (!std::isfinite(loss.item())) throw DivergenceError("style-net training produced a non-finite loss", epoch);
      net.params().zero_grad();
      backward(loss);
      try {
        adam_step(net.params(), adam);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("style-net training: ") + e.what(), epoch);
      }
      total += loss.item();
      ++batches;
    }
    history.push_back(total / static_cast<double>(batches));
    LogRecord("epoch").kv("stage", "style").kv("epoch", epoch + 1).kv("loss", history.back()).emit(log);
  }

  const std::size_t E = net.config().embed;
  net.centroids.assign(speakers.size() * E, 0.0);
  for (std::size_t c : clips) {
    const auto e = net.embed(corpus.clips[c].motion);
    for (std::size_t k = 0; k < E; ++k) net.centroids[static_cast<std::size_t>(label[c]) * E + k] += e[k];
  }
  for (std::size_t s = 0; s < speakers.size(); ++s) {
    double norm = 0.0;
    for (std::size_t k = 0; k < E; ++k) norm += net.centroids[s * E + k] * net.centroids[s * E + k];
    norm = std::sqrt(std::max(norm, 1e-300));
    for (std::size_t k = 0; k < E; ++k) net.centroids[s * E + k] /= norm;
  }
  return history;
}

}  // namespace rvqmotion
