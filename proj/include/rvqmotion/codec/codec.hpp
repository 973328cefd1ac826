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

// Causal convolutional autoencoder with a residual-quantized bottleneck.
//
//   encoder: conv k=1 (3V -> hidden), conv k=3 causal, conv k=3 causal (-> code_dim)
//   decoder: conv k=3 causal (code_dim -> hidden), conv k=3 causal, conv k=1 (-> 3V)
//
// with leaky rectification between layers.

#include <algorithm>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "rvqmotion/codec/rvq.hpp"
#include "rvqmotion/core/adam.hpp"
#include "rvqmotion/core/checkpoint.hpp"
#include "rvqmotion/core/log.hpp"
#include "rvqmotion/data/synthetic.hpp"

namespace rvqmotion {

struct CodecConfig {
  std::size_t vertices = 20;
  std::size_t code_dim = 16;
  std::size_t codebook_size = 32;
  std::size_t depth = 4;
  std::size_t hidden = 0;  // 0 selects 8 * code_dim

  std::size_t hidden_width() const { return hidden ? hidden : 8 * code_dim; }

  void validate() const {
    if (vertices == 0 || code_dim == 0 || depth == 0) throw std::invalid_argument("codec sizes must be >= 1");
    if (codebook_size < 2 || codebook_size > 65536) throw std::invalid_argument("codebook size must be in [2, 65536]");
  }
};

struct QuantizedSequence {
  CodeGrid grid;
  std::vector<double> quantized;       // [T, code_dim]
  std::vector<double> residual_norms;  // [T, depth_limit]
};

class Codec {
 public:
  explicit Codec(const CodecConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t W = 3 * cfg.vertices, H = cfg.hidden_width(), C = cfg.code_dim;
    enc_[0] = Layer(LayerSpec::conv(W, H, 1, Padding::kCausal), params_, "enc.0", rng);
    enc_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kCausal), params_, "enc.1", rng);
    enc_[2] = Layer(LayerSpec::conv(H, C, 3, Padding::kCausal), params_, "enc.2", rng);
    dec_[0] = Layer(LayerSpec::conv(C, H, 3, Padding::kCausal), params_, "dec.0", rng);
    dec_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kCausal), params_, "dec.1", rng);
    dec_[2] = Layer(LayerSpec::conv(H, W, 1, Padding::kCausal), params_, "dec.2", rng);
    codebook_ = &params_.add_uniform("codebook", {cfg.codebook_size, C}, 1.0, rng);
  }

  const CodecConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  Parameter& codebook_param() { return *codebook_; }

  CodebookView codebook() const { return {codebook_->value.data(), cfg_.code_dim}; }

  /// Differentiable encoder over B sequences of `seq_len` frames: [B*T, 3V] -> [B*T, code_dim].
  Tensor encode(const Tensor& x, std::size_t seq_len) const {
    Tensor h = leaky_relu(enc_[0].forward(x, seq_len));
    h = leaky_relu(enc_[1].forward(h, seq_len));
    return enc_[2].forward(h, seq_len);
  }

  /// Differentiable decoder: [B*T, code_dim] -> [B*T, 3V].
  Tensor decode_latent(const Tensor& q, std::size_t seq_len) const {
    Tensor h = leaky_relu(dec_[0].forward(q, seq_len));
    h = leaky_relu(dec_[1].forward(h, seq_len));
    return dec_[2].forward(h, seq_len);
  }

  std::vector<double> encode(const MotionSequence& m) const {
    check_motion(m);
    NoGradGuard guard;
    return encode(m.tensor(), m.frames).values();
  }

  /// Residual-quantizes every row of a [T, code_dim] latent to `depth_limit` codes.
  QuantizedSequence quantize(std::span<const double> latent, std::size_t frames, std::size_t depth_limit = 0) const {
    const std::size_t D = resolve_depth(depth_limit), C = cfg_.code_dim;
    if (latent.size() != frames * C) throw ShapeError("quantize: latent does not hold T rows of code_dim");
    QuantizedSequence out;
    out.grid = CodeGrid(frames, D, cfg_.codebook_size);
    out.quantized.resize(frames * C);
    out.residual_norms.resize(frames * D);
    const CodebookView cb = codebook();
    for (std::size_t t = 0; t < frames; ++t) {
      const RvqResult r = rvq_quantize(latent.subspan(t * C, C), cb, D);
      std::copy(r.indices.begin(), r.indices.end(), out.grid.indices.begin() + static_cast<long>(t * D));
      std::copy(r.quantized.begin(), r.quantized.end(), out.quantized.begin() + static_cast<long>(t * C));
      std::copy(r.residual_norms.begin(), r.residual_norms.end(), out.residual_norms.begin() + static_cast<long>(t * D));
    }
    return out;
  }

  QuantizedSequence quantize(const MotionSequence& m, std::size_t depth_limit = 0) const {
    return quantize(encode(m), m.frames, depth_limit);
  }

  /// Per-frame sum of the first `depth_limit` codes of each grid row.
  std::vector<double> latent_from_grid(const CodeGrid& grid, std::size_t depth_limit = 0) const {
    const std::size_t d = depth_limit ? depth_limit : grid.depth;
    if (d > grid.depth) throw std::invalid_argument("depth limit exceeds grid depth");
    if (grid.codebook_size != cfg_.codebook_size) throw std::invalid_argument("grid was built for another codebook");
    grid.validate();
    const CodebookView cb = codebook();
    std::vector<double> q(grid.frames * cfg_.code_dim);
    for (std::size_t t = 0; t < grid.frames; ++t) {
      const auto row = sum_codes(grid.row(t), cb, d);
      std::copy(row.begin(), row.end(), q.begin() + static_cast<long>(t * cfg_.code_dim));
    }
    return q;
  }

  MotionSequence decode_latent(std::span<const double> latent, std::size_t frames,
                               std::vector<std::uint32_t> lip = {}) const {
    NoGradGuard guard;
    const Tensor q({frames, cfg_.code_dim}, std::vector<double>(latent.begin(), latent.end()));
    return MotionSequence::from_tensor(decode_latent(q, frames), std::move(lip));
  }

  MotionSequence decode(const CodeGrid& grid, std::size_t depth_limit = 0, std::vector<std::uint32_t> lip = {}) const {
    return decode_latent(latent_from_grid(grid, depth_limit), grid.frames, std::move(lip));
  }

  /// Encode, quantize to `depth_limit` codes and decode.
  MotionSequence reconstruct(const MotionSequence& m, std::size_t depth_limit = 0) const {
    const QuantizedSequence q = quantize(m, depth_limit);
    return decode_latent(q.quantized, m.frames, m.lip);
  }

  std::map<std::string, std::string> architecture() const {
    return {{"vertices", std::to_string(cfg_.vertices)},
            {"code_dim", std::to_string(cfg_.code_dim)},
            {"codebook_size", std::to_string(cfg_.codebook_size)},
            {"depth", std::to_string(cfg_.depth)},
            {"hidden", std::to_string(cfg_.hidden_width())},
            {"layer.enc.0", enc_[0].spec().to_string()},
            {"layer.enc.1", enc_[1].spec().to_string()},
            {"layer.enc.2", enc_[2].spec().to_string()},
            {"layer.dec.0", dec_[0].spec().to_string()},
            {"layer.dec.1", dec_[1].spec().to_string()},
            {"layer.dec.2", dec_[2].spec().to_string()}};
  }

  Checkpoint to_checkpoint(std::uint64_t seed = 0) const {
    return Checkpoint::capture("codec", architecture(), params_, seed);
  }

  static Codec from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "codec") {
      throw FormatError(FormatError::Kind::kInvalidContent, "expected a codec checkpoint, found '" + ck.kind + "'");
    }
    CodecConfig cfg;
    cfg.vertices = ck.arch_size("vertices");
    cfg.code_dim = ck.arch_size("code_dim");
    cfg.codebook_size = ck.arch_size("codebook_size");
    cfg.depth = ck.arch_size("depth");
    cfg.hidden = ck.arch_size("hidden");
    Codec codec(cfg, ck.seed);
    ck.restore_into(codec.params_);
    return codec;
  }

  std::uint64_t checksum() const { return to_checkpoint().checksum(); }

  std::size_t resolve_depth(std::size_t depth_limit) const {
    if (depth_limit == 0) return cfg_.depth;
    if (depth_limit > cfg_.depth) {
      throw std::invalid_argument("depth limit " + std::to_string(depth_limit) + " exceeds codec depth " +
                                  std::to_string(cfg_.depth));
    }
    return depth_limit;
  }

  void check_motion(const MotionSequence& m) const {
    if (m.vertices != cfg_.vertices) {
      throw ShapeError("codec expects " + std::to_string(cfg_.vertices) + " vertices, sequence has " +
                       std::to_string(m.vertices));
    }
  }

 private:
  CodecConfig cfg_;
  ParameterSet params_;
  Layer enc_[3];
  Layer dec_[3];
  Parameter* codebook_ = nullptr;
};

struct CodecTrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 16;
  double lr = 1e-3;
  double final_lr_fraction = 0.05;  // cosine decay to lr * fraction at the last epoch
  double beta = 0.25;               // commitment weight
  double quantizer_dropout = 0.2;   // share of clips decoded from a random depth prefix
  double clip_norm = 1.0;
  std::size_t init_frames = 4096;   // encoder outputs sampled for codebook init
  bool reseed_dead_codes = true;
  std::uint64_t seed = 1;
};

struct CodecEpochStats {
  double loss = 0.0;
  double recon = 0.0;
  double codebook = 0.0;
  double commit = 0.0;
  std::size_t reseeded = 0;
};

namespace detail {

inline std::vector<double> gather_frames(const Corpus& corpus, std::span<const std::size_t> clips) {
  std::vector<double> x;
  for (std::size_t c : clips) {
    const auto& v = corpus.clips[c].motion.values;
    x.insert(x.end(), v.begin(), v.end());
  }
  return x;
}

}  // namespace detail

/// Seeds the shared codebook depth by depth: a slice of codes from encoder
/// outputs, then a slice from the residuals left by the codes chosen so far.
inline void init_codebook(Codec& codec, const Corpus& corpus, std::span<const std::size_t> clips,
                          std::size_t max_frames, std::mt19937_64& rng) {
  const CodecConfig& cfg = codec.config();
  const std::size_t T = corpus.frames(), C = cfg.code_dim, K = cfg.codebook_size;
  std::vector<std::size_t> order(clips.begin(), clips.end());
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(std::min(order.size(), std::max<std::size_t>(1, max_frames / T)));
  std::vector<double> residuals;
  {
    NoGradGuard guard;
    const std::vector<double> x = detail::gather_frames(corpus, order);
    residuals = codec.encode(Tensor({order.size() * T, 3 * cfg.vertices}, x), T).values();
  }
  const std::size_t rows = residuals.size() / C;
  std::vector<double> codes;
  for (std::size_t d = 0; d < cfg.depth; ++d) {
    const std::size_t want = K / cfg.depth + (d < K % cfg.depth ? 1 : 0);
    std::vector<std::size_t> pick(rows);
    std::iota(pick.begin(), pick.end(), 0);
    std::shuffle(pick.begin(), pick.end(), rng);
    std::size_t taken = 0;
    for (std::size_t r : pick) {
      if (taken == want) break;
      const double* v = residuals.data() + r * C;
      bool duplicate = false;
      for (std::size_t i = 0; i + C <= codes.size() && !duplicate; i += C) {
        duplicate = std::equal(v, v + C, codes.data() + i);
      }
      if (duplicate) continue;
      codes.insert(codes.end(), v, v + C);
      ++taken;
    }
    // Fewer distinct rows than codes: fill with jittered copies.
    std::normal_distribution<double> jitter(0.0, 1e-3);
    while (taken < want) {
      const std::size_t src = (rng() % (codes.size() / C)) * C;
      for (std::size_t k = 0; k < C; ++k) codes.push_back(codes[src + k] + jitter(rng));
      ++taken;
    }
    const CodebookView partial{codes, C};
    for (std::size_t r = 0; r < rows; ++r) {
      double* v = residuals.data() + r * C;
      const double* e = partial.code(static_cast<std::size_t>(nearest_code(v, partial)));
      for (std::size_t k = 0; k < C; ++k) v[k] -= e[k];
    }
  }
  Parameter& p = codec.codebook_param();
  std::copy(codes.begin(), codes.end(), p.value.mutable_data().begin());
  std::fill(p.first_moment.begin(), p.first_moment.end(), 0.0);
  std::fill(p.second_moment.begin(), p.second_moment.end(), 0.0);
  p.step = 0;
}

/// Trains encoder, decoder and codebook on `clips` with reconstruction through
/// a straight-through estimator, a codebook term pulling each selected code to
/// its residual, and a commitment term at every depth. On a non-finite loss or
/// gradient the parameters are restored to the end of the last good epoch and
/// DivergenceError is thrown.
inline std::vector<CodecEpochStats> train_codec(Codec& codec, const Corpus& corpus, std::span<const std::size_t> clips,
                                                const CodecTrainConfig& cfg, const LogSink& log = {}) {
  std::vector<CodecEpochStats> history;
  if (cfg.epochs == 0) return history;
  if (clips.empty()) throw std::invalid_argument("codec training needs at least one clip");
  const CodecConfig& cc = codec.config();
  if (corpus.vertices() != cc.vertices) throw ShapeError("corpus vertex count does not match the codec");
  const std::size_t T = corpus.frames(), W = 3 * cc.vertices, C = cc.code_dim, D = cc.depth, K = cc.codebook_size;
  std::mt19937_64 rng(cfg.seed);
  init_codebook(codec, corpus, clips, cfg.init_frames, rng);

  ParameterSet& params = codec.params();
  ParameterSet last_good;
  auto snapshot = [&] {
    last_good = ParameterSet();
    for (std::size_t i = 0; i < params.size(); ++i) {
      last_good.add(params[i].name, params[i].value.shape(), params[i].value.values());
    }
  };
  snapshot();
  AdamConfig adam{.lr = cfg.lr, .clip_norm = cfg.clip_norm};
  std::vector<std::size_t> order(clips.begin(), clips.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> any_depth(1, D);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    adam.lr = cosine_lr(cfg.lr, cfg.final_lr_fraction, epoch, cfg.epochs);
    CodecEpochStats stats;
    std::vector<std::size_t> usage(K, 0);
    std::vector<double> recent_residuals;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::span<const std::size_t> batch(order.data() + start, std::min(cfg.batch, order.size() - start));
      const std::size_t B = batch.size(), rows = B * T;
      const Tensor x({rows, W}, detail::gather_frames(corpus, batch));
      Tensor z = codec.encode(x, T);

      const CodebookView cb = codec.codebook();
      std::vector<double> selected(rows * C), residual_rows(D * rows * C), prefix_rows(D * rows * C);
      std::vector<RowRef> code_refs(D * rows), latent_refs(D * rows);
      std::vector<std::size_t> clip_depth(B, D);
      for (std::size_t b = 0; b < B; ++b) {
        if (unit(rng) < cfg.quantizer_dropout) clip_depth[b] = any_depth(rng);
      }
      for (std::size_t r = 0; r < rows; ++r) {
        const double* zr = z.data().data() + r * C;
        std::vector<double> residual(zr, zr + C), prefix(C, 0.0);
        for (std::size_t d = 0; d < D; ++d) {
          const std::size_t slot = d * rows + r;
          std::copy(residual.begin(), residual.end(), residual_rows.begin() + static_cast<long>(slot * C));
          const int j = nearest_code(residual.data(), cb);
          usage[static_cast<std::size_t>(j)]++;
          const double* e = cb.code(static_cast<std::size_t>(j));
          for (std::size_t k = 0; k < C; ++k) {
            residual[k] -= e[k];
            prefix[k] += e[k];
          }
          std::copy(prefix.begin(), prefix.end(), prefix_rows.begin() + static_cast<long>(slot * C));
          if (d + 1 == clip_depth[r / T]) {
            std::copy(prefix.begin(), prefix.end(), selected.begin() + static_cast<long>(r * C));
          }
          code_refs[slot] = RowRef{0, static_cast<std::size_t>(j)};
          latent_refs[slot] = RowRef{0, r};
        }
      }
      recent_residuals = residual_rows;

      const Tensor recon = mse(codec.decode_latent(straight_through(Tensor({rows, C}, selected), z), T), x);
      const Tensor chosen = gather_rows({codec.codebook_param().value}, code_refs);
      const Tensor codebook_term = scale(mse(chosen, Tensor({D * rows, C}, residual_rows)), static_cast<double>(D));
      const Tensor commit_term = scale(mse(gather_rows({z}, latent_refs), Tensor({D * rows, C}, prefix_rows)),
                                       cfg.beta * static_cast<double>(D));
      const Tensor loss = add(add(recon, codebook_term), commit_term);

      auto diverge = [&](const std::string& why) {
        params.copy_values_from(last_good);
        LogRecord("diverged").kv("stage", "codec").kv("epoch", epoch).kv("reason", why).emit(log);
        throw DivergenceError("codec training diverged in epoch " + std::to_string(epoch) + ": " + why, epoch);
      };
      if (!std::isfinite(loss.item())) diverge("non-finite loss");
      params.zero_grad();
      backward(loss);
      try {
        adam_step(params, adam);
      } catch (const NumericError& e) {
        diverge(e.what());
      }
      stats.loss += loss.item();
      stats.recon += recon.item();
      stats.codebook += codebook_term.item();
      stats.commit += commit_term.item();
      ++batches;
    }
    const double nb = static_cast<double>(batches);
    stats.loss /= nb;
    stats.recon /= nb;
    stats.codebook /= nb;
    stats.commit /= nb;

    if (cfg.reseed_dead_codes && epoch + 1 < cfg.epochs) {
      Parameter& p = codec.codebook_param();
      auto values = p.value.mutable_data();
      const std::size_t pool = recent_residuals.size() / C;
      for (std::size_t i = 0; i < K; ++i) {
        if (usage[i] > 0) continue;
        const std::size_t src = rng() % pool;
        std::copy_n(recent_residuals.begin() + static_cast<long>(src * C), C, values.begin() + static_cast<long>(i * C));
        std::fill_n(p.first_moment.begin() + static_cast<long>(i * C), C, 0.0);
        std::fill_n(p.second_moment.begin() + static_cast<long>(i * C), C, 0.0);
        ++stats.reseeded;
      }
    }
    snapshot();
    LogRecord("epoch")
        .kv("stage", "codec")
        .kv("epoch", epoch + 1)
        .kv("loss", stats.loss)
        .kv("recon", stats.recon)
        .kv("codebook", stats.codebook)
        .kv("commit", stats.commit)
        .kv("reseeded", stats.reseeded)
        .emit(log);
    history.push_back(stats);
  }
  return history;
}

/// Per-coordinate variance of the motion values averaged over coordinates.
inline double coordinate_variance(const Corpus& corpus, std::span<const std::size_t> clips) {
  const std::size_t W = 3 * corpus.vertices();
  std::vector<double> mean(W, 0.0), sq(W, 0.0);
  std::size_t n = 0;
  for (std::size_t c : clips) {
    const MotionSequence& m = corpus.clips[c].motion;
    for (std::size_t t = 0; t < m.frames; ++t, ++n) {
      for (std::size_t k = 0; k < W; ++k) mean[k] += m.at(t, k);
    }
  }
  for (double& v : mean) v /= static_cast<double>(n);
  for (std::size_t c : clips) {
    const MotionSequence& m = corpus.clips[c].motion;
    for (std::size_t t = 0; t < m.frames; ++t) {
      for (std::size_t k = 0; k < W; ++k) sq[k] += (m.at(t, k) - mean[k]) * (m.at(t, k) - mean[k]);
    }
  }
  double total = 0.0;
  for (double v : sq) total += v / static_cast<double>(n);
  return total / static_cast<double>(W);
}

/// Reconstruction MSE of one sequence for every decode depth 1..D.
inline std::vector<double> depth_mse(const Codec& codec, const MotionSequence& m) {
  const std::vector<double> latent = codec.encode(m);
  const QuantizedSequence q = codec.quantize(latent, m.frames);
  std::vector<double> out;
  for (std::size_t d = 1; d <= codec.config().depth; ++d) {
    const MotionSequence r = codec.decode(q.grid, d);
    double s = 0.0;
    for (std::size_t i = 0; i < r.values.size(); ++i) s += (r.values[i] - m.values[i]) * (r.values[i] - m.values[i]);
    out.push_back(s / static_cast<double>(r.values.size()));
  }
  return out;
}

}  // namespace rvqmotion
