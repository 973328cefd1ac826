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

// Two-stage autoregressive model over code grids.
//
// Temporal stage, per frame t:
//   u[t]    = audio(y)[t] + history[t] (+ style when style_into_temporal)
//   history = learned start row for t = 0, else proj(sum_d e(j[t-1, d]))
//   h[t]    = causal stack over u[<=t]
//
// Depth stage, per frame, a causal transformer over D+1 rows
//   row 0 = style embedding (a learned constant when style_into_temporal)
//   row 1 = h[t]
//   row k = proj(sum_{d<k} e(j[t, d]))          k = 2..D
// plus a learned position per row. Row d yields the logits of depth d, so
// depth d sees the style, the context and the codes of depths < d.

#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rvqmotion/codec/rvq.hpp"
#include "rvqmotion/core/checkpoint.hpp"
#include "rvqmotion/data/sequence.hpp"

namespace rvqmotion {

enum class TemporalKind { kConv, kTransformer };

inline const char* temporal_name(TemporalKind k) { return k == TemporalKind::kConv ? "conv" : "transformer"; }

inline TemporalKind parse_temporal(const std::string& s) {
  if (s == "conv") return TemporalKind::kConv;
  if (s == "transformer") return TemporalKind::kTransformer;
  throw std::invalid_argument("unknown temporal model '" + s + "' (conv or transformer)");
}

/// The codec was replaced or retrained under a model that depends on it.
class CodecMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ArConfig {
  std::size_t signal_dim = 8;
  std::size_t vertices = 20;
  std::size_t code_dim = 16;
  std::size_t codebook_size = 32;
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t depth_layers = 2;
  std::size_t mlp_ratio = 2;
  std::size_t audio_radius = 2;
  TemporalKind temporal = TemporalKind::kConv;
  std::size_t temporal_layers = 4;  // conv: dilation 2^l per layer
  std::size_t max_frames = 256;     // transformer temporal positions
  bool style_into_temporal = false;

  void validate() const {
    if (signal_dim == 0 || vertices == 0 || code_dim == 0 || depth == 0 || width == 0 || temporal_layers == 0) {
      throw std::invalid_argument("model sizes must be >= 1");
    }
    if (codebook_size < 2) throw std::invalid_argument("codebook size must be >= 2");
    if (heads == 0 || width % heads != 0) throw std::invalid_argument("width must be divisible by heads");
  }

  /// Past frames visible to the conv temporal stack, the current one included.
  std::size_t receptive_field() const {
    std::size_t r = 1;
    for (std::size_t l = 0; l < temporal_layers; ++l) r += std::size_t{1} << l;
    return r;
  }
};

/// Teacher-forcing inputs for B clips of T frames with references of Ts frames.
/// `history` holds the summed code embedding of every frame of the grid fed to
/// the temporal stage; `partial` and `targets` come from the grid fed to the
/// depth stage (the two differ only under distillation).
struct ArBatch {
  std::size_t clips = 0;
  std::size_t frames = 0;
  std::size_t ref_frames = 0;
  std::vector<double> signal;     // [B*T, signal_dim]
  std::vector<double> reference;  // [B*Ts, 3V]
  std::vector<double> history;    // [B*T, code_dim]
  std::vector<double> partial;    // [B*T*(D-1), code_dim], prefix sums of depths 1..D-1
  std::vector<int> targets;       // [B*T*D]
  std::vector<double> soft_targets;  // [B*T*D, codebook_size] or empty
};

class ArModel {
 public:
  ArModel(const ArConfig& cfg, std::uint64_t seed = 1) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    const std::size_t H = cfg.width, W = 3 * cfg.vertices;
    audio_[0] = Layer(LayerSpec::conv(cfg.signal_dim, H, 2 * cfg.audio_radius + 1, Padding::kSame), params_,
                      "audio.0", rng);
    audio_[1] = Layer(LayerSpec::conv(H, H, 1, Padding::kSame), params_, "audio.1", rng);
    style_[0] = Layer(LayerSpec::conv(W, H, 1, Padding::kSame), params_, "style.0", rng);
    style_[1] = Layer(LayerSpec::conv(H, H, 3, Padding::kReplicate), params_, "style.1", rng);
    style_[2] = Layer(LayerSpec::conv(H, H, 3, Padding::kReplicate), params_, "style.2", rng);
    history_proj_ = Layer(LayerSpec::dense(cfg.code_dim, H), params_, "history.proj", rng);
    start_ = &params_.add_uniform("history.start", {1, H}, 0.1, rng);
    if (cfg.temporal == TemporalKind::kConv) {
      for (std::size_t l = 0; l < cfg.temporal_layers; ++l) {
        temporal_conv_.emplace_back(LayerSpec::conv(H, H, 2, Padding::kCausal, std::size_t{1} << l), params_,
                                    "temporal." + std::to_string(l), rng);
      }
    } else {
      temporal_pos_ = &params_.add_uniform("temporal.pos", {cfg.max_frames, H}, 0.1, rng);
      for (std::size_t l = 0; l < cfg.temporal_layers; ++l) {
        temporal_blocks_.emplace_back(H, cfg.heads, cfg.mlp_ratio * H, true, params_,
                                      "temporal." + std::to_string(l), rng);
      }
    }
    code_proj_ = Layer(LayerSpec::dense(cfg.code_dim, H), params_, "depth.code_proj", rng);
    depth_pos_ = &params_.add_uniform("depth.pos", {cfg.depth + 1, H}, 0.1, rng);
    if (cfg.style_into_temporal) style_token_ = &params_.add_uniform("depth.style_token", {1, H}, 0.1, rng);
    for (std::size_t l = 0; l < cfg.depth_layers; ++l) {
      depth_blocks_.emplace_back(H, cfg.heads, cfg.mlp_ratio * H, true, params_, "depth." + std::to_string(l), rng);
    }
    depth_norm_ = Layer(LayerSpec::layer_norm(H), params_, "depth.norm", rng);
    LayerSpec head = LayerSpec::dense(H, cfg.codebook_size);
    head.zero_init = true;
    head_ = Layer(head, params_, "depth.head", rng);
  }

  const ArConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Checksum of the codec this model was trained against (0 before training).
  std::uint64_t codec_checksum = 0;

  /// Frame-level depth-model evaluations made by depth_step since the last
  /// reset: one per (frame, depth, candidate row). Shared by copies.
  std::uint64_t depth_passes() const { return depth_passes_->load(); }
  void reset_depth_passes() const { depth_passes_->store(0); }

  // -------------------------------------------------------------------------
  // Stages

  /// Centered local window over the driving signal: [B*T, Dy] -> [B*T, H].
  Tensor encode_audio(const Tensor& y, std::size_t frames) const {
    return audio_[1].forward(leaky_relu(audio_[0].forward(y, frames)), frames);
  }

  /// Non-causal convolutions, then a mean over time: [B*Ts, 3V] -> [B, H].
  Tensor encode_style(const Tensor& s, std::size_t frames) const {
    if (frames == 0 || s.rows() % frames != 0) throw ShapeError("style reference must hold whole clips of >= 1 frame");
    Tensor h = leaky_relu(style_[0].forward(s, frames));
    h = leaky_relu(style_[1].forward(h, frames));
    h = style_[2].forward(h, frames);
    return segment_mean(h, frames);
  }

  /// Temporal stage over whole clips. `history` [B*T, code_dim] row t is the
  /// summed embedding of frame t; the model itself shifts it by one frame.
  Tensor temporal(const Tensor& audio, const Tensor& style, const Tensor& history, std::size_t clips,
                  std::size_t frames) const {
    const Tensor projected = history_proj_.forward(history);
    std::vector<RowRef> refs(clips * frames);
    for (std::size_t b = 0; b < clips; ++b) {
      refs[b * frames] = RowRef{0, 0};
      for (std::size_t t = 1; t < frames; ++t) refs[b * frames + t] = RowRef{1, b * frames + t - 1};
    }
    Tensor u = add(audio, gather_rows({start_->value, projected}, refs));
    if (cfg_.style_into_temporal) u = add(u, broadcast_style(style, clips, frames));
    return temporal_stack(u, frames);
  }

  /// Depth stage logits for every (frame, depth): [F*D, codebook_size], where
  /// `context` holds F frames and `partial` F*(D-1) prefix sums.
  Tensor depth_logits(const Tensor& context, const Tensor& style, const Tensor& partial, std::size_t frames_per_clip,
                      std::size_t depth) const {
    const std::size_t F = context.rows(), L = depth + 1;
    const Tensor rows = depth_input(context, style, partial, frames_per_clip, depth);
    Tensor h = add_positional(rows, depth_pos_->value, L);
    for (const auto& block : depth_blocks_) h = block.forward(h, L);
    std::vector<RowRef> pick(F * depth);
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t d = 0; d < depth; ++d) pick[f * depth + d] = RowRef{0, f * L + d + 1};
    }
    return head_.forward(depth_norm_.forward(gather_rows({h}, pick)));
  }

  /// Full teacher-forced forward pass: logits [B*T*D, codebook_size].
  Tensor forward(const ArBatch& batch) const {
    check_batch(batch);
    const std::size_t B = batch.clips, T = batch.frames, D = cfg_.depth;
    const Tensor audio = encode_audio(Tensor({B * T, cfg_.signal_dim}, batch.signal), T);
    const Tensor style = encode_style(Tensor({B * batch.ref_frames, 3 * cfg_.vertices}, batch.reference),
                                      batch.ref_frames);
    const Tensor context = temporal(audio, style, Tensor({B * T, cfg_.code_dim}, batch.history), B, T);
    const Tensor partial = D > 1 ? Tensor({B * T * (D - 1), cfg_.code_dim}, batch.partial) : Tensor();
    return depth_logits(context, style, partial, T, D);
  }

  Tensor loss(const ArBatch& batch) const {
    const Tensor logits = forward(batch);
    if (!batch.soft_targets.empty()) {
      return soft_cross_entropy(logits, Tensor(logits.shape(), batch.soft_targets));
    }
    return cross_entropy(logits, batch.targets);
  }

  // -------------------------------------------------------------------------
  // Incremental pieces used by generation (no gradient recording)

  /// Input row of the temporal stage for frame t from the previous frame's
  /// summed embedding (`previous` empty at t = 0): [S, H].
  Tensor temporal_input(const Tensor& audio_row, const Tensor& style_rows, const std::vector<double>& previous,
                        std::size_t samples) const {
    Tensor vis;
    if (previous.empty()) {
      vis = gather_rows({start_->value}, std::vector<RowRef>(samples, RowRef{0, 0}));
    } else {
      vis = history_proj_.forward(Tensor({samples, cfg_.code_dim}, previous));
    }
    Tensor u = add(gather_rows({audio_row}, std::vector<RowRef>(samples, RowRef{0, 0})), vis);
    if (cfg_.style_into_temporal) u = add(u, style_rows);
    return u;
  }

  /// Streaming state of the temporal stage for S parallel samples.
  struct TemporalState {
    std::size_t samples = 0;
    std::size_t steps = 0;
    std::vector<std::vector<double>> layer_inputs;  // conv: per layer, [steps, S, H]
    std::vector<double> inputs;                     // transformer: [steps, S, H]
  };

  TemporalState start_temporal(std::size_t samples) const {
    TemporalState st;
    st.samples = samples;
    st.layer_inputs.resize(temporal_conv_.size());
    return st;
  }

  /// Advances the temporal stage by one frame: u [S, H] -> h [S, H].
  Tensor temporal_step(TemporalState& st, const Tensor& u) const {
    const std::size_t S = st.samples, H = cfg_.width, t = st.steps++;
    if (cfg_.temporal == TemporalKind::kTransformer) {
      st.inputs.insert(st.inputs.end(), u.data().begin(), u.data().end());
      const std::size_t len = t + 1;
      std::vector<double> seq(S * len * H);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t k = 0; k < len; ++k) {
          std::copy_n(st.inputs.data() + (k * S + s) * H, H, seq.data() + (s * len + k) * H);
        }
      }
      const Tensor h = temporal_stack(Tensor({S * len, H}, std::move(seq)), len);
      std::vector<RowRef> last(S);
      for (std::size_t s = 0; s < S; ++s) last[s] = RowRef{0, s * len + t};
      return gather_rows({h}, last);
    }
    Tensor h = u;
    for (std::size_t l = 0; l < temporal_conv_.size(); ++l) {
      auto& hist = st.layer_inputs[l];
      hist.insert(hist.end(), h.data().begin(), h.data().end());
      const std::size_t dil = temporal_conv_[l].spec().dilation;
      std::vector<double> taps(S * 2 * H, 0.0);
      for (std::size_t s = 0; s < S; ++s) {
        if (t >= dil) std::copy_n(hist.data() + ((t - dil) * S + s) * H, H, taps.data() + s * 2 * H);
        std::copy_n(hist.data() + (t * S + s) * H, H, taps.data() + s * 2 * H + H);
      }
      const Layer& conv = temporal_conv_[l];
      h = add(h, leaky_relu(linear(Tensor({S, 2 * H}, std::move(taps)), conv.weight()->value, conv.bias()->value)));
    }
    return h;
  }

  /// Logits for depth `d` (1-based) of M frames given their context rows,
  /// style rows and the prefix sums of depths < d ([M*(d-1), code_dim]).
  Tensor depth_step(const Tensor& context, const Tensor& style_rows, const std::vector<double>& partial,
                    std::size_t d) const {
    const std::size_t M = context.rows(), L = d + 1;
    depth_passes_->fetch_add(M);
    std::vector<Tensor> sources{style_source(style_rows), context};
    if (d > 1) sources.push_back(code_proj_.forward(Tensor({M * (d - 1), cfg_.code_dim}, partial)));
    std::vector<RowRef> refs(M * L);
    for (std::size_t m = 0; m < M; ++m) {
      refs[m * L] = style_ref(m, 1);
      refs[m * L + 1] = RowRef{1, m};
      for (std::size_t k = 2; k < L; ++k) refs[m * L + k] = RowRef{2, m * (d - 1) + k - 2};
    }
    Tensor h = add_positional(gather_rows(sources, refs), depth_pos_->value, L);
    for (const auto& block : depth_blocks_) h = block.forward(h, L);
    std::vector<RowRef> last(M);
    for (std::size_t m = 0; m < M; ++m) last[m] = RowRef{0, m * L + d};
    return head_.forward(depth_norm_.forward(gather_rows({h}, last)));
  }

  // -------------------------------------------------------------------------
  // Serialization

  std::map<std::string, std::string> architecture() const {
    std::map<std::string, std::string> a{
        {"signal_dim", std::to_string(cfg_.signal_dim)},
        {"vertices", std::to_string(cfg_.vertices)},
        {"code_dim", std::to_string(cfg_.code_dim)},
        {"codebook_size", std::to_string(cfg_.codebook_size)},
        {"depth", std::to_string(cfg_.depth)},
        {"width", std::to_string(cfg_.width)},
        {"heads", std::to_string(cfg_.heads)},
        {"depth_layers", std::to_string(cfg_.depth_layers)},
        {"mlp_ratio", std::to_string(cfg_.mlp_ratio)},
        {"audio_radius", std::to_string(cfg_.audio_radius)},
        {"temporal", temporal_name(cfg_.temporal)},
        {"temporal_layers", std::to_string(cfg_.temporal_layers)},
        {"max_frames", std::to_string(cfg_.max_frames)},
        {"style_into_temporal", cfg_.style_into_temporal ? "1" : "0"},
        {"codec_checksum", to_hex(codec_checksum)},
    };
    for (std::size_t l = 0; l < temporal_conv_.size(); ++l) {
      a["layer.temporal." + std::to_string(l)] = temporal_conv_[l].spec().to_string();
    }
    return a;
  }

  Checkpoint to_checkpoint(std::uint64_t seed = 0) const {
    return Checkpoint::capture("ar", architecture(), params_, seed);
  }

  static ArModel from_checkpoint(const Checkpoint& ck) {
    if (ck.kind != "ar") {
      throw FormatError(FormatError::Kind::kInvalidContent, "expected an AR model checkpoint, found '" + ck.kind + "'");
    }
    ArConfig cfg;
    cfg.signal_dim = ck.arch_size("signal_dim");
    cfg.vertices = ck.arch_size("vertices");
    cfg.code_dim = ck.arch_size("code_dim");
    cfg.codebook_size = ck.arch_size("codebook_size");
    cfg.depth = ck.arch_size("depth");
    cfg.width = ck.arch_size("width");
    cfg.heads = ck.arch_size("heads");
    cfg.depth_layers = ck.arch_size("depth_layers");
    cfg.mlp_ratio = ck.arch_size("mlp_ratio");
    cfg.audio_radius = ck.arch_size("audio_radius");
    cfg.temporal_layers = ck.arch_size("temporal_layers");
    cfg.max_frames = ck.arch_size("max_frames");
    cfg.style_into_temporal = ck.arch_size("style_into_temporal") != 0;
    try {
      cfg.temporal = parse_temporal(ck.arch("temporal"));
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatError::Kind::kInvalidContent, e.what());
    }
    ArModel model(cfg, ck.seed);
    ck.restore_into(model.params_);
    model.codec_checksum = std::stoull(ck.arch("codec_checksum"), nullptr, 16);
    return model;
  }

  /// Throws CodecMismatchError unless `codec_sum` is the codec this model was trained with.
  void require_codec(std::uint64_t codec_sum) const {
    if (codec_sum != codec_checksum) {
      throw CodecMismatchError("model was trained against codec " + to_hex(codec_checksum) + ", given codec " +
                               to_hex(codec_sum));
    }
  }

 private:
  Tensor temporal_stack(const Tensor& u, std::size_t frames) const {
    Tensor h = u;
    if (cfg_.temporal == TemporalKind::kConv) {
      for (const Layer& conv : temporal_conv_) h = add(h, leaky_relu(conv.forward(h, frames)));
      return h;
    }
    if (frames > cfg_.max_frames) throw ShapeError("clip longer than the temporal position table");
    h = add_positional(h, temporal_pos_->value, frames);
    for (const auto& block : temporal_blocks_) h = block.forward(h, frames);
    return h;
  }

  Tensor broadcast_style(const Tensor& style, std::size_t clips, std::size_t frames) const {
    std::vector<RowRef> refs(clips * frames);
    for (std::size_t r = 0; r < refs.size(); ++r) refs[r] = RowRef{0, r / frames};
    return gather_rows({style}, refs);
  }

  Tensor style_source(const Tensor& style) const { return cfg_.style_into_temporal ? style_token_->value : style; }

  // Row of the style source for frame f when every `per_clip` frames share a clip.
  RowRef style_ref(std::size_t f, std::size_t per_clip) const {
    return cfg_.style_into_temporal ? RowRef{0, 0} : RowRef{0, f / per_clip};
  }

  Tensor depth_input(const Tensor& context, const Tensor& style, const Tensor& partial, std::size_t frames_per_clip,
                     std::size_t depth) const {
    const std::size_t F = context.rows(), L = depth + 1;
    std::vector<Tensor> sources{style_source(style), context};
    if (depth > 1) sources.push_back(code_proj_.forward(partial));
    std::vector<RowRef> refs(F * L);
    for (std::size_t f = 0; f < F; ++f) {
      refs[f * L] = style_ref(f, frames_per_clip);
      refs[f * L + 1] = RowRef{1, f};
      for (std::size_t k = 2; k < L; ++k) refs[f * L + k] = RowRef{2, f * (depth - 1) + k - 2};
    }
    return gather_rows(sources, refs);
  }

  void check_batch(const ArBatch& b) const {
    const std::size_t B = b.clips, T = b.frames, D = cfg_.depth;
    auto need = [](bool ok, const char* what) {
      if (!ok) throw ShapeError(std::string("AR batch: ") + what);
    };
    need(B > 0 && T > 0 && b.ref_frames > 0, "empty batch");
    need(b.signal.size() == B * T * cfg_.signal_dim, "signal size");
    need(b.reference.size() == B * b.ref_frames * 3 * cfg_.vertices, "reference size");
    need(b.history.size() == B * T * cfg_.code_dim, "history size");
    need(b.partial.size() == B * T * (D - 1) * cfg_.code_dim, "partial size");
    need(b.targets.size() == B * T * D, "target count");
    need(b.soft_targets.empty() || b.soft_targets.size() == B * T * D * cfg_.codebook_size, "soft target size");
  }

  ArConfig cfg_;
  ParameterSet params_;
  Layer audio_[2];
  Layer style_[3];
  Layer history_proj_;
  Parameter* start_ = nullptr;
  std::vector<Layer> temporal_conv_;
  Parameter* temporal_pos_ = nullptr;
  std::vector<TransformerBlock> temporal_blocks_;
  Layer code_proj_;
  Parameter* depth_pos_ = nullptr;
  Parameter* style_token_ = nullptr;
  std::vector<TransformerBlock> depth_blocks_;
  Layer depth_norm_;
  Layer head_;
  std::shared_ptr<std::atomic<std::uint64_t>> depth_passes_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

// ---------------------------------------------------------------------------
// Batch assembly

/// One clip's contribution to a batch: driving signal, reference motion, the
/// grid fed to the temporal stage and the grid fed to (and predicted by) the
/// depth stage.
struct ArExample {
  const SignalSequence* signal = nullptr;
  const std::vector<double>* reference = nullptr;  // [Ts, 3V]
  std::size_t ref_frames = 0;
  const CodeGrid* temporal_grid = nullptr;
  const CodeGrid* depth_grid = nullptr;
  const std::vector<double>* soft_targets = nullptr;  // optional [T*D, codebook_size]
};

inline ArBatch make_batch(const std::vector<ArExample>& examples, const CodebookView& cb) {
  ArBatch batch;
  batch.clips = examples.size();
  batch.frames = examples.front().signal->frames;
  batch.ref_frames = examples.front().ref_frames;
  const std::size_t T = batch.frames;
  for (const ArExample& ex : examples) {
    if (ex.signal->frames != T || ex.ref_frames != batch.ref_frames || ex.temporal_grid->frames != T ||
        ex.depth_grid->frames != T) {
      throw ShapeError("AR batch: clips differ in length");
    }
    batch.signal.insert(batch.signal.end(), ex.signal->values.begin(), ex.signal->values.end());
    batch.reference.insert(batch.reference.end(), ex.reference->begin(), ex.reference->end());
    const std::size_t D = ex.depth_grid->depth;
    for (std::size_t t = 0; t < T; ++t) {
      const auto full = sum_codes(ex.temporal_grid->row(t), cb, ex.temporal_grid->depth);
      batch.history.insert(batch.history.end(), full.begin(), full.end());
      std::vector<double> prefix(cb.dim, 0.0);
      for (std::size_t d = 0; d < D; ++d) {
        const int j = ex.depth_grid->at(t, d);
        batch.targets.push_back(j);
        if (d + 1 == D) break;
        const double* e = cb.code(static_cast<std::size_t>(j));
        for (std::size_t k = 0; k < cb.dim; ++k) prefix[k] += e[k];
        batch.partial.insert(batch.partial.end(), prefix.begin(), prefix.end());
      }
    }
    if (ex.soft_targets) {
      batch.soft_targets.insert(batch.soft_targets.end(), ex.soft_targets->begin(), ex.soft_targets->end());
    }
  }
  if (!batch.soft_targets.empty() && batch.soft_targets.size() != batch.targets.size() * cb.size()) {
    throw ShapeError("AR batch: soft targets given for only some clips");
  }
  return batch;
}

/// Sum over frames and depths of log p(j_td | ...) under teacher forcing.
inline double sequence_log_prob(const ArModel& model, const CodebookView& cb, const CodeGrid& grid,
                                const SignalSequence& signal, const std::vector<double>& reference,
                                std::size_t ref_frames) {
  NoGradGuard guard;
  const ArBatch batch = make_batch({ArExample{&signal, &reference, ref_frames, &grid, &grid, nullptr}}, cb);
  const Tensor logp = log_softmax_rows(model.forward(batch));
  const std::size_t C = model.config().codebook_size;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) total += logp[i * C + static_cast<std::size_t>(batch.targets[i])];
  return total;
}

}  // namespace rvqmotion
