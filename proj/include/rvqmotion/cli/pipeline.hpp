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

// Settings schema and the pipeline stages behind the command-line tool.
// Every stage reads and writes artifacts under one working directory:
//
//   corpus/               clips and manifest
//   codec.ckpt  ar.ckpt  sync_fusion.ckpt  sync_cosine.ckpt  style.ckpt  student.ckpt
//   generated/            motion and code-grid files
//   eval.txt  eval.kv     evaluation table and key=value form
//   <command>.cfg         resolved configuration of the last run of that command

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "rvqmotion/ar/train.hpp"
#include "rvqmotion/cli/config.hpp"
#include "rvqmotion/codec/codec.hpp"
#include "rvqmotion/metrics/evaluate.hpp"
#include "rvqmotion/sampling/distill.hpp"

namespace rvqmotion {

/// An input artifact is absent or unreadable.
class MissingArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PipelineSettings {
  std::filesystem::path workdir = "run";
  CorpusConfig corpus;
  CodecConfig codec;
  CodecTrainConfig codec_train;
  std::uint64_t codec_init_seed = 1;
  ArConfig ar;
  ArTrainConfig ar_train;
  std::uint64_t ar_init_seed = 1;
  SyncConfig sync;
  SyncTrainConfig sync_train;
  std::uint64_t sync_init_seed = 1;
  StyleConfig style;
  StyleTrainConfig style_train;
  std::uint64_t style_init_seed = 1;
  SamplingConfig sampling;
  SyncVariant rejection_variant = SyncVariant::kCosine;
  std::size_t generate_samples = 1;
  std::string generate_split = "test";
  std::size_t generate_clips = 1;
  DistillConfig distill;
  std::uint64_t student_init_seed = 7;
  EvalConfig eval;
  std::vector<std::string> eval_methods;
  bool eval_student = false;
  bool eval_constant_style = true;
  std::size_t threads = 1;

  /// Reads every key of the schema from `rc`, derives the cross-module
  /// sizes, validates, and rejects keys outside the schema.
  static PipelineSettings read(RunConfig& rc) {
    PipelineSettings s;
    s.workdir = rc.str("workdir", "run");
    s.threads = rc.count("threads", 1);

    CorpusConfig& c = s.corpus;
    c.speakers = rc.count("corpus.speakers", c.speakers);
    c.clips_per_speaker = rc.count("corpus.clips_per_speaker", c.clips_per_speaker);
    c.frames = rc.count("corpus.frames", c.frames);
    c.vertices = rc.count("corpus.vertices", c.vertices);
    c.signal_dim = rc.count("corpus.signal_dim", c.signal_dim);
    c.phonemes = rc.count("corpus.phonemes", c.phonemes);
    c.upper_noise = rc.real("corpus.upper_noise", c.upper_noise);
    c.signal_jitter = rc.real("corpus.signal_jitter", c.signal_jitter);
    c.lip_mixing = rc.real("corpus.lip_mixing", c.lip_mixing);
    c.seed = rc.seed("corpus.seed", c.seed);

    CodecConfig& k = s.codec;
    k.vertices = c.vertices;
    k.code_dim = rc.count("codec.code_dim", k.code_dim);
    k.codebook_size = rc.count("codec.codebook_size", k.codebook_size);
    k.depth = rc.count("codec.depth", k.depth);
    k.hidden = rc.count("codec.hidden", k.hidden);
    CodecTrainConfig& kt = s.codec_train;
    kt.epochs = rc.count("codec.epochs", kt.epochs);
    kt.batch = rc.count("codec.batch", kt.batch);
    kt.lr = rc.real("codec.lr", kt.lr);
    kt.final_lr_fraction = rc.real("codec.final_lr_fraction", kt.final_lr_fraction);
    kt.beta = rc.real("codec.beta", kt.beta);
    kt.quantizer_dropout = rc.real("codec.quantizer_dropout", kt.quantizer_dropout);
    kt.clip_norm = rc.real("codec.clip_norm", kt.clip_norm);
    kt.init_frames = rc.count("codec.init_frames", kt.init_frames);
    kt.reseed_dead_codes = rc.flag("codec.reseed_dead_codes", kt.reseed_dead_codes);
    kt.seed = rc.seed("codec.seed", kt.seed);
    s.codec_init_seed = rc.seed("codec.init_seed", s.codec_init_seed);

    ArConfig& a = s.ar;
    a.signal_dim = c.signal_dim;
    a.vertices = c.vertices;
    a.code_dim = k.code_dim;
    a.codebook_size = k.codebook_size;
    a.depth = k.depth;
    a.width = rc.count("ar.width", a.width);
    a.heads = rc.count("ar.heads", a.heads);
    a.depth_layers = rc.count("ar.depth_layers", a.depth_layers);
    a.mlp_ratio = rc.count("ar.mlp_ratio", a.mlp_ratio);
    a.audio_radius = rc.count("ar.audio_radius", a.audio_radius);
    a.temporal_layers = rc.count("ar.temporal_layers", a.temporal_layers);
    a.max_frames = rc.count("ar.max_frames", a.max_frames);
    a.style_into_temporal = rc.flag("ar.style_into_temporal", a.style_into_temporal);
    a.temporal = parse_setting(rc, "ar.temporal", temporal_name(a.temporal), parse_temporal);
    ArTrainConfig& at = s.ar_train;
    read_ar_train(rc, "ar.", at);
    s.ar_init_seed = rc.seed("ar.init_seed", s.ar_init_seed);

    SyncConfig& y = s.sync;
    y.lip_dims = 3 * lip_vertices(c.vertices).size();
    y.signal_dim = c.signal_dim;
    y.window = rc.count("sync.window", y.window);
    y.width = rc.count("sync.width", y.width);
    y.embed = rc.count("sync.embed", y.embed);
    y.temperature = rc.real("sync.temperature", y.temperature);
    SyncTrainConfig& yt = s.sync_train;
    yt.epochs = rc.count("sync.epochs", yt.epochs);
    yt.clips_per_batch = rc.count("sync.clips_per_batch", yt.clips_per_batch);
    yt.windows_per_clip = rc.count("sync.windows_per_clip", yt.windows_per_clip);
    yt.lr = rc.real("sync.lr", yt.lr);
    yt.final_lr_fraction = rc.real("sync.final_lr_fraction", yt.final_lr_fraction);
    yt.clip_norm = rc.real("sync.clip_norm", yt.clip_norm);
    yt.seed = rc.seed("sync.seed", yt.seed);
    s.sync_init_seed = rc.seed("sync.init_seed", s.sync_init_seed);

    StyleConfig& st = s.style;
    st.vertices = c.vertices;
    st.speakers = train_speaker_count(c.speakers);
    st.width = rc.count("style.width", st.width);
    st.embed = rc.count("style.embed", st.embed);
    st.margin = rc.real("style.margin", st.margin);
    st.scale = rc.real("style.scale", st.scale);
    StyleTrainConfig& stt = s.style_train;
    stt.epochs = rc.count("style.epochs", stt.epochs);
    stt.batch = rc.count("style.batch", stt.batch);
    stt.lr = rc.real("style.lr", stt.lr);
    stt.final_lr_fraction = rc.real("style.final_lr_fraction", stt.final_lr_fraction);
    stt.clip_norm = rc.real("style.clip_norm", stt.clip_norm);
    stt.seed = rc.seed("style.seed", stt.seed);
    s.style_init_seed = rc.seed("style.init_seed", s.style_init_seed);

    read_sampling(rc, "sampling.", s.sampling);
    s.rejection_variant = parse_setting(rc, "sampling.sync_variant", "2", [](const std::string& v) {
      return parse_sync_variant(std::stoul(v));
    });
    s.generate_samples = rc.count("generate.samples", s.generate_samples);
    s.generate_split = rc.str("generate.split", s.generate_split);
    s.generate_clips = rc.count("generate.clips", s.generate_clips);

    s.distill.aggregation = SamplingConfig{.strategy = Strategy::kAverage, .n = 20};
    read_sampling(rc, "distill.", s.distill.aggregation);
    s.distill.train.epochs = 20;
    read_ar_train(rc, "distill.", s.distill.train);
    s.student_init_seed = rc.seed("distill.init_seed", s.student_init_seed);

    s.eval.samples = rc.count("eval.samples", s.eval.samples);
    s.eval.clips = rc.count("eval.clips", 16);
    s.eval.seed = rc.seed("eval.seed", s.eval.seed);
    s.eval_methods = split_list(rc.str("eval.methods", "default,average:20"));
    s.eval_student = rc.flag("eval.student", s.eval_student);
    s.eval_constant_style = rc.flag("eval.constant_style", s.eval_constant_style);

    rc.reject_unknown();
    s.validate();
    return s;
  }

  void validate() const {
    try {
      if (threads != 1) throw ConfigError("threads: only single-threaded execution is implemented (threads = 1)");
      if (workdir.empty()) throw ConfigError("workdir must not be empty");
      corpus.validate();
      codec.validate();
      ar.validate();
      sync.validate();
      style.validate();
      sampling.validate(codec.depth);
      distill.aggregation.validate(codec.depth);
      if (distill.aggregation.depth_limit != 0) throw ConfigError("distill.depth_limit must be 0");
      if (sampling.strategy == Strategy::kDefault && sampling.n != 1) throw ConfigError("sampling.n must be 1 for 'default'");
      if (generate_samples == 0) throw ConfigError("generate.samples must be >= 1");
      parse_split(generate_split);
      if (eval.samples == 0) throw ConfigError("eval.samples must be >= 1");
      if (corpus.frames < sync.window + sync_train.windows_per_clip - 1) {
        throw ConfigError("corpus.frames is too short for the sync window layout");
      }
      if (corpus.frames > ar.max_frames) throw ConfigError("corpus.frames exceeds ar.max_frames");
      if (corpus.speakers / 8 == 0) throw ConfigError("corpus.speakers must be >= 8 to hold out test speakers");
      for (const auto& m : eval_methods) method(m);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }

  /// "strategy" or "strategy:n" on top of the sampling settings.
  EvalMethod method(const std::string& spec) const {
    EvalMethod m;
    m.tag = spec;
    std::replace(m.tag.begin(), m.tag.end(), ':', '_');
    m.sampling = sampling;
    const auto colon = spec.find(':');
    m.sampling.strategy = parse_strategy(spec.substr(0, colon));
    m.sampling.n = 1;
    if (colon != std::string::npos) {
      try {
        m.sampling.n = std::stoul(spec.substr(colon + 1));
      } catch (const std::logic_error&) {
        throw ConfigError("eval.methods: bad count in '" + spec + "'");
      }
    }
    if (m.sampling.strategy == Strategy::kKnn) m.sampling.k = std::min(m.sampling.k, m.sampling.n);
    try {
      m.sampling.validate(codec.depth);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("eval.methods '" + spec + "': " + e.what());
    }
    return m;
  }

  std::filesystem::path path(const std::string& name) const { return workdir / name; }

  static std::size_t train_speaker_count(std::size_t speakers) { return speakers - 2 * (speakers / 8); }

 private:
  template <typename Parse>
  static std::invoke_result_t<Parse, const std::string&> parse_setting(RunConfig& rc, const std::string& key,
                                                                       const std::string& fallback, Parse parse) {
    const std::string v = rc.str(key, fallback);
    try {
      return parse(v);
    } catch (const std::exception& e) {
      throw ConfigError(key + " = '" + v + "': " + e.what());
    }
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto a = item.find_first_not_of(' '), b = item.find_last_not_of(' ');
      if (a != std::string::npos) out.push_back(item.substr(a, b - a + 1));
    }
    return out;
  }

  static void read_sampling(RunConfig& rc, const std::string& p, SamplingConfig& sc) {
    sc.strategy = parse_setting(rc, p + "strategy", strategy_name(sc.strategy), parse_strategy);
    sc.n = rc.count(p + "n", sc.n);
    sc.k = rc.count(p + "k", sc.k);
    sc.keep_fraction = rc.real(p + "keep_fraction", sc.keep_fraction);
    sc.keep_best = rc.flag(p + "keep_best", sc.keep_best);
    sc.depth_limit = rc.count(p + "depth_limit", sc.depth_limit);
    sc.temperature = rc.real(p + "temperature", sc.temperature);
    sc.seed = rc.seed(p + "seed", sc.seed);
  }

  static void read_ar_train(RunConfig& rc, const std::string& p, ArTrainConfig& t) {
    t.epochs = rc.count(p + "epochs", t.epochs);
    t.batch = rc.count(p + "batch", t.batch);
    t.lr = rc.real(p + "lr", t.lr);
    t.final_lr_fraction = rc.real(p + "final_lr_fraction", t.final_lr_fraction);
    t.clip_norm = rc.real(p + "clip_norm", t.clip_norm);
    t.seed = rc.seed(p + "train_seed", t.seed);
    if (p == "ar.") {
      t.stochastic_codes = rc.flag(p + "stochastic_codes", t.stochastic_codes);
      t.code_temperature = rc.real(p + "code_temperature", t.code_temperature);
      t.soft_targets = rc.flag(p + "soft_targets", t.soft_targets);
      t.soft_radius = rc.real(p + "soft_radius", t.soft_radius);
      t.soft_mass = rc.real(p + "soft_mass", t.soft_mass);
      t.keep_best_val = rc.flag(p + "keep_best_val", t.keep_best_val);
    }
  }
};

// ---------------------------------------------------------------------------
// Artifact access

namespace detail {

inline Checkpoint read_checkpoint(const std::filesystem::path& p, const std::string& made_by) {
  if (!std::filesystem::exists(p)) {
    throw MissingArtifactError(p.string() + " not found; run '" + made_by + "' first");
  }
  try {
    return Checkpoint::read(p.string());
  } catch (const FormatError& e) {
    throw MissingArtifactError(p.string() + " is unreadable: " + e.what());
  }
}

}  // namespace detail

inline Corpus load_corpus(const PipelineSettings& s) {
  const auto dir = s.path("corpus");
  if (!std::filesystem::exists(dir / "manifest.txt")) {
    throw MissingArtifactError((dir / "manifest.txt").string() + " not found; run 'gen-data' first");
  }
  try {
    return read_corpus(dir.string());
  } catch (const FormatError& e) {
    throw MissingArtifactError(std::string("corpus is unreadable: ") + e.what());
  }
}

inline Codec load_codec(const PipelineSettings& s) {
  return Codec::from_checkpoint(detail::read_checkpoint(s.path("codec.ckpt"), "train-codec"));
}

inline ArModel load_ar(const PipelineSettings& s, const Codec& codec, const std::string& name = "ar.ckpt") {
  ArModel m = ArModel::from_checkpoint(
      detail::read_checkpoint(s.path(name), name == "ar.ckpt" ? "train-ar" : "distill"));
  check_codec_geometry(m, codec);
  m.require_codec(codec.checksum());
  return m;
}

inline SyncNet load_sync(const PipelineSettings& s, SyncVariant v) {
  return SyncNet::from_checkpoint(detail::read_checkpoint(
      s.path(v == SyncVariant::kFusion ? "sync_fusion.ckpt" : "sync_cosine.ckpt"), "train-sync"));
}

inline StyleNet load_style(const PipelineSettings& s) {
  return StyleNet::from_checkpoint(detail::read_checkpoint(s.path("style.ckpt"), "train-style"));
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << text;
}

// ---------------------------------------------------------------------------
// Stages

inline Corpus stage_gen_data(const PipelineSettings& s, const LogSink& log = {}) {
  Corpus corpus = generate_corpus(s.corpus);
  std::filesystem::create_directories(s.workdir);
  write_corpus(corpus, s.path("corpus").string());
  LogRecord("done").kv("stage", "gen-data").kv("clips", corpus.clips.size()).kv("speakers", corpus.num_speakers).emit(log);
  return corpus;
}

/// Held-out reconstruction report of a codec: MSE per decode depth relative
/// to the per-coordinate data variance, and the share of sequences whose MSE
/// never increases with depth.
struct CodecReport {
  std::vector<double> relative_mse;  // per depth 1..D
  double monotone_share = 0.0;
  double variance = 0.0;
};

inline CodecReport codec_report(const Codec& codec, const Corpus& corpus, std::span<const std::size_t> clips) {
  CodecReport r;
  r.variance = coordinate_variance(corpus, clips);
  r.relative_mse.assign(codec.config().depth, 0.0);
  std::size_t monotone = 0;
  for (std::size_t c : clips) {
    const auto per_depth = depth_mse(codec, corpus.clips[c].motion);
    bool ok = true;
    for (std::size_t d = 0; d < per_depth.size(); ++d) {
      r.relative_mse[d] += per_depth[d] / (r.variance * static_cast<double>(clips.size()));
      if (d > 0 && per_depth[d] > per_depth[d - 1]) ok = false;
    }
    monotone += ok ? 1 : 0;
  }
  r.monotone_share = static_cast<double>(monotone) / static_cast<double>(clips.size());
  return r;
}

inline Codec stage_train_codec(const PipelineSettings& s, const Corpus& corpus, const LogSink& log = {}) {
  Codec codec(s.codec, s.codec_init_seed);
  train_codec(codec, corpus, corpus.indices(Split::kTrain), s.codec_train, log);
  std::filesystem::create_directories(s.workdir);
  codec.to_checkpoint(s.codec_init_seed).write(s.path("codec.ckpt").string());
  const CodecReport r = codec_report(codec, corpus, corpus.indices(Split::kVal));
  LogRecord rec("done");
  rec.kv("stage", "codec").kv("checksum", to_hex(codec.checksum())).kv("val_monotone", r.monotone_share);
  for (std::size_t d = 0; d < r.relative_mse.size(); ++d) rec.kv("val_rel_mse_d" + std::to_string(d + 1), r.relative_mse[d]);
  rec.emit(log);
  return codec;
}

inline ArModel stage_train_ar(const PipelineSettings& s, const Corpus& corpus, const Codec& codec,
                              const LogSink& log = {}) {
  ArModel model(s.ar, s.ar_init_seed);
  train_ar(model, codec, corpus, corpus.indices(Split::kTrain), s.ar_train, corpus.indices(Split::kVal), log);
  model.to_checkpoint(s.ar_init_seed).write(s.path("ar.ckpt").string());
  return model;
}

inline SyncNet stage_train_sync(const PipelineSettings& s, const Corpus& corpus, SyncVariant variant,
                                const LogSink& log = {}) {
  SyncConfig cfg = s.sync;
  cfg.variant = variant;
  SyncNet net(cfg, s.sync_init_seed);
  train_sync_net(net, sync_clips(corpus, corpus.indices(Split::kTrain)), s.sync_train, log);
  std::filesystem::create_directories(s.workdir);
  net.to_checkpoint(s.sync_init_seed)
      .write(s.path(variant == SyncVariant::kFusion ? "sync_fusion.ckpt" : "sync_cosine.ckpt").string());
  return net;
}

inline StyleNet stage_train_style(const PipelineSettings& s, const Corpus& corpus, const LogSink& log = {}) {
  StyleNet net(s.style, s.style_init_seed);
  train_style_net(net, corpus, corpus.indices(Split::kTrain), s.style_train, log);
  std::filesystem::create_directories(s.workdir);
  net.to_checkpoint(s.style_init_seed).write(s.path("style.ckpt").string());
  return net;
}

/// Generates `generate.samples` sequences for each of the first
/// `generate.clips` clips of `generate.split`.
inline std::size_t stage_generate(const PipelineSettings& s, const Corpus& corpus, const Codec& codec,
                                  const ArModel& model, const SyncNet* rejection, const LogSink& log = {}) {
  const auto clips = corpus.indices(parse_split(s.generate_split));
  const std::size_t n = std::min(s.generate_clips, clips.size());
  const auto dir = s.path("generated");
  std::filesystem::create_directories(dir);
  std::size_t written = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = clips[i];
    const auto& ref = corpus.clips[corpus.fixed_reference_for(c)].motion;
    SamplingConfig sc = s.sampling;
    sc.seed = s.sampling.seed * 1000003u + c;
    const auto out = generate(model, codec, corpus.clips[c].signal, ref.values, ref.frames, sc, s.generate_samples,
                              corpus.lip, rejection);
    for (std::size_t k = 0; k < out.size(); ++k) {
      const std::string stem = "clip" + std::to_string(c) + "_sample" + std::to_string(k);
      write_motion(out[k].motion, (dir / (stem + ".rvqm")).string());
      write_grid(out[k].grid, (dir / (stem + ".rvqj")).string());
      ++written;
    }
  }
  LogRecord("done").kv("stage", "generate").kv("strategy", strategy_name(s.sampling.strategy)).kv("files", written).emit(log);
  return written;
}

inline ArModel stage_distill(const PipelineSettings& s, const Corpus& corpus, const Codec& codec,
                             const ArModel& teacher, const SyncNet* rejection, const LogSink& log = {}) {
  ArModel student = distill(teacher, codec, corpus, corpus.indices(Split::kTrain), s.distill, rejection, log,
                            s.student_init_seed);
  student.to_checkpoint(s.student_init_seed).write(s.path("student.ckpt").string());
  return student;
}

inline EvalReport stage_evaluate(const PipelineSettings& s, const Corpus& corpus, const EvalModels& models,
                                 const ArModel* student, const LogSink& log = {}) {
  std::vector<EvalMethod> methods;
  for (const auto& spec : s.eval_methods) methods.push_back(s.method(spec));
  if (s.eval_constant_style) {
    EvalMethod m = s.method("default");
    m.tag = "default_constant_style";
    m.constant_style = true;
    methods.push_back(m);
  }
  if (student) {
    EvalMethod m = s.method("default");
    m.tag = "student";
    m.model = student;
    methods.push_back(m);
  }
  const EvalReport report = evaluate(models, corpus, corpus.indices(Split::kTest), methods, s.eval, log);
  write_text(s.path("eval.txt"), report.table());
  write_text(s.path("eval.kv"), report.key_values());
  return report;
}

}  // namespace rvqmotion
