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

// Synthetic paired corpus with a one-to-many signal-to-motion relation.
//
// The driving signal is a piecewise-linear walk between "phoneme" prototypes.
// Lip vertices are a deterministic per-speaker function of the current signal
// frame; upper vertices carry a speaker offset, a weak signal coupling and a
// per-speaker AR(1) noise process, so resampling with the same signal leaves
// the lip region unchanged and moves the upper region.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvqmotion/data/sequence.hpp"

namespace rvqmotion {

struct CorpusConfig {
  std::size_t speakers = 64;
  std::size_t clips_per_speaker = 16;
  std::size_t frames = 32;
  std::size_t vertices = 20;
  std::size_t signal_dim = 8;
  std::size_t phonemes = 6;
  double upper_noise = 0.15;
  double signal_jitter = 0.02;  // per-value Gaussian noise on the driving signal
  double lip_mixing = 0.15;     // scale of the speaker-specific lip mixing matrices
  std::uint64_t seed = 1;

  void validate() const {
    if (speakers == 0 || clips_per_speaker == 0 || frames == 0 || vertices == 0 || signal_dim == 0 || phonemes == 0) {
      throw std::invalid_argument("corpus counts must all be >= 1");
    }
    if (!(upper_noise >= 0.0) || !std::isfinite(upper_noise)) throw std::invalid_argument("upper_noise must be >= 0");
    if (!(lip_mixing >= 0.0) || !std::isfinite(lip_mixing)) throw std::invalid_argument("lip_mixing must be >= 0");
    if (!(signal_jitter >= 0.0) || !std::isfinite(signal_jitter)) {
      throw std::invalid_argument("signal_jitter must be >= 0");
    }
  }
};

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

/// Disjoint speaker splits: one eighth each for validation and test.
inline Split speaker_split(std::size_t speaker, std::size_t num_speakers) {
  const std::size_t held = num_speakers / 8;
  if (speaker >= num_speakers - held) return Split::kTest;
  if (speaker >= num_speakers - 2 * held) return Split::kVal;
  return Split::kTrain;
}

inline std::vector<std::uint32_t> lip_vertices(std::size_t vertices) {
  std::vector<std::uint32_t> lip(std::max<std::size_t>(1, vertices / 2));
  for (std::size_t i = 0; i < lip.size(); ++i) lip[i] = static_cast<std::uint32_t>(i);
  return lip;
}

struct SpeakerProfile {
  std::size_t id = 0;
  std::vector<double> style;   // latent style coordinates
  double amplitude = 1.0;      // lip articulation scale
  double noise = 0.0;          // stationary std of the upper-region process
  std::vector<double> offset;  // [3V] resting displacement
  std::vector<double> mixing;  // [3*lip, signal_dim] idiosyncratic lip map
};

struct Clip {
  std::size_t speaker = 0;
  std::size_t index = 0;
  Split split = Split::kTrain;
  MotionSequence motion;
  SignalSequence signal;
};

/// Fixed random world (prototypes, lip map, style bases) plus speakers.
class CorpusGenerator {
 public:
  static constexpr std::size_t kStyleDims = 4;
  static constexpr std::size_t kNoiseDims = 3;
  static constexpr double kNoiseCorrelation = 0.8;

  explicit CorpusGenerator(const CorpusConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const std::size_t Dy = cfg.signal_dim, W = 3 * cfg.vertices;
    lip_ = lip_vertices(cfg.vertices);
    lip_dims_ = 3 * lip_.size();
    up_dims_ = W - lip_dims_;
    const double sy = 1.0 / std::sqrt(static_cast<double>(Dy));

    prototypes_.resize(cfg.phonemes * Dy);
    for (double& v : prototypes_) v = n01(rng);
    lip_map_.resize(lip_dims_ * Dy);
    for (double& v : lip_map_) v = n01(rng) * sy;
    style_basis_.resize(kStyleDims * W);
    for (double& v : style_basis_) v = n01(rng);
    mixing_basis_.resize(kStyleDims * lip_dims_ * Dy);
    for (double& v : mixing_basis_) v = cfg.lip_mixing * n01(rng) * sy;
    noise_basis_.resize(up_dims_ * kNoiseDims);
    for (double& v : noise_basis_) v = n01(rng);
    upper_coupling_.resize(up_dims_ * Dy);
    for (double& v : upper_coupling_) v = n01(rng) * sy;

    std::uniform_real_distribution<double> amp(0.6, 1.4), noise(0.5, 1.0);
    for (std::size_t s = 0; s < cfg.speakers; ++s) {
      SpeakerProfile p;
      p.id = s;
      p.style.resize(kStyleDims);
      for (double& c : p.style) c = n01(rng);
      p.amplitude = amp(rng);
      p.noise = cfg.upper_noise * noise(rng);
      p.offset.assign(W, 0.0);
      p.mixing.assign(lip_dims_ * Dy, 0.0);
      for (std::size_t k = 0; k < kStyleDims; ++k) {
        for (std::size_t i = 0; i < W; ++i) p.offset[i] += 0.25 * p.style[k] * style_basis_[k * W + i];
        for (std::size_t i = 0; i < lip_dims_ * Dy; ++i) {
          p.mixing[i] += p.style[k] * mixing_basis_[k * lip_dims_ * Dy + i];
        }
      }
      speakers_.push_back(std::move(p));
    }
  }

  const CorpusConfig& config() const { return cfg_; }
  const std::vector<SpeakerProfile>& speakers() const { return speakers_; }
  const std::vector<std::uint32_t>& lip() const { return lip_; }

  /// Piecewise-linear walk through random prototypes, segments of 2-5 frames.
  SignalSequence signal(std::mt19937_64& rng) const {
    const std::size_t T = cfg_.frames, Dy = cfg_.signal_dim;
    std::uniform_int_distribution<std::size_t> pick(0, cfg_.phonemes - 1);
    std::uniform_int_distribution<std::size_t> seg(2, 5);
    std::normal_distribution<double> jitter(0.0, cfg_.signal_jitter);
    SignalSequence y(T, Dy);
    std::size_t from = pick(rng), t = 0;
    while (t < T) {
      const std::size_t to = pick(rng), len = seg(rng);
      for (std::size_t k = 0; k < len && t < T; ++k, ++t) {
        const double a = static_cast<double>(k) / static_cast<double>(len);
        for (std::size_t c = 0; c < Dy; ++c) {
          y.at(t, c) = (1.0 - a) * prototypes_[from * Dy + c] + a * prototypes_[to * Dy + c];
        }
      }
      from = to;
    }
    if (cfg_.signal_jitter > 0.0) {
      for (double& v : y.values) v += jitter(rng);
    }
    return y;
  }

  /// Motion for `speaker` driven by `y`; only the upper region consumes `rng`.
  MotionSequence motion(std::size_t speaker, const SignalSequence& y, std::mt19937_64& rng) const {
    const SpeakerProfile& p = speakers_.at(speaker);
    const std::size_t T = y.frames, Dy = cfg_.signal_dim;
    if (y.dim != Dy) throw ShapeError("signal dimension does not match the corpus");
    MotionSequence m(T, cfg_.vertices, lip_);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double rho = kNoiseCorrelation;
    const double innovation = std::sqrt(1.0 - rho * rho);
    std::vector<double> eta(kNoiseDims);
    for (double& e : eta) e = p.noise * n01(rng);
    const double noise_scale = 1.0 / std::sqrt(static_cast<double>(kNoiseDims));
    for (std::size_t t = 0; t < T; ++t) {
      if (t > 0) {
        for (double& e : eta) e = rho * e + innovation * p.noise * n01(rng);
      }
      for (std::size_t i = 0; i < lip_dims_; ++i) {
        double pre = 0.0;
        for (std::size_t c = 0; c < Dy; ++c) pre += (lip_map_[i * Dy + c] + p.mixing[i * Dy + c]) * y.at(t, c);
        m.at(t, i) = p.amplitude * std::tanh(pre) + p.offset[i];
      }
      for (std::size_t u = 0; u < up_dims_; ++u) {
        const std::size_t i = lip_dims_ + u;
        double coupled = 0.0;
        for (std::size_t c = 0; c < Dy; ++c) coupled += upper_coupling_[u * Dy + c] * y.at(t, c);
        double noise = 0.0;
        for (std::size_t k = 0; k < kNoiseDims; ++k) noise += noise_basis_[u * kNoiseDims + k] * eta[k];
        m.at(t, i) = p.offset[i] + noise_scale * noise + 0.3 * p.amplitude * std::tanh(coupled);
      }
    }
    return m;
  }

  static std::mt19937_64 clip_rng(std::uint64_t seed, std::size_t speaker, std::size_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(speaker), static_cast<std::uint32_t>(index)};
    return std::mt19937_64(seq);
  }

 private:
  CorpusConfig cfg_;
  std::vector<std::uint32_t> lip_;
  std::size_t lip_dims_ = 0, up_dims_ = 0;
  std::vector<double> prototypes_, lip_map_, style_basis_, mixing_basis_, noise_basis_, upper_coupling_;
  std::vector<SpeakerProfile> speakers_;
};

struct Corpus {
  std::vector<Clip> clips;
  std::vector<std::uint32_t> lip;
  std::size_t num_speakers = 0;

  std::size_t frames() const { return clips.front().motion.frames; }
  std::size_t vertices() const { return clips.front().motion.vertices; }
  std::size_t signal_dim() const { return clips.front().signal.dim; }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (clips[i].split == split) out.push_back(i);
    }
    return out;
  }

  std::vector<std::size_t> speakers_in(Split split) const {
    std::vector<std::size_t> out;
    for (const Clip& c : clips) {
      if (c.split == split && std::find(out.begin(), out.end(), c.speaker) == out.end()) out.push_back(c.speaker);
    }
    return out;
  }

  std::vector<std::size_t> clips_of_speaker(std::size_t speaker) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      if (clips[i].speaker == speaker) out.push_back(i);
    }
    return out;
  }

  /// A different clip of the same speaker (the clip itself when it is the only one).
  std::size_t reference_for(std::size_t clip, std::mt19937_64& rng) const {
    const auto same = clips_of_speaker(clips.at(clip).speaker);
    if (same.size() == 1) return clip;
    std::uniform_int_distribution<std::size_t> pick(0, same.size() - 2);
    std::size_t k = pick(rng);
    if (same[k] >= clip) ++k;
    return same[k];
  }

  /// Deterministic reference: the next clip of the same speaker, cyclically.
  std::size_t fixed_reference_for(std::size_t clip) const {
    const auto same = clips_of_speaker(clips.at(clip).speaker);
    const auto it = std::find(same.begin(), same.end(), clip);
    return same[(static_cast<std::size_t>(it - same.begin()) + 1) % same.size()];
  }
};

inline Corpus generate_corpus(const CorpusConfig& cfg) {
  CorpusGenerator gen(cfg);
  Corpus corpus;
  corpus.lip = gen.lip();
  corpus.num_speakers = cfg.speakers;
  for (std::size_t s = 0; s < cfg.speakers; ++s) {
    for (std::size_t k = 0; k < cfg.clips_per_speaker; ++k) {
      auto rng = CorpusGenerator::clip_rng(cfg.seed, s, k);
      Clip c;
      c.speaker = s;
      c.index = k;
      c.split = speaker_split(s, cfg.speakers);
      c.signal = gen.signal(rng);
      c.motion = gen.motion(s, c.signal, rng);
      corpus.clips.push_back(std::move(c));
    }
  }
  return corpus;
}

/// Writes one motion and one signal file per clip plus `manifest.txt` with
/// lines "speaker split motion_path signal_path" (paths relative to `dir`).
inline void write_corpus(const Corpus& corpus, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "clips");
  std::ostringstream manifest;
  manifest << "# speaker split motion signal\n";
  for (const Clip& c : corpus.clips) {
    const std::string stem = "clips/s" + std::to_string(c.speaker) + "_c" + std::to_string(c.index);
    write_motion(c.motion, (fs::path(dir) / (stem + ".rvqm")).string());
    write_signal(c.signal, (fs::path(dir) / (stem + ".rvqy")).string());
    manifest << c.speaker << ' ' << split_name(c.split) << ' ' << stem << ".rvqm " << stem << ".rvqy\n";
  }
  std::ofstream out(fs::path(dir) / "manifest.txt");
  if (!out) throw FormatError(FormatError::Kind::kIo, "cannot write manifest in " + dir);
  out << manifest.str();
}

inline Corpus read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = fs::path(dir) / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(FormatError::Kind::kIo, "cannot open " + manifest_path.string());
  Corpus corpus;
  std::string line;
  std::size_t max_speaker = 0, line_no = 0;
  std::vector<std::size_t> next_index;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Clip c;
    std::string split, motion, signal;
    if (!(ls >> c.speaker >> split >> motion >> signal)) {
      throw FormatError(FormatError::Kind::kInvalidContent,
                        manifest_path.string() + ":" + std::to_string(line_no) + ": malformed manifest line");
    }
    try {
      c.split = parse_split(split);
    } catch (const std::invalid_argument& e) {
      throw FormatError(FormatError::Kind::kInvalidContent, manifest_path.string() + ": " + e.what());
    }
    c.motion = read_motion((fs::path(dir) / motion).string());
    c.signal = read_signal((fs::path(dir) / signal).string());
    if (c.motion.frames != c.signal.frames) {
      throw FormatError(FormatError::Kind::kInvalidContent, motion + ": frame count differs from its signal");
    }
    if (next_index.size() <= c.speaker) next_index.resize(c.speaker + 1, 0);
    c.index = next_index[c.speaker]++;
    max_speaker = std::max(max_speaker, c.speaker);
    corpus.clips.push_back(std::move(c));
  }
  if (corpus.clips.empty()) throw FormatError(FormatError::Kind::kInvalidContent, manifest_path.string() + ": no clips");
  corpus.lip = corpus.clips.front().motion.lip;
  corpus.num_speakers = max_speaker + 1;
  return corpus;
}

}  // namespace rvqmotion
