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

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rvqmotion/core/ops.hpp"

namespace rvqmotion {

/// A trainable tensor together with its Adam moment accumulators.
struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
  std::uint64_t step = 0;

  std::span<const double> grad() const { return value.grad(); }
};

/// Ordered, name-addressable collection of parameters. Addresses are stable
/// for the lifetime of the set, so layers may hold `Parameter*`.
class ParameterSet {
 public:
  Parameter& add(const std::string& name, Shape shape, std::vector<double> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Tensor(std::move(shape), std::move(init), /*requires_grad=*/true);
    p->first_moment.assign(p->value.numel(), 0.0);
    p->second_moment.assign(p->value.numel(), 0.0);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  /// Uniform(-bound, bound) initialization.
  Parameter& add_uniform(const std::string& name, Shape shape, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> init(shape_numel(shape));
    for (double& v : init) v = dist(rng);
    return add(name, std::move(shape), std::move(init));
  }

  Parameter& add_constant(const std::string& name, Shape shape, double value) {
    std::vector<double> init(shape_numel(shape), value);
    return add(name, std::move(shape), std::move(init));
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t total_values() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->value.zero_grad();
  }

  /// Copies values (not optimizer state) from a set with identical layout.
  void copy_values_from(const ParameterSet& other) {
    if (other.size() != size()) throw ShapeError("parameter sets differ in size");
    for (std::size_t i = 0; i < size(); ++i) {
      if (other[i].name != params_[i]->name || other[i].value.shape() != params_[i]->value.shape()) {
        throw ShapeError("parameter layout mismatch at " + params_[i]->name);
      }
      auto dst = params_[i]->value.mutable_data();
      std::copy(other[i].value.data().begin(), other[i].value.data().end(), dst.begin());
    }
  }

  void reset_optimizer_state() {
    for (auto& p : params_) {
      std::fill(p->first_moment.begin(), p->first_moment.end(), 0.0);
      std::fill(p->second_moment.begin(), p->second_moment.end(), 0.0);
      p->step = 0;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, std::size_t> index_;
};

enum class LayerKind { kDense, kConv1d, kSelfAttention, kLayerNorm };

/// Architecture of one layer as plain data.
struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  std::size_t in = 0;   // input width
  std::size_t out = 0;  // output width (attention and layer norm: equal to in)
  std::size_t kernel = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::kCausal;
  std::size_t heads = 1;
  bool causal = true;
  std::size_t max_positions = 0;  // attention: rows of the learned positional table, 0 for none
  bool zero_init = false;         // dense/conv: start from all-zero weights

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel, Padding padding,
                        std::size_t dilation = 1) {
    LayerSpec s;
    s.kind = LayerKind::kConv1d;
    s.in = in;
    s.out = out;
    s.kernel = kernel;
    s.padding = padding;
    s.dilation = dilation;
    return s;
  }
  static LayerSpec attention(std::size_t width, std::size_t heads, bool causal, std::size_t max_positions = 0) {
    LayerSpec s;
    s.kind = LayerKind::kSelfAttention;
    s.in = s.out = width;
    s.heads = heads;
    s.causal = causal;
    s.max_positions = max_positions;
    return s;
  }
  static LayerSpec layer_norm(std::size_t width) {
    LayerSpec s;
    s.kind = LayerKind::kLayerNorm;
    s.in = s.out = width;
    return s;
  }

  std::string to_string() const {
    static const char* kKinds[] = {"dense", "conv1d", "attention", "layernorm"};
    static const char* kPads[] = {"causal", "same", "replicate"};
    std::ostringstream os;
    os << kKinds[static_cast<int>(kind)] << " in=" << in << " out=" << out;
    if (kind == LayerKind::kConv1d) {
      os << " kernel=" << kernel << " dilation=" << dilation << " padding=" << kPads[static_cast<int>(padding)];
    }
    if (kind == LayerKind::kSelfAttention) {
      os << " heads=" << heads << " causal=" << (causal ? 1 : 0) << " positions=" << max_positions;
    }
    return os.str();
  }
};

/// A layer instantiated from a LayerSpec; owns its parameters through the
/// ParameterSet it was registered with.
class Layer {
 public:
  Layer() = default;

  Layer(const LayerSpec& spec, ParameterSet& params, const std::string& prefix, std::mt19937_64& rng)
      : spec_(spec), prefix_(prefix) {
    switch (spec.kind) {
      case LayerKind::kDense:
        w_ = spec.zero_init ? &params.add_constant(prefix + ".w", {spec.in, spec.out}, 0.0)
                            : add_weight(params, prefix + ".w", {spec.in, spec.out}, spec.in, rng);
        b_ = &params.add_constant(prefix + ".b", {spec.out}, 0.0);
        break;
      case LayerKind::kConv1d:
        if (spec.padding != Padding::kCausal && spec.kernel % 2 == 0) {
          throw ShapeError("layer " + prefix + ": centered convolution needs an odd kernel");
        }
        w_ = spec.zero_init
                 ? &params.add_constant(prefix + ".w", {spec.kernel * spec.in, spec.out}, 0.0)
                 : add_weight(params, prefix + ".w", {spec.kernel * spec.in, spec.out}, spec.kernel * spec.in, rng);
        b_ = &params.add_constant(prefix + ".b", {spec.out}, 0.0);
        break;
      case LayerKind::kSelfAttention:
        if (spec.heads == 0 || spec.in % spec.heads != 0) {
          throw ShapeError("layer " + prefix + ": width not divisible by heads");
        }
        w_ = add_weight(params, prefix + ".qkv.w", {spec.in, 3 * spec.in}, spec.in, rng);
        b_ = &params.add_constant(prefix + ".qkv.b", {3 * spec.in}, 0.0);
        wo_ = add_weight(params, prefix + ".out.w", {spec.in, spec.in}, spec.in, rng);
        bo_ = &params.add_constant(prefix + ".out.b", {spec.in}, 0.0);
        if (spec.max_positions > 0) {
          pos_ = &params.add_uniform(prefix + ".pos", {spec.max_positions, spec.in}, 0.1, rng);
        }
        break;
      case LayerKind::kLayerNorm:
        w_ = &params.add_constant(prefix + ".gamma", {spec.in}, 1.0);
        b_ = &params.add_constant(prefix + ".beta", {spec.in}, 0.0);
        break;
    }
  }

  const LayerSpec& spec() const { return spec_; }

  /// `seq_len` is the number of consecutive rows forming one sequence (time
  /// axis for convolutions, group length for attention).
  Tensor forward(const Tensor& x, std::size_t seq_len = 1) const {
    detail::require_2d(x, "layer");
    if (x.cols() != spec_.in) {
      throw ShapeError("layer " + prefix_ + " (" + spec_.to_string() + "): expected input width " +
                       std::to_string(spec_.in) + ", got " + shape_str(x.shape()));
    }
    switch (spec_.kind) {
      case LayerKind::kDense:
        return linear(x, w_->value, b_->value);
      case LayerKind::kConv1d:
        return conv1d(x, w_->value, b_->value, ConvGeometry{seq_len, spec_.kernel, spec_.dilation, spec_.padding});
      case LayerKind::kSelfAttention: {
        if (spec_.max_positions > 0 && seq_len > spec_.max_positions) {
          throw ShapeError("layer " + prefix_ + ": sequence of " + std::to_string(seq_len) +
                           " exceeds positional table of " + std::to_string(spec_.max_positions));
        }
        const Tensor in = pos_ ? add_positional(x, pos_->value, seq_len) : x;
        const Tensor qkv = linear(in, w_->value, b_->value);
        const std::size_t H = spec_.in;
        const Tensor q = column_block(qkv, 0, H);
        const Tensor k = column_block(qkv, H, H);
        const Tensor v = column_block(qkv, 2 * H, H);
        const Tensor att = grouped_attention(q, k, v, seq_len, spec_.heads, spec_.causal);
        return linear(att, wo_->value, bo_->value);
      }
      case LayerKind::kLayerNorm:
        return layer_norm(x, w_->value, b_->value);
    }
    return x;
  }

 private:
  static Parameter* add_weight(ParameterSet& params, const std::string& name, Shape shape, std::size_t fan_in,
                               std::mt19937_64& rng) {
    return &params.add_uniform(name, std::move(shape), 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
  }

  static Tensor column_block(const Tensor& x, std::size_t start, std::size_t width) {
    const std::size_t m = x.rows(), n = x.cols();
    std::vector<double> out(m * width);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(x.data().data() + r * n + start, width, out.data() + r * width);
    return detail::make_result({m, width}, std::move(out), {&x}, [m, n, start, width](detail::Node& self) {
      if (double* g = detail::parent_grad(self, 0)) {
        for (std::size_t r = 0; r < m; ++r) {
          for (std::size_t c = 0; c < width; ++c) g[r * n + start + c] += self.grad[r * width + c];
        }
      }
    });
  }

  LayerSpec spec_;
  std::string prefix_;
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  Parameter* wo_ = nullptr;
  Parameter* bo_ = nullptr;
  Parameter* pos_ = nullptr;

 public:
  Parameter* weight() const { return w_; }
  Parameter* bias() const { return b_; }
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, std::size_t mlp_width, bool causal, ParameterSet& params,
                   const std::string& prefix, std::mt19937_64& rng)
      : norm1_(LayerSpec::layer_norm(width), params, prefix + ".ln1", rng),
        attn_(LayerSpec::attention(width, heads, causal), params, prefix + ".attn", rng),
        norm2_(LayerSpec::layer_norm(width), params, prefix + ".ln2", rng),
        fc1_(LayerSpec::dense(width, mlp_width), params, prefix + ".fc1", rng),
        fc2_(LayerSpec::dense(mlp_width, width), params, prefix + ".fc2", rng) {}

  Tensor forward(const Tensor& x, std::size_t group_len) const {
    Tensor h = add(x, attn_.forward(norm1_.forward(x), group_len));
    return add(h, fc2_.forward(leaky_relu(fc1_.forward(norm2_.forward(h)))));
  }

 private:
  Layer norm1_, attn_, norm2_, fc1_, fc2_;
};

}  // namespace rvqmotion
