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

// Central finite-difference oracle for gradient checks, plus one random
// instance per layer kind. Shared by the unit and acceptance suites.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "rvqmotion/core/layers.hpp"

namespace rvqmotion::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

/// Reduces an arbitrary output to a scalar with fixed random weights so that
/// every output element contributes a distinct gradient.
inline Tensor weighted_sum(const Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(out.shape(), rng, false);
  return sum(mul(out, w));
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_input;
};

/// Compares backward() against central differences with step `h` for every
/// element of every input. Relative error per input is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8).
inline GradCheckResult grad_check(std::vector<Tensor> inputs,
                                  const std::function<Tensor(const std::vector<Tensor>&)>& f, double h = 1e-5) {
  for (Tensor& t : inputs) t.zero_grad();
  Tensor loss = f(inputs);
  backward(loss);
  GradCheckResult result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    std::vector<double> analytic(inputs[i].grad().begin(), inputs[i].grad().end());
    std::vector<double> numeric(analytic.size());
    auto data = inputs[i].mutable_data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      double fp, fm;
      {
        NoGradGuard guard;
        data[k] = orig + h;
        fp = f(inputs).item();
        data[k] = orig - h;
        fm = f(inputs).item();
      }
      data[k] = orig;
      numeric[k] = (fp - fm) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
      diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
      na += analytic[k] * analytic[k];
      nn += numeric[k] * numeric[k];
    }
    const double rel = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-8});
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_input = "input " + std::to_string(i);
    }
  }
  return result;
}

struct LayerCase {
  std::string name;
  std::function<GradCheckResult(std::mt19937_64&)> run;
};

/// One randomized gradient check per layer kind and differentiable op.
inline std::vector<LayerCase> layer_cases() {
  std::vector<LayerCase> cases;
  auto layer_case = [](std::string name, LayerSpec spec, std::size_t rows, std::size_t seq_len) {
    return LayerCase{name, [spec, rows, seq_len, name](std::mt19937_64& rng) {
                       ParameterSet params;
                       Layer layer(spec, params, name, rng);
                       // Non-trivial affine parameters for layer norm.
                       for (std::size_t i = 0; i < params.size(); ++i) {
                         for (double& v : params[i].value.mutable_data()) {
                           v += std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
                         }
                       }
                       std::vector<Tensor> inputs{random_tensor({rows, spec.in}, rng)};
                       for (std::size_t i = 0; i < params.size(); ++i) inputs.push_back(params[i].value);
                       const std::uint64_t wseed = rng();
                       return grad_check(inputs, [&](const std::vector<Tensor>& in) {
                         return weighted_sum(layer.forward(in[0], seq_len), wseed);
                       });
                     }};
  };
  cases.push_back(layer_case("dense", LayerSpec::dense(5, 4), 6, 1));
  cases.push_back(layer_case("conv_causal", LayerSpec::conv(3, 4, 3, Padding::kCausal, 2), 14, 7));
  cases.push_back(layer_case("conv_same", LayerSpec::conv(3, 2, 3, Padding::kSame), 12, 6));
  cases.push_back(layer_case("conv_replicate", LayerSpec::conv(2, 3, 5, Padding::kReplicate), 10, 5));
  cases.push_back(layer_case("attention_causal", LayerSpec::attention(8, 2, true, 6), 12, 4));
  cases.push_back(layer_case("attention_full", LayerSpec::attention(6, 3, false), 6, 3));
  cases.push_back(layer_case("layer_norm", LayerSpec::layer_norm(5), 4, 1));

  cases.push_back({"softmax", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({3, 5}, rng)},
                                       [s](const auto& in) { return weighted_sum(softmax_rows(in[0]), s); });
                   }});
  cases.push_back({"log_softmax", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({3, 5}, rng)},
                                       [s](const auto& in) { return weighted_sum(log_softmax_rows(in[0]), s); });
                   }});
  cases.push_back({"cross_entropy", [](std::mt19937_64& rng) {
                     std::vector<int> tgt(4);
                     for (int& t : tgt) t = static_cast<int>(rng() % 6);
                     return grad_check({random_tensor({4, 6}, rng)},
                                       [tgt](const auto& in) { return cross_entropy(in[0], tgt); });
                   }});
  cases.push_back({"soft_cross_entropy", [](std::mt19937_64& rng) {
                     Tensor q = softmax_rows(random_tensor({4, 6}, rng, false));
                     return grad_check({random_tensor({4, 6}, rng)},
                                       [q](const auto& in) { return soft_cross_entropy(in[0], q); });
                   }});
  cases.push_back({"leaky_tanh_mul", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)}, [s](const auto& in) {
                       return weighted_sum(mul(leaky_relu(in[0]), tanh(sub(in[1], scale(in[0], 0.5)))), s);
                     });
                   }});
  cases.push_back({"mse", [](std::mt19937_64& rng) {
                     return grad_check({random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                                       [](const auto& in) { return mse(in[0], in[1]); });
                   }});
  cases.push_back({"row_plumbing", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     std::vector<RowRef> refs{{1, 0}, {0, 2}, {-1, 0}, {0, 0}, {1, 1}, {0, 2}};
                     return grad_check({random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({5, 4}, rng)},
                                       [s, refs](const auto& in) {
                                         Tensor g = gather_rows({in[0], in[1]}, refs);
                                         Tensor p = add_positional(g, in[2], 3);
                                         return weighted_sum(segment_mean(add_row(p, segment_mean(in[1], 2)), 2), s);
                                       });
                   }});
  cases.push_back({"matmul_nt", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                                       [s](const auto& in) { return weighted_sum(matmul_nt(in[0], in[1]), s); });
                   }});
  cases.push_back({"normalize_rows", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({3, 4}, rng)},
                                       [s](const auto& in) { return weighted_sum(normalize_rows(in[0]), s); });
                   }});
  cases.push_back({"pairwise_add", [](std::mt19937_64& rng) {
                     const std::uint64_t s = rng();
                     return grad_check({random_tensor({6, 3}, rng), random_tensor({4, 3}, rng)},
                                       [s](const auto& in) { return weighted_sum(pairwise_add(in[0], in[1], 2), s); });
                   }});
  cases.push_back({"angular_margin", [](std::mt19937_64& rng) {
                     std::vector<int> tgt{0, 2, 1};
                     return grad_check({random_tensor({3, 4}, rng), random_tensor({4, 4}, rng)}, [tgt](const auto& in) {
                       Tensor emb = normalize_rows(in[0]);
                       Tensor cls = normalize_rows(in[1]);
                       Tensor cos = matmul_nt(emb, cls);
                       return cross_entropy(angular_margin_logits(cos, tgt, 0.3, 4.0), tgt);
                     });
                   }});
  return cases;
}

}  // namespace rvqmotion::testing
