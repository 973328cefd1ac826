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

#include <cmath>
#include <numbers>
#include <string>

#include "rvqmotion/core/layers.hpp"
#include "rvqmotion/core/log.hpp"

namespace rvqmotion {

/// Training stopped on a non-finite loss or gradient; parameters were rolled
/// back to the last finite state.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t epoch) : NumericError(what), epoch_(epoch) {}
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 0.0;  // global gradient-norm clip, 0 disables
};

/// Cosine decay from `base` at epoch 0 to `base * final_fraction` at the last epoch.
inline double cosine_lr(double base, double final_fraction, std::size_t epoch, std::size_t epochs) {
  if (epochs <= 1) return base;
  const double progress = static_cast<double>(epoch) / static_cast<double>(epochs - 1);
  const double floor = base * final_fraction;
  return floor + 0.5 * (base - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// One bias-corrected Adam update over every parameter in the set. Throws
/// NumericError, leaving all parameters untouched, if any gradient is not finite.
inline void adam_step(ParameterSet& params, const AdamConfig& cfg) {
  double sq_norm = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params[i].grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + params[i].name);
      sq_norm += g * g;
    }
  }
  double clip = 1.0;
  if (cfg.clip_norm > 0.0 && std::sqrt(sq_norm) > cfg.clip_norm) clip = cfg.clip_norm / std::sqrt(sq_norm);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    const auto grad = p.grad();
    auto value = p.value.mutable_data();
    p.step += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p.step));
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k] * clip;
      p.first_moment[k] = cfg.beta1 * p.first_moment[k] + (1.0 - cfg.beta1) * g;
      p.second_moment[k] = cfg.beta2 * p.second_moment[k] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.first_moment[k] / c1;
      const double v_hat = p.second_moment[k] / c2;
      value[k] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

/// Adam under a cosine schedule that rolls the parameters back to the end of
/// the last completed epoch, logs and throws DivergenceError on a non-finite
/// loss or gradient.
class GuardedAdam {
 public:
  GuardedAdam(ParameterSet& params, const AdamConfig& cfg, double final_lr_fraction, std::size_t epochs,
              std::string stage, LogSink log = {})
      : params_(params), cfg_(cfg), base_lr_(cfg.lr), final_fraction_(final_lr_fraction), epochs_(epochs),
        stage_(std::move(stage)), log_(std::move(log)) {
    snapshot();
  }

  void begin_epoch(std::size_t epoch) {
    epoch_ = epoch;
    cfg_.lr = cosine_lr(base_lr_, final_fraction_, epoch, epochs_);
  }

  /// Backpropagates `loss` and applies one update; returns the loss value.
  double step(const Tensor& loss) {
    const double value = loss.item();
    if (!std::isfinite(value)) diverge("non-finite loss");
    params_.zero_grad();
    backward(loss);
    try {
      adam_step(params_, cfg_);
    } catch (const NumericError& e) {
      diverge(e.what());
    }
    return value;
  }

  void end_epoch() { snapshot(); }

 private:
  void snapshot() {
    last_good_ = ParameterSet();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      last_good_.add(params_[i].name, params_[i].value.shape(), params_[i].value.values());
    }
  }

  [[noreturn]] void diverge(const std::string& why) {
    params_.copy_values_from(last_good_);
    LogRecord("diverged").kv("stage", stage_).kv("epoch", epoch_).kv("reason", why).emit(log_);
    throw DivergenceError(stage_ + " training diverged in epoch " + std::to_string(epoch_) + ": " + why, epoch_);
  }

  ParameterSet& params_;
  AdamConfig cfg_;
  double base_lr_;
  double final_fraction_;
  std::size_t epochs_;
  std::string stage_;
  LogSink log_;
  ParameterSet last_good_;
  std::size_t epoch_ = 0;
};

}  // namespace rvqmotion
