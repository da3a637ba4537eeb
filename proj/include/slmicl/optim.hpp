#pragma once

#include <cmath>

#include "slmicl/tensor.hpp"

namespace slmicl {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 100;  // linear learning-rate ramp
  double clip_norm = 1.0;  // <= 0 disables clipping
};

/// Learning rate at 0-based `step` under the linear ramp.
inline double scheduled_lr(const AdamConfig& cfg, long step) {
  if (cfg.warmup_steps <= 0) return cfg.lr;
  return cfg.lr * std::min(1.0, static_cast<double>(step + 1) / cfg.warmup_steps);
}

/// Scales `grads` in place so its global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParamSet<T>& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / (norm + 1e-12));
    for (auto& t : grads)
      for (auto& v : t.data) v *= scale;
  }
  return norm;
}

template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& params, AdamConfig cfg)
      : cfg_(cfg), m_(params.zeros_like()), v_(params.zeros_like()) {}

  /// Applies one update; `grads` must share the layout of the parameters.
  void step(ParamSet<T>& params, const ParamSet<T>& grads) {
    require(params.same_layout(m_) && grads.same_layout(m_), "adam: mismatched parameter layout");
    ++t_;
    const double lr = scheduled_lr(cfg_, t_ - 1);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].data;
      const auto& g = grads[i].data;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        p[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
      }
    }
  }

  long steps_taken() const { return t_; }
  double current_lr() const { return scheduled_lr(cfg_, t_); }

 private:
  AdamConfig cfg_;
  ParamSet<T> m_, v_;
  long t_ = 0;
};

}  // namespace slmicl
