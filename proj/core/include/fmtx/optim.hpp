#pragma once

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fmtx/tensor.hpp"

namespace fmtx {

template <class T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.98);
  T eps = T(1e-9);
  T clip_norm = T(5);   // global-norm clipping, applied before moments
  long warmup = 200;    // linear warmup, then inverse-sqrt decay
  bool sqrt_decay = true;
};

// Adam over a fixed parameter set. Gradients are clipped by global norm
// before the moment update; learning rate ramps linearly over the warmup
// then decays as sqrt(warmup/step).
template <class T>
class Adam {
 public:
  explicit Adam(AdamConfig<T> cfg = {}) : cfg_(cfg) {}

  long step_count() const { return step_; }
  const AdamConfig<T>& config() const { return cfg_; }

  T current_lr() const { return lr_at(step_ == 0 ? 1 : step_); }

  T lr_at(long step) const {
    T s = static_cast<T>(step);
    T w = static_cast<T>(cfg_.warmup > 0 ? cfg_.warmup : 1);
    T ramp = cfg_.warmup > 0 ? std::min(T(1), s / w) : T(1);
    T decay = (cfg_.sqrt_decay && s > w) ? std::sqrt(w / s) : T(1);
    return cfg_.lr * ramp * decay;
  }

  // Scales all grads in place so the global norm is at most clip_norm;
  // returns the pre-clip norm.
  T clip_grads(std::vector<Tensor<T>>& params) const {
    double sq = 0;
    for (auto& p : params) {
      if (!p.has_grad()) throw std::invalid_argument("adam: parameter missing grad");
      for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    T norm = static_cast<T>(std::sqrt(sq));
    if (cfg_.clip_norm > T(0) && norm > cfg_.clip_norm) {
      T s = cfg_.clip_norm / norm;
      for (auto& p : params)
        for (T& g : p.grad()) g *= s;
    }
    return norm;
  }

  void step(std::vector<Tensor<T>>& params) {
    clip_grads(params);
    ++step_;
    T lr = lr_at(step_);
    T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(step_));
    T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(step_));
    for (auto& p : params) {
      Moments& mo = state_[p.id()];
      if (mo.m.empty()) {
        mo.m.assign(p.size(), T(0));
        mo.v.assign(p.size(), T(0));
      }
      auto& g = p.grad();
      auto& w = p.values();
      for (long i = 0; i < p.size(); ++i) {
        mo.m[i] = cfg_.beta1 * mo.m[i] + (T(1) - cfg_.beta1) * g[i];
        mo.v[i] = cfg_.beta2 * mo.v[i] + (T(1) - cfg_.beta2) * g[i] * g[i];
        T mhat = mo.m[i] / bc1;
        T vhat = mo.v[i] / bc2;
        w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
      p.zero_grad();
    }
  }

  void reset() {
    state_.clear();
    step_ = 0;
  }

  // Serialization hooks so training can resume bit-exactly.
  struct Moments {
    std::vector<T> m, v;
  };
  std::unordered_map<const void*, Moments>& state() { return state_; }
  void set_step_count(long s) { step_ = s; }

 private:
  AdamConfig<T> cfg_;
  std::unordered_map<const void*, Moments> state_;
  long step_ = 0;
};

}  // namespace fmtx
