#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "gradapprox/layers.hpp"

namespace gradapprox {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double lr0 = 1e-3;
  double decay = 0.95;  // learning-rate factor per epoch
};

// Bias-corrected Adam on one parameter array. t is the 1-based step count.
template <typename T>
void adam_update(T *p, const T *g, T *m, T *v, std::size_t len, long t, double lr,
                 const AdamConfig &cfg) {
  const double b1c = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double b2c = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < len; ++i) {
    const double gi = g[i];
    const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
    const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    p[i] -= static_cast<T>(lr * (mi / b1c) / (std::sqrt(vi / b2c) + cfg.eps));
  }
}

template <typename T>
class Adam {
 public:
  explicit Adam(const AdamConfig &cfg = {}) : cfg_(cfg) {}

  void init(const std::vector<ParamRef<T>> &params) {
    slots_.clear();
    for (const auto &p : params)
      slots_.push_back({std::vector<T>(p.value->size(), T(0)),
                        std::vector<T>(p.value->size(), T(0))});
    t_ = 0;
  }

  // One optimizer step over all parameters at the given epoch's decayed rate.
  void step(const std::vector<ParamRef<T>> &params, int epoch) {
    if (params.size() != slots_.size())
      throw std::invalid_argument("adam: parameter list does not match init");
    ++t_;
    const double lr = cfg_.lr0 * std::pow(cfg_.decay, static_cast<double>(epoch));
    for (std::size_t i = 0; i < params.size(); ++i)
      adam_update(params[i].value->data(), params[i].grad->data(), slots_[i].m.data(),
                  slots_[i].v.data(), params[i].value->size(), t_, lr, cfg_);
  }

  long steps() const { return t_; }
  const AdamConfig &config() const { return cfg_; }

 private:
  struct Slot {
    std::vector<T> m, v;
  };
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  long t_ = 0;
};

}  // namespace gradapprox
