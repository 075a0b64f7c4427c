#pragma once

#include <cmath>
#include <cstdint>

#include "fshgr/params.hpp"

namespace fshgr {

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(1e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.999);
  T eps = static_cast<T>(1e-8);
};

// Adam with bias correction. State is entry-parallel to the ParamSet it was
// constructed for.
template <typename T>
class Adam {
 public:
  Adam(const ParamSet<T>& ps, AdamConfig<T> cfg) : cfg_(cfg) {
    m_.resize(ps.entries.size());
    v_.resize(ps.entries.size());
    for (std::size_t i = 0; i < ps.entries.size(); ++i) {
      m_[i].assign(ps.entries[i].value.size(), T(0));
      v_[i].assign(ps.entries[i].value.size(), T(0));
    }
  }

  void step(ParamSet<T>& ps, const GradStore<T>& grads) {
    ++t_;
    const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
    const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
    for (std::size_t i = 0; i < ps.entries.size(); ++i) {
      auto& p = ps.entries[i].value;
      const auto& g = grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = cfg_.beta1 * m[j] + (T(1) - cfg_.beta1) * g[j];
        v[j] = cfg_.beta2 * v[j] + (T(1) - cfg_.beta2) * g[j] * g[j];
        const T mhat = m[j] / bc1;
        const T vhat = v[j] / bc2;
        p[j] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig<T>& config() const { return cfg_; }

 private:
  AdamConfig<T> cfg_;
  std::int64_t t_ = 0;
  GradStore<T> m_, v_;
};

}  // namespace fshgr
