#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "roadseg/nn/parameter.hpp"

namespace roadseg {

/// Adaptive-moment gradient descent over a fixed parameter list.
template <typename T>
class Adam {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;
  };

  Adam(nn::StateList<T> state, Options opt) : opt_(opt) {
    for (auto& [name, p] : state.params) {
      params_.push_back(p);
      m_.emplace_back(p->value.size(), T{0});
      v_.emplace_back(p->value.size(), T{0});
    }
  }
  explicit Adam(nn::StateList<T> state) : Adam(std::move(state), Options{}) {}

  std::int64_t steps() const { return steps_; }

  void step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
    const T step_size = static_cast<T>(lr * std::sqrt(bc2) / bc1);
    const T b1 = static_cast<T>(opt_.beta1);
    const T b2 = static_cast<T>(opt_.beta2);
    const T eps = static_cast<T>(opt_.epsilon * std::sqrt(bc2));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      T* w = params_[k]->value.data();
      const T* g = params_[k]->grad.data();
      T* m = m_[k].data();
      T* v = v_[k].data();
      const std::size_t n = params_[k]->value.size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * g[i];
        v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
        w[i] -= step_size * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
  }

 private:
  Options opt_;
  std::vector<nn::Parameter<T>*> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t steps_ = 0;
};

}  // namespace roadseg
