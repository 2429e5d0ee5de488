#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/nn/parameter.hpp"
#include "roadseg/tensor.hpp"

namespace roadseg::nn {

/// Per-channel batch normalization over (N, H, W).
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased estimate into the running statistics with weight `momentum`.
/// Eval mode uses the running statistics.
template <typename T>
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels),
        eps_(eps),
        momentum_(momentum),
        gamma_(Shape{1, channels, 1, 1}),
        beta_(Shape{1, channels, 1, 1}),
        running_mean_(Shape{1, channels, 1, 1}, T{0}),
        running_var_(Shape{1, channels, 1, 1}, T{1}) {
    gamma_.value.fill(T{1});
  }

  int channels() const { return channels_; }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void collect(StateList<T>& s, const std::string& prefix) {
    s.add(join_name(prefix, "gamma"), gamma_);
    s.add(join_name(prefix, "beta"), beta_);
    s.add_buffer(join_name(prefix, "running_mean"), running_mean_);
    s.add_buffer(join_name(prefix, "running_var"), running_var_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.c() != channels_) throw std::invalid_argument("BatchNorm2d: channel mismatch");
    Tensor<T> y(x.shape());
    const std::size_t plane = x.shape().plane();
    const std::size_t count = plane * x.n();
    if (mode == Mode::eval) {
      has_cache_ = false;
      for (int c = 0; c < channels_; ++c) {
        const T inv = T{1} / std::sqrt(running_var_[c] + static_cast<T>(eps_));
        const T scale = gamma_.value[c] * inv;
        const T shift = beta_.value[c] - running_mean_[c] * scale;
        for (int n = 0; n < x.n(); ++n) {
          const T* src = x.plane(n, c);
          T* dst = y.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
        }
      }
      return y;
    }
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(channels_, T{0});
    for (int c = 0; c < channels_; ++c) {
      double sum = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sum += src[i];
      }
      const double mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int n = 0; n < x.n(); ++n) {
        const T* src = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = src[i] - mean;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps_));
      inv_std_[c] = inv;
      const T m = static_cast<T>(mean);
      for (int n = 0; n < x.n(); ++n) {
        const T* src = x.plane(n, c);
        T* xh = xhat_.plane(n, c);
        T* dst = y.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          xh[i] = (src[i] - m) * inv;
          dst[i] = xh[i] * gamma_.value[c] + beta_.value[c];
        }
      }
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] =
          static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
    }
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("BatchNorm2d::backward without cache");
    dy.require_same(xhat_, "BatchNorm2d::backward");
    Tensor<T> dx(dy.shape());
    const std::size_t plane = dy.shape().plane();
    const double count = static_cast<double>(plane * dy.n());
    for (int c = 0; c < channels_; ++c) {
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int n = 0; n < dy.n(); ++n) {
        const T* g = dy.plane(n, c);
        const T* xh = xhat_.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += g[i];
          sum_dy_xhat += g[i] * xh[i];
        }
      }
      gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
      beta_.grad[c] += static_cast<T>(sum_dy);
      const T k = gamma_.value[c] * inv_std_[c];
      const T mean_dy = static_cast<T>(sum_dy / count);
      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
      for (int n = 0; n < dy.n(); ++n) {
        const T* g = dy.plane(n, c);
        const T* xh = xhat_.plane(n, c);
        T* dst = dx.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dst[i] = k * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
        }
      }
    }
    return dx;
  }

 private:
  int channels_;
  double eps_;
  double momentum_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Tensor<T> running_mean_;
  Tensor<T> running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool has_cache_ = false;
};

}  // namespace roadseg::nn
