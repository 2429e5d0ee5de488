#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/nn/parameter.hpp"
#include "roadseg/tensor.hpp"

namespace roadseg::nn {

enum class Activation { identity, elu, leaky_relu };

/// Pointwise activation. ELU uses alpha = 1; LeakyReLU uses `slope`.
template <typename T>
class ActivationLayer {
 public:
  explicit ActivationLayer(Activation kind = Activation::elu, double slope = 0.01)
      : kind_(kind), slope_(static_cast<T>(slope)) {}

  Activation kind() const { return kind_; }
  void set_kind(Activation k) { kind_ = k; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> y(x.shape());
    const T* src = x.data();
    T* dst = y.data();
    const std::size_t n = x.size();
    switch (kind_) {
      case Activation::identity:
        std::copy_n(src, n, dst);
        break;
      case Activation::elu:
        for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > T{0} ? src[i] : std::exp(src[i]) - T{1};
        break;
      case Activation::leaky_relu:
        for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] > T{0} ? src[i] : slope_ * src[i];
        break;
    }
    if (mode == Mode::train) {
      // ELU's derivative is recoverable from its output; the others need the sign.
      cache_ = kind_ == Activation::elu ? y : x;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("ActivationLayer::backward without cache");
    dy.require_same(cache_, "ActivationLayer::backward");
    Tensor<T> dx(dy.shape());
    const T* c = cache_.data();
    const T* g = dy.data();
    T* dst = dx.data();
    const std::size_t n = dy.size();
    switch (kind_) {
      case Activation::identity:
        std::copy_n(g, n, dst);
        break;
      case Activation::elu:
        for (std::size_t i = 0; i < n; ++i) dst[i] = c[i] > T{0} ? g[i] : g[i] * (c[i] + T{1});
        break;
      case Activation::leaky_relu:
        for (std::size_t i = 0; i < n; ++i) dst[i] = c[i] > T{0} ? g[i] : g[i] * slope_;
        break;
    }
    return dx;
  }

 private:
  Activation kind_;
  T slope_;
  Tensor<T> cache_;
  bool has_cache_ = false;
};

/// Non-overlapping max pooling with square window `size`.
template <typename T>
class MaxPool2d {
 public:
  explicit MaxPool2d(int size = 2) : size_(size) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.h() % size_ != 0 || x.w() % size_ != 0) {
      throw std::invalid_argument("MaxPool2d: input " + to_string(x.shape()) +
                                  " not divisible by " + std::to_string(size_));
    }
    const int oh = x.h() / size_;
    const int ow = x.w() / size_;
    Tensor<T> y(x.n(), x.c(), oh, ow);
    const bool record = mode == Mode::train;
    if (record) argmax_.assign(y.size(), 0);
    std::size_t o = 0;
    for (int n = 0; n < x.n(); ++n) {
      for (int c = 0; c < x.c(); ++c) {
        const T* src = x.plane(n, c);
        for (int i = 0; i < oh; ++i) {
          for (int j = 0; j < ow; ++j, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::uint32_t best_idx = 0;
            for (int a = 0; a < size_; ++a) {
              for (int b = 0; b < size_; ++b) {
                const std::uint32_t idx =
                    static_cast<std::uint32_t>((i * size_ + a) * x.w() + j * size_ + b);
                if (src[idx] > best) {
                  best = src[idx];
                  best_idx = idx;
                }
              }
            }
            y[o] = best;
            if (record) argmax_[o] = best_idx;
          }
        }
      }
    }
    input_shape_ = x.shape();
    has_cache_ = record;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("MaxPool2d::backward without cache");
    Tensor<T> dx(input_shape_);
    const std::size_t per_plane = static_cast<std::size_t>(dy.h()) * dy.w();
    for (std::size_t o = 0; o < dy.size(); ++o) {
      const std::size_t plane = o / per_plane;
      dx[plane * input_shape_.plane() + argmax_[o]] += dy[o];
    }
    return dx;
  }

 private:
  int size_;
  Shape input_shape_{};
  std::vector<std::uint32_t> argmax_;
  bool has_cache_ = false;
};

/// Inverted dropout: kept activations are scaled by 1 / (1 - rate) in train
/// mode so eval mode is the identity.
template <typename T>
class Dropout {
 public:
  explicit Dropout(double rate = 0.0) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("Dropout: rate must be in [0,1)");
  }

  double rate() const { return rate_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode, std::mt19937_64& rng) {
    if (mode == Mode::eval || rate_ == 0.0) {
      mask_.clear();
      has_cache_ = mode == Mode::train;
      return x;
    }
    std::bernoulli_distribution keep(1.0 - rate_);
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(x.size());
    Tensor<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = keep(rng) ? scale : T{0};
      y[i] = x[i] * mask_[i];
    }
    has_cache_ = true;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("Dropout::backward without cache");
    if (mask_.empty()) return dy;
    Tensor<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

 private:
  double rate_;
  std::vector<T> mask_;
  bool has_cache_ = false;
};

/// Fully connected layer over flattened samples; output shape (N, out, 1, 1).
template <typename T>
class Dense {
 public:
  Dense(int in_features, int out_features)
      : in_(in_features),
        out_(out_features),
        weight_(Shape{out_features, in_features, 1, 1}),
        bias_(Shape{1, out_features, 1, 1}) {}

  void init(std::mt19937_64& rng) {
    he_normal(weight_.value, in_, rng);
    bias_.value.fill(T{0});
  }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  void collect(StateList<T>& s, const std::string& prefix) {
    s.add(join_name(prefix, "weight"), weight_);
    s.add(join_name(prefix, "bias"), bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (static_cast<int>(x.shape().sample()) != in_) {
      throw std::invalid_argument("Dense: expected " + std::to_string(in_) +
                                  " features per sample, got " + to_string(x.shape()));
    }
    Tensor<T> y(x.n(), out_, 1, 1);
    ConstMatrixMap<T> xm(x.data(), x.n(), in_);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, in_);
    MatrixMap<T> ym(y.data(), x.n(), out_);
    ym.noalias() = xm * wm.transpose();
    for (int n = 0; n < x.n(); ++n) {
      for (int o = 0; o < out_; ++o) ym(n, o) += bias_.value[o];
    }
    if (mode == Mode::train) {
      input_ = x;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("Dense::backward without cache");
    Tensor<T> dx(input_.shape());
    ConstMatrixMap<T> xm(input_.data(), input_.n(), in_);
    ConstMatrixMap<T> wm(weight_.value.data(), out_, in_);
    ConstMatrixMap<T> dym(dy.data(), dy.n(), out_);
    MatrixMap<T> dwm(weight_.grad.data(), out_, in_);
    MatrixMap<T> dxm(dx.data(), input_.n(), in_);
    dwm.noalias() += dym.transpose() * xm;
    for (int n = 0; n < dy.n(); ++n) {
      for (int o = 0; o < out_; ++o) bias_.grad[o] += dym(n, o);
    }
    dxm.noalias() = dym * wm;
    return dx;
  }

 private:
  int in_;
  int out_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  bool has_cache_ = false;
};

/// Softmax across the channel axis, independently for every (n, y, x).
template <typename T>
class ChannelSoftmax {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> y(x.shape());
    const std::size_t plane = x.shape().plane();
    for (int n = 0; n < x.n(); ++n) {
      const T* src = x.sample(n);
      T* dst = y.sample(n);
      for (std::size_t p = 0; p < plane; ++p) {
        T m = src[p];
        for (int c = 1; c < x.c(); ++c) m = std::max(m, src[c * plane + p]);
        T sum{0};
        for (int c = 0; c < x.c(); ++c) {
          const T e = std::exp(src[c * plane + p] - m);
          dst[c * plane + p] = e;
          sum += e;
        }
        for (int c = 0; c < x.c(); ++c) dst[c * plane + p] /= sum;
      }
    }
    if (mode == Mode::train) {
      output_ = y;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("ChannelSoftmax::backward without cache");
    dy.require_same(output_, "ChannelSoftmax::backward");
    Tensor<T> dx(dy.shape());
    const std::size_t plane = dy.shape().plane();
    for (int n = 0; n < dy.n(); ++n) {
      const T* p = output_.sample(n);
      const T* g = dy.sample(n);
      T* dst = dx.sample(n);
      for (std::size_t i = 0; i < plane; ++i) {
        T dot{0};
        for (int c = 0; c < dy.c(); ++c) dot += p[c * plane + i] * g[c * plane + i];
        for (int c = 0; c < dy.c(); ++c) {
          dst[c * plane + i] = p[c * plane + i] * (g[c * plane + i] - dot);
        }
      }
    }
    return dx;
  }

 private:
  Tensor<T> output_;
  bool has_cache_ = false;
};

}  // namespace roadseg::nn
