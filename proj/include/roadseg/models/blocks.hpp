#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/nn/batch_norm.hpp"
#include "roadseg/nn/conv2d.hpp"
#include "roadseg/nn/layers.hpp"

namespace roadseg {

struct ResidualBlockSpec {
  int in_channels = 1;
  int out_channels = 1;
  int conv_count = 2;
  int kernel = 3;
  nn::Activation activation = nn::Activation::elu;
  /// f, applied after the identity mapping is added.
  nn::Activation output_activation = nn::Activation::elu;
};

/// Convolution block with a local skip connection:
///
///   y = h(x) + F(x),   out = f(y)
///
/// F is conv -> batch-norm (-> activation between convolutions), h is a
/// 1x1 convolution in_channels -> out_channels and f the block activation.
template <typename T>
class ResidualBlock {
 public:
  explicit ResidualBlock(ResidualBlockSpec spec)
      : spec_(spec),
        projection_(nn::Conv2dOptions{spec.in_channels, spec.out_channels, 1, 1, 0}),
        output_activation_(spec.output_activation) {
    if (spec.conv_count < 1) throw std::invalid_argument("ResidualBlock: conv_count must be >= 1");
    for (int i = 0; i < spec.conv_count; ++i) {
      const int in = i == 0 ? spec.in_channels : spec.out_channels;
      convs_.emplace_back(nn::Conv2dOptions{in, spec.out_channels, spec.kernel, 1, -1});
      norms_.emplace_back(spec.out_channels);
      if (i + 1 < spec.conv_count) activations_.emplace_back(spec.activation);
    }
  }

  const ResidualBlockSpec& spec() const { return spec_; }
  nn::Conv2d<T>& conv(int i) { return convs_.at(i); }
  nn::BatchNorm2d<T>& norm(int i) { return norms_.at(i); }
  nn::Conv2d<T>& projection() { return projection_; }

  void init(std::mt19937_64& rng) {
    for (auto& c : convs_) c.init(rng);
    projection_.init(rng);
  }

  void collect(nn::StateList<T>& s, const std::string& prefix) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].collect(s, nn::join_name(prefix, "conv" + std::to_string(i)));
      norms_[i].collect(s, nn::join_name(prefix, "bn" + std::to_string(i)));
    }
    projection_.collect(s, nn::join_name(prefix, "identity"));
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
    if (x.c() != spec_.in_channels) {
      throw std::invalid_argument("ResidualBlock: expected " + std::to_string(spec_.in_channels) +
                                  " channels, got " + std::to_string(x.c()));
    }
    Tensor<T> f = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      f = convs_[i].forward(f, mode);
      f = norms_[i].forward(f, mode);
      if (i < activations_.size()) f = activations_[i].forward(f, mode);
    }
    Tensor<T> y = projection_.forward(x, mode);
    y += f;
    return output_activation_.forward(y, mode);
  }

  Tensor<T> backward(const Tensor<T>& dout) {
    Tensor<T> dy = output_activation_.backward(dout);
    Tensor<T> df = dy;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i < activations_.size()) df = activations_[i].backward(df);
      df = norms_[i].backward(df);
      df = convs_[i].backward(df);
    }
    Tensor<T> dx = projection_.backward(dy);
    dx += df;
    return dx;
  }

 private:
  ResidualBlockSpec spec_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::BatchNorm2d<T>> norms_;
  std::vector<nn::ActivationLayer<T>> activations_;
  nn::Conv2d<T> projection_;
  nn::ActivationLayer<T> output_activation_;
};

struct DilatedBottleneckSpec {
  int channels = 1;
  std::vector<int> branch_dilations{1, 2, 4, 8};
  int kernel = 3;
};

/// Parallel same-padded dilated convolutions whose outputs are summed.
template <typename T>
class DilatedBottleneck {
 public:
  explicit DilatedBottleneck(DilatedBottleneckSpec spec) : spec_(std::move(spec)) {
    if (spec_.branch_dilations.empty()) {
      throw std::invalid_argument("DilatedBottleneck: empty dilation list");
    }
    for (int rate : spec_.branch_dilations) {
      branches_.emplace_back(nn::Conv2dOptions{spec_.channels, spec_.channels, spec_.kernel, rate, -1});
    }
  }

  const DilatedBottleneckSpec& spec() const { return spec_; }
  nn::Conv2d<T>& branch(int i) { return branches_.at(i); }
  int branch_count() const { return static_cast<int>(branches_.size()); }

  void init(std::mt19937_64& rng) {
    for (auto& b : branches_) b.init(rng);
  }

  void collect(nn::StateList<T>& s, const std::string& prefix) {
    for (std::size_t i = 0; i < branches_.size(); ++i) {
      branches_[i].collect(s, nn::join_name(prefix, "dil" + std::to_string(spec_.branch_dilations[i])));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
    if (x.c() != spec_.channels) {
      throw std::invalid_argument("DilatedBottleneck: expected " + std::to_string(spec_.channels) +
                                  " channels, got " + std::to_string(x.c()));
    }
    Tensor<T> sum = branches_.front().forward(x, mode);
    for (std::size_t i = 1; i < branches_.size(); ++i) sum += branches_[i].forward(x, mode);
    return sum;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx = branches_.front().backward(dy);
    for (std::size_t i = 1; i < branches_.size(); ++i) dx += branches_[i].backward(dy);
    return dx;
  }

 private:
  DilatedBottleneckSpec spec_;
  std::vector<nn::Conv2d<T>> branches_;
};

}  // namespace roadseg
