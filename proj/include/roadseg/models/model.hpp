#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/models/blocks.hpp"
#include "roadseg/models/model_spec.hpp"

namespace roadseg {

/// A network producing 2-class probabilities (channel 0 background,
/// channel 1 road). U-Nets emit (N, 2, H, W); the window classifier (N, 2, 1, 1).
template <typename T>
class Model {
 public:
  virtual ~Model() = default;

  virtual const ModelSpec& spec() const = 0;
  /// Throws std::invalid_argument when the model cannot accept `s`.
  virtual void check_input(const Shape& s) const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) = 0;
  /// Backpropagates d(loss)/d(probabilities); returns d(loss)/d(input).
  virtual Tensor<T> backward(const Tensor<T>& grad_probabilities) = 0;
  virtual void collect(nn::StateList<T>& s) = 0;

  nn::StateList<T> state() {
    nn::StateList<T> s;
    collect(s);
    return s;
  }

  void zero_grad() {
    for (auto& [name, p] : state().params) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (auto& [name, p] : state().params) total += p->value.size();
    return total;
  }

  void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

 protected:
  std::mt19937_64 dropout_rng_{0};
};

/// Fully convolutional encoder/decoder with residual blocks at every level.
template <typename T>
class UNet final : public Model<T> {
 public:
  explicit UNet(ModelSpec spec)
      : spec_(std::move(spec)), head_(nn::Conv2dOptions{1, 2, 1, 1, 0}) {
    if (!is_unet(spec_.variant)) throw std::invalid_argument("UNet: not a U-Net variant");
    spec_.validate();
    const int depth = spec_.depth;
    for (int i = 0; i < depth; ++i) widths_.push_back(spec_.first_layer_channels << i);

    int in = spec_.in_channels;
    for (int i = 0; i < depth; ++i) {
      encoder_.emplace_back(ResidualBlockSpec{in, widths_[i]});
      pools_.emplace_back(2);
      in = widths_[i];
    }
    if (spec_.bottleneck == Bottleneck::dilated) {
      dilated_.emplace(DilatedBottleneckSpec{in, spec_.dilations});
      bottleneck_width_ = in;
    } else {
      bottleneck_width_ = in * 2;
      plain_.emplace(ResidualBlockSpec{in, bottleneck_width_});
    }
    int prev = bottleneck_width_;
    for (int i = depth - 1; i >= 0; --i) {
      ups_.emplace_back(prev, widths_[i], 2);
      drops_.emplace_back(spec_.dropout_after_concat);
      decoder_.emplace_back(ResidualBlockSpec{2 * widths_[i], widths_[i]});
      prev = widths_[i];
    }
    head_ = nn::Conv2d<T>(nn::Conv2dOptions{prev, 2, 1, 1, 0});

    std::mt19937_64 rng(spec_.seed);
    for (auto& b : encoder_) b.init(rng);
    if (dilated_) dilated_->init(rng);
    if (plain_) plain_->init(rng);
    for (std::size_t i = 0; i < ups_.size(); ++i) {
      ups_[i].init(rng);
      decoder_[i].init(rng);
    }
    head_.init(rng);
    this->reseed_dropout(spec_.seed ^ 0x9e3779b97f4a7c15ULL);
  }

  const ModelSpec& spec() const override { return spec_; }
  const std::vector<int>& encoder_widths() const { return widths_; }
  int bottleneck_width() const { return bottleneck_width_; }
  ResidualBlock<T>& encoder_block(int i) { return encoder_.at(i); }
  /// Decoder blocks are indexed from the deepest level (0) to the shallowest.
  ResidualBlock<T>& decoder_block(int i) { return decoder_.at(i); }
  DilatedBottleneck<T>* dilated_bottleneck() { return dilated_ ? &*dilated_ : nullptr; }

  void check_input(const Shape& s) const override {
    if (s.c != spec_.in_channels) {
      throw std::invalid_argument("input has " + std::to_string(s.c) + " channels, model expects " +
                                  std::to_string(spec_.in_channels));
    }
    const int d = spec_.divisor();
    for (auto [side, name] : {std::pair{s.h, "height"}, std::pair{s.w, "width"}}) {
      if (side < d || side % d != 0) {
        throw std::invalid_argument("input " + std::string(name) + " " + std::to_string(side) +
                                    " is not divisible by " + std::to_string(d) +
                                    " (sides must be multiples of 2^" +
                                    std::to_string(spec_.depth) + ")");
      }
    }
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) override {
    check_input(x.shape());
    const int depth = spec_.depth;
    std::vector<Tensor<T>> skips;
    skips.reserve(depth);
    Tensor<T> cur = x;
    for (int i = 0; i < depth; ++i) {
      skips.push_back(encoder_[i].forward(cur, mode));
      cur = pools_[i].forward(skips.back(), mode);
    }
    if (dilated_) {
      cur = bottleneck_activation_.forward(dilated_->forward(cur, mode), mode);
    } else {
      cur = plain_->forward(cur, mode);
    }
    for (int k = 0; k < depth; ++k) {
      const int level = depth - 1 - k;
      Tensor<T> up = ups_[k].forward(cur, mode);
      Tensor<T> cat = concat_channels(up, skips[level]);
      cat = drops_[k].forward(cat, mode, this->dropout_rng_);
      cur = decoder_[k].forward(cat, mode);
    }
    return softmax_.forward(head_.forward(cur, mode), mode);
  }

  Tensor<T> backward(const Tensor<T>& grad_probabilities) override {
    const int depth = spec_.depth;
    Tensor<T> g = head_.backward(softmax_.backward(grad_probabilities));
    std::vector<Tensor<T>> skip_grads(depth);
    for (int k = depth - 1; k >= 0; --k) {
      const int level = depth - 1 - k;
      g = drops_[k].backward(decoder_[k].backward(g));
      auto [gup, gskip] = split_channels(g, widths_[level]);
      skip_grads[level] = std::move(gskip);
      g = ups_[k].backward(gup);
    }
    if (dilated_) {
      g = dilated_->backward(bottleneck_activation_.backward(g));
    } else {
      g = plain_->backward(g);
    }
    for (int i = depth - 1; i >= 0; --i) {
      g = pools_[i].backward(g);
      g += skip_grads[i];
      g = encoder_[i].backward(g);
    }
    return g;
  }

  void collect(nn::StateList<T>& s) override {
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      encoder_[i].collect(s, "enc" + std::to_string(i));
    }
    if (dilated_) dilated_->collect(s, "bottleneck");
    if (plain_) plain_->collect(s, "bottleneck");
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      const std::string level = std::to_string(spec_.depth - 1 - static_cast<int>(k));
      ups_[k].collect(s, "up" + level);
      decoder_[k].collect(s, "dec" + level);
    }
    head_.collect(s, "head");
  }

 private:
  ModelSpec spec_;
  std::vector<int> widths_;
  int bottleneck_width_ = 0;
  std::vector<ResidualBlock<T>> encoder_;
  std::vector<nn::MaxPool2d<T>> pools_;
  std::optional<ResidualBlock<T>> plain_;
  std::optional<DilatedBottleneck<T>> dilated_;
  nn::ActivationLayer<T> bottleneck_activation_{nn::Activation::elu};
  std::vector<nn::ConvTranspose2d<T>> ups_;
  std::vector<nn::Dropout<T>> drops_;
  std::vector<ResidualBlock<T>> decoder_;
  nn::Conv2d<T> head_;
  nn::ChannelSoftmax<T> softmax_;
};

/// Window classifier: four conv(3x3) -> LeakyReLU -> maxpool(2) stages
/// (32, 64, 128, 128 filters), dropout, and a dense 2-way softmax head.
template <typename T>
class SlidingWindowCnn final : public Model<T> {
 public:
  static constexpr std::array<int, 4> kWidths{32, 64, 128, 128};

  explicit SlidingWindowCnn(ModelSpec spec)
      : spec_(std::move(spec)),
        dropout_(spec_.window_dropout),
        dense_(feature_count(spec_), 2) {
    if (spec_.variant != Variant::sliding_window) {
      throw std::invalid_argument("SlidingWindowCnn: wrong variant");
    }
    spec_.validate();
    int in = spec_.in_channels;
    for (int w : kWidths) {
      convs_.emplace_back(nn::Conv2dOptions{in, w, 3, 1, -1});
      acts_.emplace_back(nn::Activation::leaky_relu, spec_.leaky_slope);
      pools_.emplace_back(2);
      in = w;
    }
    std::mt19937_64 rng(spec_.seed);
    for (auto& c : convs_) c.init(rng);
    dense_.init(rng);
    this->reseed_dropout(spec_.seed ^ 0x9e3779b97f4a7c15ULL);
  }

  const ModelSpec& spec() const override { return spec_; }

  void check_input(const Shape& s) const override {
    if (s.c != spec_.in_channels || s.h != spec_.window_size || s.w != spec_.window_size) {
      throw std::invalid_argument("window classifier expects (" + std::to_string(spec_.in_channels) +
                                  ", " + std::to_string(spec_.window_size) + ", " +
                                  std::to_string(spec_.window_size) + ") windows, got " +
                                  to_string(s));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) override {
    check_input(x.shape());
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      cur = pools_[i].forward(acts_[i].forward(convs_[i].forward(cur, mode), mode), mode);
    }
    cur = dropout_.forward(cur, mode, this->dropout_rng_);
    return softmax_.forward(dense_.forward(cur, mode), mode);
  }

  Tensor<T> backward(const Tensor<T>& grad_probabilities) override {
    Tensor<T> g = dense_.backward(softmax_.backward(grad_probabilities));
    g = dropout_.backward(g);
    for (std::size_t i = convs_.size(); i-- > 0;) {
      g = convs_[i].backward(acts_[i].backward(pools_[i].backward(g)));
    }
    return g;
  }

  void collect(nn::StateList<T>& s) override {
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(s, "conv" + std::to_string(i));
    dense_.collect(s, "dense");
  }

 private:
  static int feature_count(const ModelSpec& spec) {
    spec.validate();
    const int side = spec.window_size / 16;
    return kWidths.back() * side * side;
  }

  ModelSpec spec_;
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::ActivationLayer<T>> acts_;
  std::vector<nn::MaxPool2d<T>> pools_;
  nn::Dropout<T> dropout_;
  nn::Dense<T> dense_;
  nn::ChannelSoftmax<T> softmax_;
};

template <typename T = float>
std::unique_ptr<UNet<T>> build_unet(const ModelSpec& spec) {
  if (!is_unet(spec.variant)) {
    throw std::invalid_argument("build_unet: '" + std::string(variant_name(spec.variant)) +
                                "' is not a U-Net variant");
  }
  return std::make_unique<UNet<T>>(spec);
}

template <typename T = float>
std::unique_ptr<SlidingWindowCnn<T>> build_sliding_window_cnn(int window_size = 64,
                                                             std::uint64_t seed = 0) {
  ModelSpec spec = spec_for(Variant::sliding_window);
  spec.window_size = window_size;
  spec.seed = seed;
  return std::make_unique<SlidingWindowCnn<T>>(spec);
}

template <typename T = float>
std::unique_ptr<Model<T>> build_model(const ModelSpec& spec) {
  if (is_unet(spec.variant)) return build_unet<T>(spec);
  return std::make_unique<SlidingWindowCnn<T>>(spec);
}

}  // namespace roadseg
