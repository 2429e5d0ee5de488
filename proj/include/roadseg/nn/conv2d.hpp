#pragma once

#include <algorithm>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "roadseg/nn/parameter.hpp"
#include "roadseg/tensor.hpp"

namespace roadseg::nn {

struct Conv2dOptions {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;
  int dilation = 1;
  /// -1 selects "same" padding: dilation * (kernel - 1) / 2.
  int padding = -1;
  bool bias = true;

  int effective_padding() const {
    return padding >= 0 ? padding : dilation * (kernel - 1) / 2;
  }
};

/// Stride-1 2-d convolution with optional dilation and zero padding,
/// computed as im2col + GEMM over bounded row chunks.
template <typename T>
class Conv2d {
 public:
  explicit Conv2d(Conv2dOptions opt = {})
      : opt_(opt),
        weight_(Shape{opt.out_channels, opt.in_channels, opt.kernel, opt.kernel}),
        bias_(Shape{1, opt.out_channels, 1, 1}) {
    if (opt.in_channels < 1 || opt.out_channels < 1 || opt.kernel < 1 || opt.dilation < 1) {
      throw std::invalid_argument("Conv2d: invalid options");
    }
  }

  const Conv2dOptions& options() const { return opt_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const Parameter<T>& weight() const { return weight_; }
  const Parameter<T>& bias() const { return bias_; }

  void init(std::mt19937_64& rng) {
    he_normal(weight_.value, opt_.in_channels * opt_.kernel * opt_.kernel, rng);
    bias_.value.fill(T{0});
  }

  void collect(StateList<T>& s, const std::string& prefix) {
    s.add(join_name(prefix, "weight"), weight_);
    if (opt_.bias) s.add(join_name(prefix, "bias"), bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    check_input(x);
    const Geometry g = geometry(x);
    Tensor<T> y(x.n(), opt_.out_channels, g.out_h, g.out_w);
    ConstMatrixMap<T> wm(weight_.value.data(), opt_.out_channels, g.k_rows);
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(bias_.value.data(),
                                                            opt_.out_channels);
    for (int n = 0; n < x.n(); ++n) {
      for (int r0 = 0; r0 < g.out_h; r0 += g.chunk_rows) {
        const int r1 = std::min(g.out_h, r0 + g.chunk_rows);
        const int cols = (r1 - r0) * g.out_w;
        StridedMap<T> ym(y.plane(n, 0) + static_cast<std::size_t>(r0) * g.out_w,
                         opt_.out_channels, cols, Eigen::OuterStride<>(g.out_h * g.out_w));
        if (g.direct) {
          ConstStridedMap<T> xm(x.plane(n, 0) + static_cast<std::size_t>(r0) * x.w(),
                                opt_.in_channels, cols, Eigen::OuterStride<>(x.h() * x.w()));
          ym.noalias() = wm * xm;
        } else {
          im2col(x, n, g, r0, r1);
          ConstMatrixMap<T> cm(col_.data(), g.k_rows, cols);
          ym.noalias() = wm * cm;
        }
        if (opt_.bias) ym.colwise() += b;
      }
    }
    if (mode == Mode::train) {
      input_ = x;
      has_cache_ = true;
    } else {
      has_cache_ = false;
    }
    return y;
  }

  /// Accumulates parameter gradients and returns the input gradient.
  Tensor<T> backward(const Tensor<T>& dy) {
    if (!has_cache_) throw std::logic_error("Conv2d::backward without train-mode forward");
    const Tensor<T>& x = input_;
    const Geometry g = geometry(x);
    if (dy.n() != x.n() || dy.c() != opt_.out_channels || dy.h() != g.out_h ||
        dy.w() != g.out_w) {
      throw std::invalid_argument("Conv2d::backward: gradient shape " + to_string(dy.shape()));
    }
    Tensor<T> dx(x.shape());
    ConstMatrixMap<T> wm(weight_.value.data(), opt_.out_channels, g.k_rows);
    MatrixMap<T> dwm(weight_.grad.data(), opt_.out_channels, g.k_rows);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bias_.grad.data(), opt_.out_channels);
    for (int n = 0; n < x.n(); ++n) {
      for (int r0 = 0; r0 < g.out_h; r0 += g.chunk_rows) {
        const int r1 = std::min(g.out_h, r0 + g.chunk_rows);
        const int cols = (r1 - r0) * g.out_w;
        ConstStridedMap<T> dym(dy.plane(n, 0) + static_cast<std::size_t>(r0) * g.out_w,
                               opt_.out_channels, cols,
                               Eigen::OuterStride<>(g.out_h * g.out_w));
        if (opt_.bias) {
          // Fixed summation order keeps gradients independent of buffer alignment.
          for (int o = 0; o < opt_.out_channels; ++o) {
            const T* row = dym.row(o).data();
            double acc = 0.0;
            for (int j = 0; j < cols; ++j) acc += row[j];
            db[o] += static_cast<T>(acc);
          }
        }
        if (g.direct) {
          ConstStridedMap<T> xm(x.plane(n, 0) + static_cast<std::size_t>(r0) * x.w(),
                                opt_.in_channels, cols, Eigen::OuterStride<>(x.h() * x.w()));
          dwm.noalias() += dym * xm.transpose();
          StridedMap<T> dxm(dx.plane(n, 0) + static_cast<std::size_t>(r0) * x.w(),
                            opt_.in_channels, cols, Eigen::OuterStride<>(x.h() * x.w()));
          dxm.noalias() += wm.transpose() * dym;
        } else {
          im2col(x, n, g, r0, r1);
          ConstMatrixMap<T> cm(col_.data(), g.k_rows, cols);
          dwm.noalias() += dym * cm.transpose();
          MatrixMap<T> dcm(col_.data(), g.k_rows, cols);
          dcm.noalias() = wm.transpose() * dym;
          col2im(dx, n, g, r0, r1);
        }
      }
    }
    return dx;
  }

  void clear_cache() {
    input_ = Tensor<T>();
    has_cache_ = false;
    col_.clear();
    col_.shrink_to_fit();
  }

 private:
  struct Geometry {
    int out_h = 0;
    int out_w = 0;
    int pad = 0;
    int k_rows = 0;
    int chunk_rows = 1;
    bool direct = false;
  };

  static constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

  void check_input(const Tensor<T>& x) const {
    if (x.c() != opt_.in_channels) {
      throw std::invalid_argument("Conv2d: expected " + std::to_string(opt_.in_channels) +
                                  " input channels, got " + std::to_string(x.c()));
    }
  }

  Geometry geometry(const Tensor<T>& x) const {
    Geometry g;
    g.pad = opt_.effective_padding();
    const int span = opt_.dilation * (opt_.kernel - 1);
    g.out_h = x.h() + 2 * g.pad - span;
    g.out_w = x.w() + 2 * g.pad - span;
    if (g.out_h < 1 || g.out_w < 1) throw std::invalid_argument("Conv2d: input too small");
    g.k_rows = opt_.in_channels * opt_.kernel * opt_.kernel;
    g.direct = opt_.kernel == 1 && g.pad == 0;
    const std::size_t per_row = static_cast<std::size_t>(g.k_rows) * g.out_w;
    g.chunk_rows = static_cast<int>(std::max<std::size_t>(1, kColumnBudget / per_row));
    return g;
  }

  // Iterates over the valid (output column -> input column) range of one tap.
  template <typename F>
  void for_each_tap(const Tensor<T>& x, const Geometry& g, int r0, int r1, F&& f) const {
    const int k = opt_.kernel;
    const int d = opt_.dilation;
    const int cols = (r1 - r0) * g.out_w;
    for (int ci = 0; ci < opt_.in_channels; ++ci) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const std::size_t row = (static_cast<std::size_t>(ci) * k + ky) * k + kx;
          const int off_x = kx * d - g.pad;
          const int ox_begin = std::clamp(-off_x, 0, g.out_w);
          const int ox_end = std::clamp(x.w() - off_x, 0, g.out_w);
          for (int oy = r0; oy < r1; ++oy) {
            const int iy = oy + ky * d - g.pad;
            const std::size_t col_base = row * cols + static_cast<std::size_t>(oy - r0) * g.out_w;
            const bool valid_row = iy >= 0 && iy < x.h();
            f(ci, iy, valid_row, col_base, ox_begin, ox_end, off_x);
          }
        }
      }
    }
  }

  void im2col(const Tensor<T>& x, int n, const Geometry& g, int r0, int r1) {
    col_.resize(static_cast<std::size_t>(g.k_rows) * (r1 - r0) * g.out_w);
    T* col = col_.data();
    const int out_w = g.out_w;
    for_each_tap(x, g, r0, r1,
                 [&](int ci, int iy, bool valid, std::size_t base, int b, int e, int off) {
                   T* dst = col + base;
                   if (!valid || b >= e) {
                     std::fill(dst, dst + out_w, T{0});
                     return;
                   }
                   std::fill(dst, dst + b, T{0});
                   const T* src = x.plane(n, ci) + static_cast<std::size_t>(iy) * x.w();
                   std::copy(src + (b + off), src + (e + off), dst + b);
                   std::fill(dst + e, dst + out_w, T{0});
                 });
  }

  void col2im(Tensor<T>& dx, int n, const Geometry& g, int r0, int r1) const {
    const T* col = col_.data();
    for_each_tap(dx, g, r0, r1,
                 [&](int ci, int iy, bool valid, std::size_t base, int b, int e, int off) {
                   if (!valid) return;
                   T* dst = dx.plane(n, ci) + static_cast<std::size_t>(iy) * dx.w();
                   const T* src = col + base;
                   for (int ox = b; ox < e; ++ox) dst[ox + off] += src[ox];
                 });
  }

  Conv2dOptions opt_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  bool has_cache_ = false;
  std::vector<T> col_;
};

/// Transposed convolution with kernel == stride (non-overlapping upsampling).
/// Weight layout: (in_channels, out_channels, stride, stride).
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int stride = 2)
      : in_(in_channels),
        out_(out_channels),
        stride_(stride),
        weight_(Shape{in_channels, out_channels, stride, stride}),
        bias_(Shape{1, out_channels, 1, 1}) {
    if (in_channels < 1 || out_channels < 1 || stride < 1) {
      throw std::invalid_argument("ConvTranspose2d: invalid options");
    }
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

  void init(std::mt19937_64& rng) {
    // Each output pixel receives exactly in_channels contributions.
    he_normal(weight_.value, in_, rng);
    bias_.value.fill(T{0});
  }

  void collect(StateList<T>& s, const std::string& prefix) {
    s.add(join_name(prefix, "weight"), weight_);
    s.add(join_name(prefix, "bias"), bias_);
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    if (x.c() != in_) throw std::invalid_argument("ConvTranspose2d: channel mismatch");
    const int s = stride_;
    const int taps = out_ * s * s;
    const int hw = x.h() * x.w();
    Tensor<T> y(x.n(), out_, x.h() * s, x.w() * s);
    ConstMatrixMap<T> wm(weight_.value.data(), in_, taps);
    RowMatrix<T> y4(taps, hw);
    for (int n = 0; n < x.n(); ++n) {
      ConstMatrixMap<T> xm(x.sample(n), in_, hw);
      y4.noalias() = wm.transpose() * xm;
      for (int co = 0; co < out_; ++co) {
        const T b = bias_.value[co];
        T* dst = y.plane(n, co);
        for (int a = 0; a < s; ++a) {
          for (int bx = 0; bx < s; ++bx) {
            const T* src = y4.data() + static_cast<std::size_t>((co * s + a) * s + bx) * hw;
            for (int i = 0; i < x.h(); ++i) {
              T* row = dst + static_cast<std::size_t>(i * s + a) * y.w() + bx;
              for (int j = 0; j < x.w(); ++j) row[j * s] = src[i * x.w() + j] + b;
            }
          }
        }
      }
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
    if (!has_cache_) throw std::logic_error("ConvTranspose2d::backward without cache");
    const Tensor<T>& x = input_;
    const int s = stride_;
    const int taps = out_ * s * s;
    const int hw = x.h() * x.w();
    Tensor<T> dx(x.shape());
    ConstMatrixMap<T> wm(weight_.value.data(), in_, taps);
    MatrixMap<T> dwm(weight_.grad.data(), in_, taps);
    RowMatrix<T> d4(taps, hw);
    for (int n = 0; n < x.n(); ++n) {
      for (int co = 0; co < out_; ++co) {
        const T* src = dy.plane(n, co);
        T bsum{0};
        for (int a = 0; a < s; ++a) {
          for (int bx = 0; bx < s; ++bx) {
            T* dst = d4.data() + static_cast<std::size_t>((co * s + a) * s + bx) * hw;
            for (int i = 0; i < x.h(); ++i) {
              const T* row = src + static_cast<std::size_t>(i * s + a) * dy.w() + bx;
              for (int j = 0; j < x.w(); ++j) {
                dst[i * x.w() + j] = row[j * s];
                bsum += row[j * s];
              }
            }
          }
        }
        bias_.grad[co] += bsum;
      }
      ConstMatrixMap<T> xm(x.sample(n), in_, hw);
      dwm.noalias() += xm * d4.transpose();
      MatrixMap<T> dxm(dx.sample(n), in_, hw);
      dxm.noalias() = wm * d4;
    }
    return dx;
  }

 private:
  int in_;
  int out_;
  int stride_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  bool has_cache_ = false;
};

}  // namespace roadseg::nn
