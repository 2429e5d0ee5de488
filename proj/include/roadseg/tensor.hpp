#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace roadseg {

/// Dense 4-d shape in NCHW order.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample() const { return static_cast<std::size_t>(c) * h * w; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(' << s.n << ',' << s.c << ',' << s.h << ',' << s.w << ')';
  return os.str();
}

/// Contiguous NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0})
      : shape_(shape), data_(shape.size(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw std::invalid_argument("negative tensor dimension " + to_string(shape));
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T{0}) : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  T* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.sample(); }
  const T* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.sample();
  }
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Reinterprets the same data under a new shape with equal element count.
  Tensor reshaped(Shape s) const {
    if (s.size() != size()) {
      throw std::invalid_argument("reshape " + to_string(shape_) + " -> " + to_string(s));
    }
    Tensor out = *this;
    out.shape_ = s;
    return out;
  }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (!(shape_ == o.shape_)) {
      throw std::invalid_argument(std::string("shape mismatch in ") + what + ": " +
                                  to_string(shape_) + " vs " + to_string(o.shape_));
    }
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;
template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Eigen::OuterStride<>>;

/// Concatenates two tensors along the channel axis.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w()) {
    throw std::invalid_argument("concat_channels: " + to_string(a.shape()) + " vs " +
                                to_string(b.shape()));
  }
  Tensor<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  for (int n = 0; n < a.n(); ++n) {
    std::copy_n(a.sample(n), a.shape().sample(), out.sample(n));
    std::copy_n(b.sample(n), b.shape().sample(), out.sample(n) + a.shape().sample());
  }
  return out;
}

/// Inverse of concat_channels: splits off the first `first_channels` channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, int first_channels) {
  if (first_channels < 0 || first_channels > t.c()) {
    throw std::invalid_argument("split_channels: bad split point");
  }
  Tensor<T> a(t.n(), first_channels, t.h(), t.w());
  Tensor<T> b(t.n(), t.c() - first_channels, t.h(), t.w());
  for (int n = 0; n < t.n(); ++n) {
    std::copy_n(t.sample(n), a.shape().sample(), a.sample(n));
    std::copy_n(t.sample(n) + a.shape().sample(), b.shape().sample(), b.sample(n));
  }
  return {std::move(a), std::move(b)};
}

}  // namespace roadseg
