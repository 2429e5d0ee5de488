#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "roadseg/tensor.hpp"

namespace roadseg::test_util {

template <typename T>
void fill_normal(Tensor<T>& t, std::mt19937_64& rng, double stddev = 1.0) {
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.vec()) v = static_cast<T>(d(rng));
}

template <typename T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor<T> t(s);
  fill_normal(t, rng, stddev);
  return t;
}

/// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of `loss` with respect to every entry of `values`.
template <typename T>
std::vector<double> numeric_gradient(std::vector<T>& values, const std::function<double()>& loss, double h) {
  std::vector<double> g(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + static_cast<T>(h);
    const double up = loss();
    values[i] = saved - static_cast<T>(h);
    const double down = loss();
    values[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

template <typename T>
std::vector<double> as_double(const Tensor<T>& t) {
  return {t.vec().begin(), t.vec().end()};
}

/// Weighted sum used as a scalar probe: sum(w * y).
template <typename T>
double probe(const Tensor<T>& y, const Tensor<T>& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * static_cast<double>(w[i]);
  return s;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("roadseg_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace roadseg::test_util
