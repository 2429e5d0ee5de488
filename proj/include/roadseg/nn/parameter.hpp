#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "roadseg/tensor.hpp"

namespace roadseg::nn {

/// Train mode uses batch statistics and active dropout and records the
/// intermediates needed by backward(). Eval mode records nothing.
enum class Mode { train, eval };

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  explicit Parameter(Shape s = {}) : value(s), grad(s) {}
  void zero_grad() { grad.fill(T{0}); }
};

/// Named views into a module tree: trainable parameters and non-trainable
/// buffers (batch-norm running statistics).
template <typename T>
struct StateList {
  std::vector<std::pair<std::string, Parameter<T>*>> params;
  std::vector<std::pair<std::string, Tensor<T>*>> buffers;

  void add(const std::string& name, Parameter<T>& p) { params.emplace_back(name, &p); }
  void add_buffer(const std::string& name, Tensor<T>& t) { buffers.emplace_back(name, &t); }
};

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

/// Fan-in scaled normal initialization (He).
template <typename T>
void he_normal(Tensor<T>& w, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / std::max(1, fan_in)));
  for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
}

}  // namespace roadseg::nn
