#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "facever/tensor.hpp"

namespace facever::testing {

template <typename T>
Tensor<T> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng,
                                         double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace facever::testing
