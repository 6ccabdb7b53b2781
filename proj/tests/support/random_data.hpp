#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "adrm/tensor.hpp"

namespace adrm::testing {

inline Tensor random_images(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor t({n, c, h, w});
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline Tensor random_normal(Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

inline std::vector<int> random_labels(std::size_t n, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> out(n);
  for (int& y : out) y = d(rng);
  return out;
}

}  // namespace adrm::testing
