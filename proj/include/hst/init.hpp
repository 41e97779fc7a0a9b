#pragma once

#include <cmath>
#include <random>

#include "hst/tensor.hpp"

namespace hst {

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline Tensor uniform_fan_in(const Shape& shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor t(shape);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

}  // namespace hst
