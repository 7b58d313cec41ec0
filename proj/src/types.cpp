// SPDX-License-Identifier: Apache-2.0

#include "sag/types.hpp"

#include <algorithm>
#include <cmath>

namespace sag {

NoiseLevel NoiseLevel::from_sigma(double sigma) { return {1.0 / (1.0 + sigma * sigma), sigma}; }

NoiseLevel NoiseLevel::from_alpha(double alpha) {
  return {alpha, std::sqrt(1.0 - alpha) / std::sqrt(alpha)};
}

bool all_finite(const Vector& v) { return v.allFinite(); }

Vector standard_normal(Index dim, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector out(dim);
  for (Index i = 0; i < dim; ++i) out[i] = normal(rng);
  return out;
}

double relative_error(const Vector& a, const Vector& b, double floor) {
  return (a - b).norm() / std::max(b.norm(), floor);
}

}  // namespace sag
