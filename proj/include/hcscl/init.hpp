// Parameter initializers.
#pragma once

#include "hcscl/autodiff.hpp"

#include <cmath>
#include <random>

namespace hcscl::init {

inline ad::Matrix uniform(int rows, int cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Matrix m(rows, cols);
  for (ad::Index c = 0; c < m.cols(); ++c)
    for (ad::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

/// Glorot uniform: bound sqrt(6 / (fan_in + fan_out)).
inline ad::Matrix xavier(int rows, int cols, std::mt19937_64& rng) {
  return uniform(rows, cols, std::sqrt(6.0 / static_cast<double>(rows + cols)), rng);
}

inline ad::Matrix normal(int rows, int cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Matrix m(rows, cols);
  for (ad::Index c = 0; c < m.cols(); ++c)
    for (ad::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
  return m;
}

inline ad::Matrix zeros(int rows, int cols) { return ad::Matrix::Zero(rows, cols); }
inline ad::Matrix ones(int rows, int cols) { return ad::Matrix::Ones(rows, cols); }

}  // namespace hcscl::init
