#pragma once

#include <string>
#include <vector>

#include "fig/tensor.hpp"

namespace fig {

/// s[i] = 1 for the K leading (rationale) rows, 0 otherwise.
inline std::vector<double> indicator_vector(std::size_t k, std::size_t t) {
  if (k > t) throw ArgumentError("indicator_vector: K=" + std::to_string(k) + " exceeds t=" + std::to_string(t));
  std::vector<double> s(t, 0.0);
  for (std::size_t i = 0; i < k; ++i) s[i] = 1.0;
  return s;
}

/// Attention mass crossing the rationale/environment boundary:
/// s^T P (1 - s) + (1 - s)^T P s.
inline Tensor cut_regularizer(const Tensor& p, const std::vector<double>& s) {
  const std::size_t t = s.size();
  if (p.rank() != 2 || p.rows() != t || p.cols() != t)
    throw DimensionError("cut_regularizer: P " + shape_str(p.shape()) + " vs s of length " + std::to_string(t));
  std::vector<double> w(t * t);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) w[i * t + j] = s[i] * (1.0 - s[j]) + (1.0 - s[i]) * s[j];
  return sum_all(mul(p, Tensor::matrix(t, t, std::move(w))));
}

}  // namespace fig
