#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "error.hpp"

namespace slm {

/// Euclidean projection onto the probability simplex {w >= 0, sum w = 1}.
/// Sort descending, find the largest rho with u_rho - (sum_{i<=rho} u_i - 1)/rho > 0,
/// then clamp v - theta at zero.
inline std::vector<double> simplex_project(std::span<const double> v) {
  detail::require(!v.empty(), "simplex_project: empty vector");
  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  std::vector<double> w(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) w[i] = std::max(v[i] - theta, 0.0);
  return w;
}

}  // namespace slm
