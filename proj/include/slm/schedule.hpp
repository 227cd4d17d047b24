#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "error.hpp"

namespace slm {

enum class ScheduleKind { exponential };

inline std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::exponential:
      return "exponential";
  }
  return "unknown";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "exponential") return ScheduleKind::exponential;
  throw invalid_input("unknown schedule kind: " + s);
}

/// Candidate-count schedule n(tau) on unit time, discretised into `steps`
/// uniform intervals. Grid point j sits at tau_j = j / steps.
struct Schedule {
  std::size_t categories = 2;  // K
  std::size_t steps = 1;       // S
  ScheduleKind kind = ScheduleKind::exponential;

  Schedule() = default;
  Schedule(std::size_t k, std::size_t s, ScheduleKind kd = ScheduleKind::exponential)
      : categories(k), steps(s), kind(kd) {
    detail::require(k >= 1, "schedule: K must be >= 1");
    detail::require(s >= 1, "schedule: S must be >= 1");
  }

  double tau(std::size_t j) const {
    detail::require(j <= steps, "schedule: grid index beyond S");
    if (j == steps) return 1.0;
    return static_cast<double>(j) / static_cast<double>(steps);
  }

  // n(tau) = exp(ln K * tau); the endpoints are pinned so n(0)=1, n(1)=K exactly.
  double n_of(double t) const {
    detail::require(t >= 0.0 && t <= 1.0, "schedule: tau must lie in [0,1]");
    if (t == 0.0) return 1.0;
    if (t == 1.0) return static_cast<double>(categories);
    return std::exp(std::log(static_cast<double>(categories)) * t);
  }

  double n_at(std::size_t j) const { return n_of(tau(j)); }

  std::vector<double> grid() const {
    std::vector<double> out(steps + 1);
    for (std::size_t j = 0; j <= steps; ++j) out[j] = tau(j);
    return out;
  }

  /// (n(tau_{j-1}) - 1) / (n(tau_j) - 1): the floor every reverse parameter
  /// interpolates from. Zero at j = 1.
  double retain_fraction(std::size_t j) const {
    detail::require(j >= 1, "schedule: retain fraction needs j >= 1");
    const double denom = n_at(j) - 1.0;
    if (denom <= 0.0) return 1.0;  // K == 1: nothing to prune
    return (n_at(j - 1) - 1.0) / denom;
  }

  /// (n(tau_j) - n(tau_{j-1})) / (n(tau_j) - 1), the weight of the reweighted loss.
  double step_weight(std::size_t j) const {
    detail::require(j >= 1, "schedule: step weight needs j >= 1");
    const double denom = n_at(j) - 1.0;
    if (denom <= 0.0) return 0.0;
    return (n_at(j) - n_at(j - 1)) / denom;
  }

  friend bool operator==(const Schedule&, const Schedule&) = default;

  /// Snap a continuous training time to the grid: j = ceil(tau * S), clamped to [1, S].
  std::size_t step_for(double t) const {
    detail::require(t >= 0.0 && t <= 1.0, "schedule: tau must lie in [0,1]");
    auto j = static_cast<std::size_t>(std::ceil(t * static_cast<double>(steps)));
    return std::clamp<std::size_t>(j, 1, steps);
  }
};

}  // namespace slm
