#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "rng.hpp"
#include "schedule.hpp"

namespace slm {

/// Candidate-appending forward process over a schedule.
///
/// Every kernel is a product of independent per-dimension Bernoullis:
///   step        q(x_j | x_{j-1})   ones stay, zeros flip with (n_j - n_{j-1}) / (K - n_{j-1})
///   marginal    q(x_j | x_0)       wrong dims on with (n_j - 1) / (K - 1)
///   posterior   q(x_{j-1} | x_j, x_0)  kept wrong dims on with (n_{j-1} - 1) / (n_j - 1)
class ForwardKernel {
 public:
  explicit ForwardKernel(Schedule schedule) : schedule_(schedule) {
    detail::require(schedule_.categories >= 2, "forward kernel: K must be >= 2");
  }

  const Schedule& schedule() const noexcept { return schedule_; }
  std::size_t categories() const noexcept { return schedule_.categories; }
  std::size_t steps() const noexcept { return schedule_.steps; }

  /// Probability that a dimension absent from x_{j-1} is appended at step j.
  double append_probability(std::size_t j) const {
    detail::require(j >= 1 && j <= steps(), "transition: step index must be in [1, S]");
    const double k = static_cast<double>(categories());
    const double prev = schedule_.n_at(j - 1);
    // Already all-ones at j-1: absorb.
    if (k - prev <= 0.0) return 1.0;
    return (schedule_.n_at(j) - prev) / (k - prev);
  }

  /// Probability that a wrong dimension is present at step j given x_0.
  double wrong_inclusion(std::size_t j) const {
    detail::require(j <= steps(), "marginal: step index beyond S");
    const double k = static_cast<double>(categories());
    return (schedule_.n_at(j) - 1.0) / (k - 1.0);
  }

  BernoulliParams transition_params(const CandidateSet& x_prev, std::size_t j) const {
    check_size(x_prev);
    const double a = append_probability(j);
    std::vector<double> p(categories());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = x_prev[i] ? 1.0 : a;
    return BernoulliParams(std::move(p));
  }

  BernoulliParams marginal_params(const CandidateSet& x0, std::size_t j) const {
    check_one_hot(x0);
    const double r = wrong_inclusion(j);
    std::vector<double> p(categories());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = x0[i] ? 1.0 : r;
    return BernoulliParams(std::move(p));
  }

  BernoulliParams posterior_params(const CandidateSet& x_t, const CandidateSet& x0,
                                   std::size_t j) const {
    check_one_hot(x0);
    check_size(x_t);
    detail::require(j >= 1 && j <= steps(), "posterior: step index must be in [1, S]");
    detail::require(is_subset(x0, x_t), "posterior: x0 must be contained in x_t");
    const double f = schedule_.retain_fraction(j);
    std::vector<double> p(categories());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = x0[i] ? 1.0 : (x_t[i] ? f : 0.0);
    return BernoulliParams(std::move(p));
  }

  /// Marginal draw for a whole sequence of true tokens. One uniform is consumed
  /// per (position, dimension), position-major, including the forced truth bit.
  CandidateSequence corrupt(std::span<const std::size_t> x0, std::size_t j, Rng& rng) const {
    const double r = wrong_inclusion(j);
    CandidateSequence out;
    out.reserve(x0.size());
    for (auto token : x0) {
      detail::require(token < categories(), "corrupt: token out of range");
      Bits bits(categories());
      for (std::size_t i = 0; i < bits.size(); ++i) {
        const bool draw = rng.bernoulli(r);
        bits[i] = (i == token || draw) ? 1 : 0;
      }
      out.emplace_back(std::move(bits));
    }
    return out;
  }

 private:
  void check_size(const CandidateSet& c) const {
    detail::require(c.size() == categories(), "forward kernel: candidate set has wrong K");
  }
  void check_one_hot(const CandidateSet& c) const {
    check_size(c);
    detail::require(c.count() == 1, "forward kernel: x0 must be one-hot");
  }

  Schedule schedule_;
};

/// Independent Bernoulli draw per dimension. May return the zero vector.
inline Bits sample_bernoulli(const BernoulliParams& params, Rng& rng) {
  Bits out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = rng.bernoulli(params[i]) ? 1 : 0;
  return out;
}

}  // namespace slm
