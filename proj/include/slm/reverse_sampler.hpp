#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "forward_process.hpp"
#include "parallel.hpp"
#include "predictor.hpp"
#include "rng.hpp"
#include "simplex.hpp"

namespace slm {

struct SamplerConfig {
  std::size_t steps = 1;  // S
  double gamma = 1.0;     // guidance factor; > 1 may leave the simplex
  ClassLabel cls;         // nullopt = unconditional
  std::uint64_t seed = 0;
};

/// Reverse Bernoulli parameters: [NN + (1 - NN) f_j] on the support, 0 elsewhere,
/// with f_j = (n_{j-1} - 1) / (n_j - 1).
inline BernoulliParams reverse_step_params(const PredictorOutput& nn, const CandidateSet& x_t,
                                           const Schedule& schedule, std::size_t j) {
  detail::require(nn.support == x_t, "reverse_step_params: predictor support differs from x_t");
  const double f = schedule.retain_fraction(j);
  std::vector<double> p(x_t.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!x_t[i]) continue;
    // Clamp guards the last ulp; inputs are simplex points.
    p[i] = std::clamp(nn.probs[i] + (1.0 - nn.probs[i]) * f, 0.0, 1.0);
  }
  return BernoulliParams(std::move(p));
}

/// gamma * cond + (1 - gamma) * uncond, projected back onto the simplex of the
/// support when the mix leaves [0, 1]. Off-support entries stay exactly 0.
inline PredictorOutput cfg_mix(const PredictorOutput& cond, const PredictorOutput& uncond,
                               double gamma) {
  detail::require(cond.support == uncond.support, "cfg_mix: supports differ");
  const auto& support = cond.support;
  std::vector<double> mix(cond.size(), 0.0);
  bool outside = false;
  for (std::size_t i = 0; i < mix.size(); ++i) {
    if (!support[i]) continue;
    mix[i] = gamma * cond.probs[i] + (1.0 - gamma) * uncond.probs[i];
    if (!std::isfinite(mix[i])) throw numeric_fault("cfg_mix: non-finite mixture");
    if (mix[i] < 0.0 || mix[i] > 1.0) outside = true;
  }
  if (outside) {
    std::vector<double> sub;
    sub.reserve(support.count());
    for (std::size_t i = 0; i < mix.size(); ++i)
      if (support[i]) sub.push_back(mix[i]);
    const auto proj = simplex_project(sub);
    std::size_t s = 0;
    for (std::size_t i = 0; i < mix.size(); ++i)
      if (support[i]) mix[i] = proj[s++];
  }
  return PredictorOutput{std::move(mix), support};
}

/// Guided per-position predictions: conditional only when gamma == 1 or no
/// class is requested, otherwise the mixture.
template <Predictor P>
std::vector<PredictorOutput> guided_predict(const P& predictor, std::span<const CandidateSet> x,
                                            double tau, const SamplerConfig& cfg) {
  if (!cfg.cls || cfg.gamma == 1.0) return predictor.predict(x, tau, cfg.cls);
  auto cond = predictor.predict(x, tau, cfg.cls);
  auto uncond = predictor.predict(x, tau, std::nullopt);
  std::vector<PredictorOutput> out;
  out.reserve(cond.size());
  for (std::size_t l = 0; l < cond.size(); ++l) out.push_back(cfg_mix(cond[l], uncond[l], cfg.gamma));
  return out;
}

inline std::size_t argmax_lowest(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Argmax with exact ties resolved by u in [0,1) among the tied indices.
inline std::size_t argmax_random_tie(std::span<const double> v, double u) {
  const double hi = v[argmax_lowest(v)];
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] == hi) tied.push_back(i);
  const auto pick = static_cast<std::size_t>(u * static_cast<double>(tied.size()));
  return tied[std::min(pick, tied.size() - 1)];
}

struct SampleResult {
  std::vector<std::size_t> tokens;
  // trajectory[s] is the state at grid step S - s (trajectory[0] = all-ones).
  std::vector<CandidateSequence> trajectory;
  std::size_t fallbacks = 0;
};

/// Ancestral sampling from all-ones down to step 1, then argmax of the guided
/// prediction at tau_1 with ties split by one extra draw per position.
///
/// Draw order: step-outer, position-major, dimension-minor; one uniform per
/// (step, position, dimension) regardless of support, so equal configurations
/// consume identical streams. An all-zero draw is replaced by a one-hot at the
/// largest pre-sampling parameter (lowest index on ties).
template <Predictor P>
SampleResult sample_one(const P& predictor, const SamplerConfig& cfg, Rng rng,
                        bool record_trajectory = false) {
  detail::require(cfg.steps >= 1, "sample: S must be >= 1");
  const std::size_t k = predictor.categories(), len = predictor.length();
  const Schedule schedule(k, cfg.steps);
  SampleResult res;
  CandidateSequence x = all_ones_sequence(len, k);
  if (record_trajectory) res.trajectory.push_back(x);
  for (std::size_t j = cfg.steps; j >= 1; --j) {
    const auto nn = guided_predict(predictor, x, schedule.tau(j), cfg);
    CandidateSequence next;
    next.reserve(len);
    for (std::size_t l = 0; l < len; ++l) {
      for (double p : nn[l].probs)
        if (!std::isfinite(p)) throw numeric_fault("sample: non-finite predictor output");
      const auto params = reverse_step_params(nn[l], x[l], schedule, j);
      Bits bits = sample_bernoulli(params, rng);
      bool any = false;
      for (std::size_t i = 0; i < k; ++i) {
        bits[i] &= x[l][i];
        any = any || bits[i];
      }
      if (!any) {
        bits.assign(k, 0);
        bits[argmax_lowest(params.probs)] = 1;
        ++res.fallbacks;
      }
      next.emplace_back(std::move(bits));
    }
    x = std::move(next);
    if (record_trajectory) res.trajectory.push_back(x);
  }
  const auto final_nn = guided_predict(predictor, x, schedule.tau(1), cfg);
  res.tokens.reserve(len);
  for (const auto& out : final_nn) res.tokens.push_back(argmax_random_tie(out.probs, rng.uniform()));
  return res;
}

/// `count` independent samples; sample s uses stream split(s) of the seed.
template <Predictor P>
std::vector<std::vector<std::size_t>> sample(const P& predictor, const SamplerConfig& cfg,
                                             std::size_t count) {
  std::vector<std::vector<std::size_t>> out(count);
  const Rng master(cfg.seed);
  parallel_for(count, [&](std::size_t s) { out[s] = sample_one(predictor, cfg, master.split(s)).tokens; });
  return out;
}

}  // namespace slm
