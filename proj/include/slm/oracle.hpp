#pragma once

// Brute-force references used only for verification. Everything here is
// computed from the raw formulas (schedule, per-dimension two-state chain,
// trajectory sums) and shares nothing with the kernels beyond core types, so
// agreement between the two is meaningful.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "predictor.hpp"

namespace slm::oracle {

using slm::EnumerationBudget;

/// n(tau_j) on the uniform grid of S steps, written out independently.
inline double n_grid(std::size_t k, std::size_t s, std::size_t j) {
  if (j == 0) return 1.0;
  if (j == s) return static_cast<double>(k);
  return std::exp(std::log(static_cast<double>(k)) * static_cast<double>(j) / static_cast<double>(s));
}

/// P(bit = 1 at step j | bit at step 0) by stepping the two-state chain.
inline double marginal_by_composition(std::size_t k, std::size_t s, std::size_t j, int x0_bit) {
  detail::require(k >= 2 && s >= 1 && j <= s, "oracle: need K >= 2, S >= 1, j <= S");
  if (x0_bit == 1) return 1.0;
  double on = 0.0;
  for (std::size_t t = 1; t <= j; ++t) {
    const double prev = n_grid(k, s, t - 1), cur = n_grid(k, s, t);
    const double step = (static_cast<double>(k) - prev) > 0.0 ? (cur - prev) / (static_cast<double>(k) - prev) : 1.0;
    on = on * 1.0 + (1.0 - on) * step;
  }
  return on;
}

/// P(bit = 1 at step j-1 | bit at j, bit at 0) by Bayes' rule on the chain:
/// joint(x_{j-1}=1, x_j=1) / P(x_j=1), with P(x_j=1) recomposed from step j-1.
inline double posterior_by_bayes(std::size_t k, std::size_t s, std::size_t j, int x0_bit, int xt_bit) {
  detail::require(j >= 1 && j <= s, "oracle: posterior needs 1 <= j <= S");
  detail::require(!(x0_bit == 1 && xt_bit == 0), "oracle: x0=1, xt=0 is unreachable");
  if (xt_bit == 0) return 0.0;
  if (x0_bit == 1) return 1.0;
  const double prev_on = marginal_by_composition(k, s, j - 1, 0);
  const double prev = n_grid(k, s, j - 1), cur = n_grid(k, s, j);
  const double step = (static_cast<double>(k) - prev) > 0.0 ? (cur - prev) / (static_cast<double>(k) - prev) : 1.0;
  const double joint_on_on = prev_on * 1.0;
  const double joint_off_on = (1.0 - prev_on) * step;
  return joint_on_on / (joint_on_on + joint_off_on);
}

// ---------------------------------------------------------------------------
// Lattice checks.

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  std::string detail;  // first failing case, both values
};

using MarginalFn = std::function<double(std::size_t k, std::size_t s, std::size_t j)>;
using PosteriorFn = std::function<double(std::size_t k, std::size_t s, std::size_t j)>;

inline const std::vector<std::size_t>& lattice_categories() {
  static const std::vector<std::size_t> v{2, 3, 5};
  return v;
}
inline const std::vector<std::size_t>& lattice_steps() {
  static const std::vector<std::size_t> v{2, 4, 8};
  return v;
}

/// Wrong-dimension marginal from the implementation vs chain composition.
inline CheckResult check_marginals(const MarginalFn& impl, double tol = 1e-12) {
  CheckResult res{"marginal == composed transitions", true, 0.0, {}};
  for (auto k : lattice_categories())
    for (auto s : lattice_steps())
      for (std::size_t j = 0; j <= s; ++j) {
        const double a = impl(k, s, j), b = marginal_by_composition(k, s, j, 0);
        const double err = std::abs(a - b);
        res.max_error = std::max(res.max_error, err);
        if (!(err <= tol) && res.passed) {
          res.passed = false;
          res.detail = "K=" + std::to_string(k) + " S=" + std::to_string(s) + " j=" + std::to_string(j) +
                       ": impl=" + std::to_string(a) + " oracle=" + std::to_string(b);
        }
      }
  return res;
}

/// Kept-wrong-dimension posterior from the implementation vs Bayes' rule.
inline CheckResult check_posteriors(const PosteriorFn& impl, double tol = 1e-12) {
  CheckResult res{"posterior == Bayes rule on chain", true, 0.0, {}};
  for (auto k : lattice_categories())
    for (auto s : lattice_steps())
      for (std::size_t j = 1; j <= s; ++j) {
        const double a = impl(k, s, j), b = posterior_by_bayes(k, s, j, 0, 1);
        const double err = std::abs(a - b);
        res.max_error = std::max(res.max_error, err);
        if (!(err <= tol) && res.passed) {
          res.passed = false;
          res.detail = "K=" + std::to_string(k) + " S=" + std::to_string(s) + " j=" + std::to_string(j) +
                       ": impl=" + std::to_string(a) + " oracle=" + std::to_string(b);
        }
      }
  return res;
}

// ---------------------------------------------------------------------------
// Exact ELBO and NLL by trajectory enumeration.

struct WeightedSequence {
  std::vector<std::size_t> tokens;
  double weight = 1.0;
  ClassLabel cls;
};

struct NllResult {
  double elbo_nats = 0.0;
  double nll_nats = 0.0;
};

namespace detail {

// States containing x0: free bits of all positions packed into one code.
inline CandidateSequence decode_state(std::uint64_t code, std::span<const std::size_t> x0, std::size_t k) {
  CandidateSequence out;
  std::size_t bit = 0;
  for (auto t : x0) {
    Bits b(k, 0);
    for (std::size_t i = 0; i < k; ++i) b[i] = (i == t) ? 1 : static_cast<std::uint8_t>((code >> bit++) & 1U);
    out.emplace_back(std::move(b));
  }
  return out;
}

// Product over positions/dims of Bern(param) evaluated at `to`, where `param`
// is a per-(position, dim) probability.
inline double bernoulli_prob(const CandidateSequence& to, const std::vector<std::vector<double>>& param) {
  double p = 1.0;
  for (std::size_t l = 0; l < to.size(); ++l)
    for (std::size_t i = 0; i < to[l].size(); ++i) p *= to[l][i] ? param[l][i] : 1.0 - param[l][i];
  return p;
}

}  // namespace detail

/// ELBO and exact -log p(x0) of the reverse Bernoulli chain for one sequence,
/// summing over every trajectory x_{S-1}, ..., x_1 of supersets of x0.
template <Predictor P>
NllResult exact_nll_sequence(const P& predictor, std::size_t steps, const WeightedSequence& seq,
                             EnumerationBudget budget = {}) {
  const std::size_t k = predictor.categories(), len = seq.tokens.size(), s = steps;
  const std::size_t free_bits = (k - 1) * len;
  slm::detail::require(free_bits < 30, "exact_nll: state space too large");
  const std::uint64_t states = std::uint64_t{1} << free_bits;
  const std::uint64_t all_on = states - 1;
  double traj_count = 1.0;
  for (std::size_t t = 1; t < s; ++t) traj_count *= static_cast<double>(states);
  slm::detail::require(traj_count <= static_cast<double>(budget.max_states), "exact_nll: enumeration budget exceeded");

  std::map<std::pair<std::size_t, std::uint64_t>, std::vector<std::vector<double>>> reverse_cache;
  // Reverse-step Bernoulli parameters at step j from state `code`.
  auto reverse_param = [&](std::size_t j, std::uint64_t code) -> const std::vector<std::vector<double>>& {
    auto key = std::make_pair(j, code);
    auto it = reverse_cache.find(key);
    if (it != reverse_cache.end()) return it->second;
    const auto x = detail::decode_state(code, seq.tokens, k);
    const double tau = j == s ? 1.0 : static_cast<double>(j) / static_cast<double>(s);
    const auto nn = predictor.predict(x, tau, seq.cls);
    const double frac = (n_grid(k, s, j - 1) - 1.0) / (n_grid(k, s, j) - 1.0);
    std::vector<std::vector<double>> param(len, std::vector<double>(k, 0.0));
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < k; ++i)
        param[l][i] = x[l][i] ? nn[l].probs[i] + (1.0 - nn[l].probs[i]) * frac : 0.0;
    return reverse_cache.emplace(key, std::move(param)).first->second;
  };
  // Forward step probability parameters at step j from state `code`.
  auto forward_param = [&](std::size_t j, std::uint64_t code) {
    const auto x = detail::decode_state(code, seq.tokens, k);
    const double prev = n_grid(k, s, j - 1), cur = n_grid(k, s, j);
    const double kk = static_cast<double>(k);
    const double a = kk - prev > 0.0 ? (cur - prev) / (kk - prev) : 1.0;
    std::vector<std::vector<double>> param(len, std::vector<double>(k));
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < k; ++i) param[l][i] = x[l][i] ? 1.0 : a;
    return param;
  };

  double elbo = 0.0, model_prob = 0.0;
  std::vector<std::uint64_t> traj(s + 1, 0);  // traj[j] = state code at step j
  traj[s] = all_on;
  const std::uint64_t one_hot_code = 0;
  std::vector<std::uint64_t> digits(s > 1 ? s - 1 : 0, 0);
  while (true) {
    for (std::size_t t = 1; t < s; ++t) traj[t] = digits[t - 1];
    traj[0] = one_hot_code;
    double q = 1.0, p = 1.0;
    for (std::size_t j = 1; j <= s; ++j) {
      const auto to = detail::decode_state(traj[j], seq.tokens, k);
      q *= detail::bernoulli_prob(to, forward_param(j, traj[j - 1]));
      const auto back = detail::decode_state(traj[j - 1], seq.tokens, k);
      p *= detail::bernoulli_prob(back, reverse_param(j, traj[j]));
    }
    model_prob += p;
    if (q > 0.0) elbo += q * (p > 0.0 ? std::log(q) - std::log(p) : std::numeric_limits<double>::infinity());
    // Next trajectory (odometer over the S-1 intermediate states).
    std::size_t pos = 0;
    while (pos < digits.size() && ++digits[pos] == states) digits[pos++] = 0;
    if (pos == digits.size()) break;
  }
  return {elbo, -std::log(model_prob)};
}

/// Expectations over a weighted dataset law of the per-sequence ELBO and NLL.
template <Predictor P>
NllResult exact_nll(std::span<const WeightedSequence> law, std::size_t steps, const P& predictor,
                    EnumerationBudget budget = {}) {
  NllResult total;
  double wsum = 0.0;
  for (const auto& seq : law) {
    const auto r = exact_nll_sequence(predictor, steps, seq, budget);
    total.elbo_nats += seq.weight * r.elbo_nats;
    total.nll_nats += seq.weight * r.nll_nats;
    wsum += seq.weight;
  }
  total.elbo_nats /= wsum;
  total.nll_nats /= wsum;
  return total;
}

/// Per-token ELBO (nats) of the predictor that is uniform over every support.
/// The number of extra candidates at step j is Binomial(K-1, (n_j-1)/(K-1)),
/// and every term depends on the state only through that count.
inline double uniform_predictor_elbo(std::size_t k, std::size_t s) {
  const double kk = static_cast<double>(k);
  auto binom_pmf = [&](std::size_t n, std::size_t m, double r) {
    const double logc = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(m) + 1) -
                        std::lgamma(static_cast<double>(n - m) + 1);
    if ((r == 0.0 && m > 0) || (r == 1.0 && m < n)) return 0.0;
    const double lr = m > 0 ? static_cast<double>(m) * std::log(r) : 0.0;
    const double l1r = n - m > 0 ? static_cast<double>(n - m) * std::log1p(-r) : 0.0;
    return std::exp(logc + lr + l1r);
  };
  double total = 0.0;
  for (std::size_t j = 1; j <= s; ++j) {
    const double r = (n_grid(k, s, j) - 1.0) / (kk - 1.0);
    const double f = (n_grid(k, s, j - 1) - 1.0) / (n_grid(k, s, j) - 1.0);
    for (std::size_t extra = 0; extra + 1 <= k; ++extra) {
      const double w = binom_pmf(k - 1, extra, r);
      if (w == 0.0 || extra == 0) continue;  // singleton support contributes 0
      const double m = static_cast<double>(extra + 1);
      double term;
      if (j == 1) {
        term = std::log(m) - static_cast<double>(extra) * std::log1p(-1.0 / m);
      } else {
        const double pred = 1.0 / m + (1.0 - 1.0 / m) * f;
        term = -std::log(pred);
        if (f > 0.0) term += static_cast<double>(extra) * f * std::log(f / pred);
        term += static_cast<double>(extra) * (1.0 - f) * std::log((1.0 - f) / (1.0 - pred));
      }
      total += w * term;
    }
  }
  return total;
}

// ---------------------------------------------------------------------------
// Grid projection.

/// Minimiser of ||w - v|| over the simplex lattice of spacing `resolution`
/// (dimension <= 3). Exhaustive when the lattice is small, otherwise refined
/// coarse-to-fine (valid because the objective is strictly convex).
inline std::vector<double> projection_by_grid(std::span<const double> v, double resolution) {
  const std::size_t d = v.size();
  slm::detail::require(d >= 1 && d <= 3, "projection_by_grid: dimension must be 1..3");
  slm::detail::require(resolution > 0.0 && resolution <= 0.5, "projection_by_grid: bad resolution");
  if (d == 1) return {1.0};
  auto dist = [&](double a, double b, double c) {
    double e = (a - v[0]) * (a - v[0]) + (b - v[1]) * (b - v[1]);
    if (d == 3) e += (c - v[2]) * (c - v[2]);
    return e;
  };
  if (d == 2) {
    const auto n = static_cast<std::size_t>(std::llround(1.0 / resolution));
    double best = std::numeric_limits<double>::infinity(), bw = 0;
    for (std::size_t i = 0; i <= n; ++i) {
      const double a = static_cast<double>(i) / static_cast<double>(n);
      const double e = dist(a, 1.0 - a, 0.0);
      if (e < best) best = e, bw = a;
    }
    return {bw, 1.0 - bw};
  }
  // d == 3: search (a, b) with c = 1 - a - b >= 0 on a window around a centre.
  double ca = 1.0 / 3, cb = 1.0 / 3, half = 1.0;
  double h = std::max(resolution, 1e-2);
  while (true) {
    const auto n = static_cast<std::size_t>(std::llround(1.0 / h));
    const double step = 1.0 / static_cast<double>(n);
    auto lo = [&](double c) { return static_cast<long>(std::floor(std::max(0.0, c - half) / step)); };
    auto hi = [&](double c) { return static_cast<long>(std::ceil(std::min(1.0, c + half) / step)); };
    double best = std::numeric_limits<double>::infinity(), ba = ca, bb = cb;
    for (long i = lo(ca); i <= hi(ca); ++i)
      for (long k = lo(cb); k <= hi(cb); ++k) {
        if (i + k > static_cast<long>(n)) break;
        const double a = static_cast<double>(i) * step, b = static_cast<double>(k) * step;
        const double e = dist(a, b, static_cast<double>(static_cast<long>(n) - i - k) * step);
        if (e < best) best = e, ba = a, bb = b;
      }
    ca = ba, cb = bb;
    if (h <= resolution) break;
    half = 3.0 * h;
    h = std::max(h / 10.0, resolution);
  }
  return {ca, cb, 1.0 - ca - cb};
}

}  // namespace slm::oracle
