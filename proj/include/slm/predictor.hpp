#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"

namespace slm {

/// Anything that maps a per-position candidate-set state, a time in [0,1] and
/// an optional class label to one support-restricted distribution per position.
template <class P>
concept Predictor = requires(const P& p, std::span<const CandidateSet> x_t, double tau,
                             ClassLabel cls) {
  { p.predict(x_t, tau, cls) } -> std::same_as<std::vector<PredictorOutput>>;
  { p.categories() } -> std::convertible_to<std::size_t>;
  { p.length() } -> std::convertible_to<std::size_t>;
};

/// Exponential normalisation over the support only; off-support logits are
/// treated as -inf so their probability is exactly zero.
inline PredictorOutput masked_softmax(std::span<const double> logits, const CandidateSet& support) {
  detail::require(logits.size() == support.size(), "masked_softmax: size mismatch");
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) throw numeric_fault("masked_softmax: non-finite logit");
    if (support[i]) hi = std::max(hi, logits[i]);
  }
  std::vector<double> p(logits.size(), 0.0);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!support[i]) continue;
    p[i] = std::exp(logits[i] - hi);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return PredictorOutput{std::move(p), support};
}

/// Wraps a per-position logit function; used for fixtures and probes.
class LogitPredictor {
 public:
  using Fn = std::function<std::vector<std::vector<double>>(std::span<const CandidateSet>, double,
                                                            ClassLabel)>;

  LogitPredictor(std::size_t k, std::size_t l, Fn fn) : k_(k), l_(l), fn_(std::move(fn)) {}

  std::size_t categories() const noexcept { return k_; }
  std::size_t length() const noexcept { return l_; }

  std::vector<PredictorOutput> predict(std::span<const CandidateSet> x_t, double tau,
                                       ClassLabel cls) const {
    detail::require(x_t.size() == l_, "predict: wrong sequence length");
    auto logits = fn_(x_t, tau, cls);
    std::vector<PredictorOutput> out;
    out.reserve(l_);
    for (std::size_t l = 0; l < l_; ++l) out.push_back(masked_softmax(logits[l], x_t[l]));
    return out;
  }

 private:
  std::size_t k_, l_;
  Fn fn_;
};

/// Puts all mass on a fixed token per position whenever it is in the support;
/// otherwise spreads uniformly. With the ground truth it is the perfect predictor.
class OneHotPredictor {
 public:
  OneHotPredictor(std::size_t k, std::vector<std::size_t> tokens) : k_(k), tokens_(std::move(tokens)) {}

  std::size_t categories() const noexcept { return k_; }
  std::size_t length() const noexcept { return tokens_.size(); }

  std::vector<PredictorOutput> predict(std::span<const CandidateSet> x_t, double,
                                       ClassLabel) const {
    detail::require(x_t.size() == tokens_.size(), "predict: wrong sequence length");
    std::vector<PredictorOutput> out;
    out.reserve(x_t.size());
    for (std::size_t l = 0; l < x_t.size(); ++l) {
      std::vector<double> p(k_, 0.0);
      if (x_t[l].test(tokens_[l]))
        p[tokens_[l]] = 1.0;
      else
        p = normalize(x_t[l]);
      out.push_back(PredictorOutput{std::move(p), x_t[l]});
    }
    return out;
  }

 private:
  std::size_t k_;
  std::vector<std::size_t> tokens_;
};

/// Uniform over the current support at every position.
class UniformPredictor {
 public:
  UniformPredictor(std::size_t k, std::size_t l) : k_(k), l_(l) {}
  std::size_t categories() const noexcept { return k_; }
  std::size_t length() const noexcept { return l_; }

  std::vector<PredictorOutput> predict(std::span<const CandidateSet> x_t, double,
                                       ClassLabel) const {
    detail::require(x_t.size() == l_, "predict: wrong sequence length");
    std::vector<PredictorOutput> out;
    out.reserve(l_);
    for (const auto& c : x_t) out.push_back(PredictorOutput{normalize(c), c});
    return out;
  }

 private:
  std::size_t k_, l_;
};

}  // namespace slm
