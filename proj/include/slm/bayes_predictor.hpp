#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "forward_process.hpp"

namespace slm {

/// Exact dataset posterior mean E[x_0 | x_t] under the forward marginal:
///
///   NN(x_t, tau)_l = sum_u w_u q(x_t | u) onehot(u_l) / sum_u w_u q(x_t | u)
///
/// with q(x_t | u) the product over positions and dimensions of the marginal
/// Bernoulli likelihoods at n(tau). Duplicate sequences are merged into weights.
/// Verification device only: cost is O(unique sequences * L * K) per call.
class BayesPredictor {
 public:
  BayesPredictor(const SequenceBatch& data, const ForwardKernel& kernel,
                 EnumerationBudget budget = {})
      : schedule_(kernel.schedule()), k_(data.categories), l_(data.length) {
    data.validate();
    detail::require(!data.empty(), "bayes predictor: empty dataset");
    detail::require(data.categories == kernel.categories(), "bayes predictor: K mismatch with kernel");
    detail::require(data.size() * data.length * data.categories <= budget.max_states,
                    "bayes predictor: dataset exceeds enumeration budget");
    std::map<std::pair<std::vector<std::size_t>, std::size_t>, double> merged;
    const std::size_t none = data.classes;  // key for unlabelled rows
    for (std::size_t n = 0; n < data.size(); ++n)
      merged[{data.tokens[n], data.label(n).value_or(none)}] += 1.0;
    for (auto& [key, w] : merged) {
      sequences_.push_back(key.first);
      labels_.push_back(data.labels ? ClassLabel(key.second) : std::nullopt);
      weights_.push_back(w / static_cast<double>(data.size()));
    }
  }

  std::size_t categories() const noexcept { return k_; }
  std::size_t length() const noexcept { return l_; }

  /// A class label restricts the sum to rows carrying that label (when the
  /// data are labelled). A state consistent with no row yields the uniform
  /// distribution over each support.
  std::vector<PredictorOutput> predict(std::span<const CandidateSet> x_t, double tau,
                                       ClassLabel cls) const {
    detail::require(x_t.size() == l_, "predict: wrong sequence length");
    const double r = (schedule_.n_of(tau) - 1.0) / (static_cast<double>(k_) - 1.0);
    const double log_r = std::log(r), log_1mr = std::log1p(-r);
    constexpr double neg_inf = -std::numeric_limits<double>::infinity();

    std::vector<double> logw(sequences_.size(), neg_inf);
    double hi = neg_inf;
    for (std::size_t u = 0; u < sequences_.size(); ++u) {
      if (cls && labels_[u] && *labels_[u] != *cls) continue;
      double ll = std::log(weights_[u]);
      for (std::size_t l = 0; l < l_ && ll > neg_inf; ++l) {
        const auto& c = x_t[l];
        detail::require(c.size() == k_, "predict: candidate set has wrong K");
        for (std::size_t i = 0; i < k_; ++i) {
          if (i == sequences_[u][l]) {
            if (!c[i]) ll = neg_inf;
          } else {
            // Bernoulli(r) likelihood with the 0 * log 0 = 0 convention.
            if (c[i] ? r == 0.0 : r == 1.0) ll = neg_inf;
            else if (c[i]) ll += log_r;
            else if (r > 0.0) ll += log_1mr;
          }
          if (ll == neg_inf) break;
        }
      }
      logw[u] = ll;
      hi = std::max(hi, ll);
    }

    std::vector<PredictorOutput> out;
    out.reserve(l_);
    if (hi == neg_inf) {
      for (const auto& c : x_t) out.push_back(PredictorOutput{normalize(c), c});
      return out;
    }
    std::vector<std::vector<double>> probs(l_, std::vector<double>(k_, 0.0));
    double z = 0.0;
    for (std::size_t u = 0; u < sequences_.size(); ++u) {
      if (logw[u] == neg_inf) continue;
      const double w = std::exp(logw[u] - hi);
      z += w;
      for (std::size_t l = 0; l < l_; ++l) probs[l][sequences_[u][l]] += w;
    }
    for (std::size_t l = 0; l < l_; ++l) {
      for (auto& p : probs[l]) p /= z;
      out.push_back(PredictorOutput{std::move(probs[l]), x_t[l]});
    }
    return out;
  }

 private:
  Schedule schedule_;
  std::size_t k_, l_;
  std::vector<std::vector<std::size_t>> sequences_;
  std::vector<ClassLabel> labels_;
  std::vector<double> weights_;
};

/// bayes_predictor(dataset, kernel)
inline BayesPredictor bayes_predictor(const SequenceBatch& data, const ForwardKernel& kernel,
                                      EnumerationBudget budget = {}) {
  return BayesPredictor(data, kernel, budget);
}

}  // namespace slm
