#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace slm {

using Bits = std::vector<std::uint8_t>;

/// Binary inclusion mask over K categories with at least one category kept.
/// Stored densely; equality compares the bit patterns.
class CandidateSet {
 public:
  explicit CandidateSet(Bits bits) : bits_(std::move(bits)) {
    detail::require(!bits_.empty(), "candidate set: K must be >= 1");
    std::size_t ones = 0;
    for (auto b : bits_) {
      detail::require(b <= 1, "candidate set: bits must be 0 or 1");
      ones += b;
    }
    detail::require(ones > 0, "candidate set: at least one bit must be set");
    count_ = ones;
  }

  std::size_t size() const noexcept { return bits_.size(); }
  std::size_t count() const noexcept { return count_; }
  bool test(std::size_t i) const { return bits_.at(i) != 0; }
  std::uint8_t operator[](std::size_t i) const noexcept { return bits_[i]; }
  const Bits& bits() const noexcept { return bits_; }

  friend bool operator==(const CandidateSet&, const CandidateSet&) = default;

 private:
  Bits bits_;
  std::size_t count_ = 0;
};

using CandidateSequence = std::vector<CandidateSet>;

/// Independent per-dimension inclusion probabilities.
struct BernoulliParams {
  std::vector<double> probs;

  BernoulliParams() = default;
  explicit BernoulliParams(std::vector<double> p) : probs(std::move(p)) {
    for (double v : probs)
      detail::require(v >= 0.0 && v <= 1.0, "bernoulli params must lie in [0,1]");
  }
  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const noexcept { return probs[i]; }
};

/// Predictor distribution over K categories, zero outside its support.
struct PredictorOutput {
  std::vector<double> probs;
  CandidateSet support;

  std::size_t size() const noexcept { return probs.size(); }
  double operator[](std::size_t i) const noexcept { return probs[i]; }
};

/// Throws unless `out` is a simplex point carried by its support.
inline void validate(const PredictorOutput& out) {
  detail::require(out.probs.size() == out.support.size(), "predictor output: size mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < out.probs.size(); ++i) {
    const double p = out.probs[i];
    if (!std::isfinite(p)) throw numeric_fault("predictor output: non-finite probability");
    detail::require(p >= 0.0, "predictor output: negative probability");
    if (!out.support.test(i))
      detail::require(std::abs(p) <= 1e-12, "predictor output: mass outside support");
    sum += p;
  }
  detail::require(std::abs(sum - 1.0) <= 1e-9, "predictor output: probabilities must sum to 1");
}

using ClassLabel = std::optional<std::size_t>;

/// N sequences of L category indices, optionally labelled with one of C classes.
struct SequenceBatch {
  std::size_t categories = 0;  // K
  std::size_t length = 0;      // L
  std::size_t classes = 0;     // C, 0 when unlabelled
  std::vector<std::vector<std::size_t>> tokens;
  std::optional<std::vector<std::size_t>> labels;

  std::size_t size() const noexcept { return tokens.size(); }
  bool empty() const noexcept { return tokens.empty(); }

  ClassLabel label(std::size_t n) const {
    if (!labels) return std::nullopt;
    return (*labels)[n];
  }

  void validate() const {
    detail::require(categories >= 1, "batch: K must be >= 1");
    for (const auto& seq : tokens) {
      detail::require(seq.size() == length, "batch: all sequences must have length L");
      for (auto t : seq) detail::require(t < categories, "batch: token index out of range");
    }
    if (labels) {
      detail::require(labels->size() == tokens.size(), "batch: one label per sequence");
      for (auto c : *labels) detail::require(c < classes, "batch: label index out of range");
    }
  }
};

inline CandidateSet one_hot(std::size_t index, std::size_t k) {
  detail::require(index < k, "one_hot: index " + std::to_string(index) + " out of range for K=" +
                                 std::to_string(k));
  Bits bits(k, 0);
  bits[index] = 1;
  return CandidateSet(std::move(bits));
}

inline CandidateSet all_ones(std::size_t k) {
  detail::require(k >= 1, "all_ones: K must be >= 1");
  return CandidateSet(Bits(k, 1));
}

inline bool is_subset(const CandidateSet& a, const CandidateSet& b) {
  detail::require(a.size() == b.size(), "is_subset: mismatched K");
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

/// Centroid of the simplex face spanned by the set: bits / popcount.
inline std::vector<double> normalize(const CandidateSet& c) {
  const double inv = 1.0 / static_cast<double>(c.count());
  std::vector<double> out(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) out[i] = c[i] ? inv : 0.0;
  return out;
}

inline std::vector<double> normalize(std::span<const std::uint8_t> bits) {
  const auto ones = std::accumulate(bits.begin(), bits.end(), std::size_t{0});
  detail::require(ones > 0, "normalize: all-zero vector");
  return normalize(CandidateSet(Bits(bits.begin(), bits.end())));
}

inline CandidateSequence one_hot_sequence(std::span<const std::size_t> tokens, std::size_t k) {
  CandidateSequence out;
  out.reserve(tokens.size());
  for (auto t : tokens) out.push_back(one_hot(t, k));
  return out;
}

inline CandidateSequence all_ones_sequence(std::size_t length, std::size_t k) {
  return CandidateSequence(length, all_ones(k));
}

}  // namespace slm

namespace slm {

/// Cap on enumerated configurations for exact (brute-force) computations.
struct EnumerationBudget {
  std::size_t max_states = std::size_t{1} << 22;
};

}  // namespace slm
