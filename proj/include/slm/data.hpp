#pragma once

#include <array>
#include <climits>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace slm {

// ---------------------------------------------------------------------------
// Synthetic categorical sequences.

enum class SyntheticKind { iid, markov };

struct SyntheticSpec {
  std::size_t categories = 2;  // K
  std::size_t length = 1;      // L
  std::size_t count = 1;       // N
  SyntheticKind kind = SyntheticKind::iid;
  // iid: one row shared by all positions, or one row per position.
  std::vector<std::vector<double>> probs;
  // iid with classes: row c is the per-position law of class c; labels uniform.
  std::vector<std::vector<double>> class_probs;
  // markov: initial distribution and row-stochastic transition matrix.
  std::vector<double> initial;
  std::vector<std::vector<double>> transition;
  std::uint64_t seed = 0;

  std::size_t classes() const noexcept { return class_probs.size(); }

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

namespace detail {

inline void require_distribution(std::span<const double> row, std::size_t k, const char* what) {
  require(row.size() == k, std::string(what) + ": row must have K entries");
  double sum = 0.0;
  for (double p : row) {
    require(std::isfinite(p) && p >= 0.0, std::string(what) + ": probabilities must be >= 0");
    sum += p;
  }
  require(std::abs(sum - 1.0) <= 1e-12, std::string(what) + ": row must sum to 1");
}

}  // namespace detail

/// Inverse-CDF draw; the last nonzero category absorbs rounding.
inline std::size_t draw_categorical(std::span<const double> probs, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    acc += probs[i];
    if (u < acc) return i;
  }
  return last;
}

inline void validate(const SyntheticSpec& s) {
  detail::require(s.categories >= 1 && s.length >= 1, "synthetic: K and L must be >= 1");
  if (s.kind == SyntheticKind::iid) {
    if (!s.class_probs.empty()) {
      for (const auto& r : s.class_probs) detail::require_distribution(r, s.categories, "class_probs");
    } else {
      detail::require(s.probs.size() == 1 || s.probs.size() == s.length,
                      "synthetic: probs must have 1 or L rows");
      for (const auto& r : s.probs) detail::require_distribution(r, s.categories, "probs");
    }
  } else {
    detail::require_distribution(s.initial, s.categories, "initial");
    detail::require(s.transition.size() == s.categories, "synthetic: transition must be K x K");
    for (const auto& r : s.transition) detail::require_distribution(r, s.categories, "transition");
  }
}

/// N sequences drawn independently; sequence n uses stream split(n) of the seed.
inline SequenceBatch generate(const SyntheticSpec& spec) {
  validate(spec);
  SequenceBatch b;
  b.categories = spec.categories;
  b.length = spec.length;
  b.classes = spec.classes();
  b.tokens.resize(spec.count);
  if (b.classes > 0) b.labels.emplace(spec.count);
  const Rng master(spec.seed);
  for (std::size_t n = 0; n < spec.count; ++n) {
    Rng rng = master.split(n);
    auto& seq = b.tokens[n];
    seq.resize(spec.length);
    if (spec.kind == SyntheticKind::iid) {
      if (b.classes > 0) {
        const std::size_t c = rng.below(b.classes);
        (*b.labels)[n] = c;
        for (auto& t : seq) t = draw_categorical(spec.class_probs[c], rng);
      } else {
        for (std::size_t l = 0; l < spec.length; ++l)
          seq[l] = draw_categorical(spec.probs[spec.probs.size() == 1 ? 0 : l], rng);
      }
    } else {
      seq[0] = draw_categorical(spec.initial, rng);
      for (std::size_t l = 1; l < spec.length; ++l)
        seq[l] = draw_categorical(spec.transition[seq[l - 1]], rng);
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Character corpora.

/// 'a'..'z' then space (index 26).
inline std::string default_alphabet() { return "abcdefghijklmnopqrstuvwxyz "; }

class Alphabet {
 public:
  explicit Alphabet(std::string chars = default_alphabet()) : chars_(std::move(chars)) {
    detail::require(!chars_.empty(), "alphabet: empty");
    index_.fill(-1);
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      auto& slot = index_[static_cast<unsigned char>(chars_[i])];
      detail::require(slot < 0, "alphabet: duplicate character");
      slot = static_cast<int>(i);
    }
  }

  std::size_t size() const noexcept { return chars_.size(); }
  const std::string& chars() const noexcept { return chars_; }

  std::size_t index_of(char c) const {
    const int i = index_[static_cast<unsigned char>(c)];
    detail::require(i >= 0, std::string("alphabet: character not in alphabet: ") + c);
    return static_cast<std::size_t>(i);
  }

  std::vector<std::size_t> encode(std::string_view text) const {
    std::vector<std::size_t> out;
    out.reserve(text.size());
    for (std::size_t off = 0; off < text.size(); ++off) {
      const int i = index_[static_cast<unsigned char>(text[off])];
      if (i < 0)
        throw invalid_input("corpus: byte " + std::to_string(static_cast<unsigned char>(text[off])) +
                            " at offset " + std::to_string(off) + " is not in the alphabet");
      out.push_back(static_cast<std::size_t>(i));
    }
    return out;
  }

  std::string decode(std::span<const std::size_t> tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (auto t : tokens) {
      detail::require(t < chars_.size(), "alphabet: token out of range");
      out.push_back(chars_[t]);
    }
    return out;
  }

 private:
  std::string chars_;
  std::array<int, 256> index_{};
};

struct Span {
  std::size_t begin = 0, end = 0;
  std::size_t size() const noexcept { return end > begin ? end - begin : 0; }
};

struct CharCorpus {
  Alphabet alphabet;
  std::size_t chunk_length = 256;
  std::vector<std::size_t> tokens;
  Span train, valid, test;

  const Span& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw invalid_input("corpus: unknown split " + name);
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw invalid_input("cannot open " + path);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Default splits when none are configured: 90% train, 5% valid, 5% test.
inline CharCorpus load_corpus(const std::string& path, Alphabet alphabet = Alphabet(),
                              std::size_t chunk_length = 256) {
  detail::require(chunk_length >= 1, "corpus: chunk length must be >= 1");
  CharCorpus c{std::move(alphabet), chunk_length, {}, {}, {}, {}};
  c.tokens = c.alphabet.encode(read_file(path));
  const std::size_t n = c.tokens.size();
  c.train = {0, n * 90 / 100};
  c.valid = {c.train.end, n * 95 / 100};
  c.test = {c.valid.end, n};
  return c;
}

/// Non-overlapping windows in order; a trailing partial window is dropped.
inline std::vector<std::vector<std::size_t>> sequential_chunks(std::span<const std::size_t> tokens,
                                                               Span span, std::size_t length,
                                                               std::size_t max_chunks = SIZE_MAX) {
  detail::require(span.end <= tokens.size(), "corpus: split beyond end of corpus");
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t off = span.begin; off + length <= span.end && out.size() < max_chunks; off += length)
    out.emplace_back(tokens.begin() + off, tokens.begin() + off + length);
  return out;
}

/// Windows at uniformly random offsets inside the split.
inline std::vector<std::vector<std::size_t>> random_chunks(std::span<const std::size_t> tokens,
                                                           Span span, std::size_t length,
                                                           std::size_t count, Rng& rng) {
  detail::require(span.end <= tokens.size(), "corpus: split beyond end of corpus");
  detail::require(span.size() >= length, "corpus: split shorter than one chunk");
  const std::size_t positions = span.size() - length + 1;
  std::vector<std::vector<std::size_t>> out(count);
  for (auto& chunk : out) {
    const std::size_t off = span.begin + rng.below(positions);
    chunk.assign(tokens.begin() + off, tokens.begin() + off + length);
  }
  return out;
}

/// -sum_k p_k log p_k over the empirical token frequencies of one sequence.
inline double token_entropy(std::span<const std::size_t> sequence) {
  detail::require(!sequence.empty(), "token_entropy: empty sequence");
  std::map<std::size_t, std::size_t> counts;
  for (auto t : sequence) ++counts[t];
  const double n = static_cast<double>(sequence.size());
  double h = 0.0;
  for (const auto& [tok, c] : counts) {
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

/// Entropy in nats of the unigram frequencies of a token stream.
inline double unigram_entropy(std::span<const std::size_t> tokens) { return token_entropy(tokens); }

}  // namespace slm
