#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "forward_process.hpp"
#include "predictor.hpp"
#include "reverse_sampler.hpp"
#include "rng.hpp"

namespace slm {

enum class LossKind { elbo_exact, weighted, simple };

inline std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::elbo_exact: return "elbo";
    case LossKind::weighted: return "weighted";
    case LossKind::simple: return "simple";
  }
  return "unknown";
}

inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "elbo" || s == "elbo_exact") return LossKind::elbo_exact;
  if (s == "weighted") return LossKind::weighted;
  if (s == "simple") return LossKind::simple;
  throw invalid_input("unknown loss kind: " + s);
}

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// sum over the support of KL(Bern(gd_i) || Bern(pred_i)), with 0 log 0 = 0.
/// Positive mass against a zero (or unit) prediction yields +inf.
inline double bernoulli_kl(const BernoulliParams& gd, const BernoulliParams& pred,
                           const CandidateSet& support) {
  detail::require(gd.size() == pred.size() && gd.size() == support.size(),
                  "bernoulli_kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < gd.size(); ++i) {
    if (!support[i]) continue;
    const double g = gd[i], p = pred[i];
    if (g > 0.0) {
      if (p <= 0.0) return kInf;
      kl += g * std::log(g / p);
    }
    if (g < 1.0) {
      if (p >= 1.0) return kInf;
      kl += (1.0 - g) * std::log((1.0 - g) / (1.0 - p));
    }
  }
  // Rounding can leave a tiny negative residue when gd == pred.
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// Per-position terms and their derivatives with respect to the predictor's
// probabilities NN (the upstream vector the reference model backpropagates).

/// KL term of one position at step j >= 2.
inline double lt_position(const PredictorOutput& nn, std::size_t truth, const CandidateSet& x_t,
                          const Schedule& schedule, std::size_t j) {
  const ForwardKernel kernel(schedule);
  const auto gd = kernel.posterior_params(x_t, one_hot(truth, x_t.size()), j);
  const auto pred = reverse_step_params(nn, x_t, schedule, j);
  return bernoulli_kl(gd, pred, x_t);
}

/// d KL / d NN_i = (1 - f) (-gd_i / pred_i + (1 - gd_i) / (1 - pred_i)) on the support.
inline std::vector<double> lt_position_grad(const PredictorOutput& nn, std::size_t truth,
                                            const CandidateSet& x_t, const Schedule& schedule,
                                            std::size_t j) {
  const double f = schedule.retain_fraction(j);
  std::vector<double> g(nn.size(), 0.0);
  for (std::size_t i = 0; i < nn.size(); ++i) {
    if (!x_t[i]) continue;
    const double gd = (i == truth) ? 1.0 : f;
    const double pred = nn.probs[i] + (1.0 - nn.probs[i]) * f;
    double d = 0.0;
    if (gd > 0.0) d -= gd / pred;
    if (gd < 1.0) d += (1.0 - gd) / (1.0 - pred);
    g[i] = (1.0 - f) * d;
  }
  return g;
}

/// -log NN_truth - sum_{i in x1 \ x0} log(1 - NN_i): the Bernoulli likelihood
/// of pruning x1 down to exactly the truth in the last reverse step.
inline double l0_position(const PredictorOutput& nn, std::size_t truth, const CandidateSet& x1) {
  detail::require(x1.test(truth), "l0_term: x0 must be contained in x1");
  double v = -std::log(nn.probs[truth]);
  for (std::size_t i = 0; i < nn.size(); ++i)
    if (x1[i] && i != truth) v -= std::log1p(-nn.probs[i]);
  return v;
}

inline std::vector<double> l0_position_grad(const PredictorOutput& nn, std::size_t truth,
                                            const CandidateSet& x1) {
  std::vector<double> g(nn.size(), 0.0);
  g[truth] = -1.0 / nn.probs[truth];
  for (std::size_t i = 0; i < nn.size(); ++i)
    if (x1[i] && i != truth) g[i] = 1.0 / (1.0 - nn.probs[i]);
  return g;
}

/// -weight * log NN_truth; weight = 1 gives the simple loss.
inline double ce_position(const PredictorOutput& nn, std::size_t truth, double weight) {
  return -weight * std::log(nn.probs[truth]);
}

inline std::vector<double> ce_position_grad(const PredictorOutput& nn, std::size_t truth,
                                            double weight) {
  std::vector<double> g(nn.size(), 0.0);
  g[truth] = -weight / nn.probs[truth];
  return g;
}

/// Per-step objective for one position under `kind`, without the S scaling.
/// For ELBO this is the KL term at j >= 2 and L_0 at j = 1.
inline double step_objective(LossKind kind, const PredictorOutput& nn, std::size_t truth,
                             const CandidateSet& x_t, const Schedule& schedule, std::size_t j) {
  switch (kind) {
    case LossKind::simple: return ce_position(nn, truth, 1.0);
    case LossKind::weighted: return ce_position(nn, truth, schedule.step_weight(j));
    case LossKind::elbo_exact:
      return j == 1 ? l0_position(nn, truth, x_t) : lt_position(nn, truth, x_t, schedule, j);
  }
  return 0.0;
}

inline std::vector<double> step_objective_grad(LossKind kind, const PredictorOutput& nn,
                                               std::size_t truth, const CandidateSet& x_t,
                                               const Schedule& schedule, std::size_t j) {
  switch (kind) {
    case LossKind::simple: return ce_position_grad(nn, truth, 1.0);
    case LossKind::weighted: return ce_position_grad(nn, truth, schedule.step_weight(j));
    case LossKind::elbo_exact:
      return j == 1 ? l0_position_grad(nn, truth, x_t)
                    : lt_position_grad(nn, truth, x_t, schedule, j);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Sequence-level terms.

template <Predictor P>
double lt_term(const ForwardKernel& kernel, const P& predictor, std::span<const std::size_t> x0,
               std::span<const CandidateSet> x_t, std::size_t j, ClassLabel cls = std::nullopt) {
  detail::require(j >= 2 && j <= kernel.steps(), "lt_term: step index must be in [2, S]");
  detail::require(x0.size() == x_t.size(), "lt_term: length mismatch");
  const auto nn = predictor.predict(x_t, kernel.schedule().tau(j), cls);
  double total = 0.0;
  for (std::size_t l = 0; l < x0.size(); ++l)
    total += lt_position(nn[l], x0[l], x_t[l], kernel.schedule(), j);
  return total;
}

template <Predictor P>
double l0_term(const ForwardKernel& kernel, const P& predictor, std::span<const std::size_t> x0,
               std::span<const CandidateSet> x1, ClassLabel cls = std::nullopt) {
  detail::require(x0.size() == x1.size(), "l0_term: length mismatch");
  const auto nn = predictor.predict(x1, kernel.schedule().tau(1), cls);
  double total = 0.0;
  for (std::size_t l = 0; l < x0.size(); ++l) total += l0_position(nn[l], x0[l], x1[l]);
  return total;
}

/// KL(q(x_S | x0) || Bern(1)) summed over positions; exactly zero by construction.
inline double lT_term(const ForwardKernel& kernel, std::span<const std::size_t> x0) {
  const auto k = kernel.categories();
  const std::vector<double> ones(k, 1.0);
  double total = 0.0;
  for (auto t : x0)
    total += bernoulli_kl(kernel.marginal_params(one_hot(t, k), kernel.steps()),
                          BernoulliParams(ones), all_ones(k));
  return total;
}

struct LossEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

inline LossEstimate summarize(std::span<const double> values) {
  LossEstimate est;
  est.count = values.size();
  if (values.empty()) return est;
  double sum = 0.0;
  for (double v : values) sum += v;
  est.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - est.mean) * (v - est.mean);
    const double var = ss / static_cast<double>(values.size() - 1);
    est.std_error = std::sqrt(var / static_cast<double>(values.size()));
  }
  return est;
}

/// One training draw: tau ~ U(0,1) snapped to the grid, x_t from the marginal.
struct CorruptedExample {
  std::size_t index = 0;  // row in the source batch
  std::size_t step = 1;
  CandidateSequence x_t;
  ClassLabel cls;
};

/// Example n draws from stream split(n). Labels are replaced by "no class"
/// with probability `label_dropout`.
inline std::vector<CorruptedExample> corrupt_batch(const SequenceBatch& batch,
                                                   const ForwardKernel& kernel, const Rng& rng,
                                                   double label_dropout = 0.0) {
  detail::require(!batch.empty(), "loss: batch must be nonempty");
  detail::require(label_dropout >= 0.0 && label_dropout <= 1.0, "label dropout must lie in [0,1]");
  std::vector<CorruptedExample> out(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    Rng stream = rng.split(n);
    auto& ex = out[n];
    ex.index = n;
    ex.step = kernel.schedule().step_for(stream.uniform());
    const double flag = stream.uniform();
    ex.cls = flag < label_dropout ? std::nullopt : batch.label(n);
    ex.x_t = kernel.corrupt(batch.tokens[n], ex.step, stream);
  }
  return out;
}

/// S * per-step objective for each prepared example (nats per sequence).
template <Predictor P>
std::vector<double> example_losses(const P& predictor, const SequenceBatch& batch,
                                   std::span<const CorruptedExample> examples,
                                   const ForwardKernel& kernel, LossKind kind) {
  const auto& sched = kernel.schedule();
  const double scale = static_cast<double>(kernel.steps());
  std::vector<double> values(examples.size());
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    const auto nn = predictor.predict(ex.x_t, sched.tau(ex.step), ex.cls);
    double v = 0.0;
    for (std::size_t l = 0; l < ex.x_t.size(); ++l)
      v += step_objective(kind, nn[l], batch.tokens[ex.index][l], ex.x_t[l], sched, ex.step);
    values[e] = scale * v;
  }
  return values;
}

/// Monte-Carlo estimate of -S E[ w_j <log NN, x0> ] (weighted) over the batch.
template <Predictor P>
LossEstimate weighted_loss(const P& predictor, const SequenceBatch& batch,
                           const ForwardKernel& kernel, const Rng& rng) {
  const auto ex = corrupt_batch(batch, kernel, rng);
  return summarize(example_losses(predictor, batch, ex, kernel, LossKind::weighted));
}

/// Monte-Carlo estimate of -S E[ <log NN, x0> ] over the batch.
template <Predictor P>
LossEstimate simple_loss(const P& predictor, const SequenceBatch& batch,
                         const ForwardKernel& kernel, const Rng& rng) {
  const auto ex = corrupt_batch(batch, kernel, rng);
  return summarize(example_losses(predictor, batch, ex, kernel, LossKind::simple));
}

/// Unscaled simple loss at a fixed grid step, averaged over the batch. At j = S
/// the state is all-ones and the value is the predictor's cross-entropy
/// against the data, bounded below by the data entropy.
template <Predictor P>
LossEstimate simple_loss_at_step(const P& predictor, const SequenceBatch& batch,
                                 const ForwardKernel& kernel, std::size_t j, const Rng& rng) {
  detail::require(!batch.empty(), "loss: batch must be nonempty");
  std::vector<double> values(batch.size());
  for (std::size_t n = 0; n < batch.size(); ++n) {
    Rng stream = rng.split(n);
    const auto x_t = kernel.corrupt(batch.tokens[n], j, stream);
    const auto nn = predictor.predict(x_t, kernel.schedule().tau(j), batch.label(n));
    double v = 0.0;
    for (std::size_t l = 0; l < x_t.size(); ++l) v += ce_position(nn[l], batch.tokens[n][l], 1.0);
    values[n] = v;
  }
  return summarize(values);
}

// ---------------------------------------------------------------------------
// ELBO.

enum class ElboMode { exact_sum, monte_carlo };

inline std::string to_string(ElboMode m) { return m == ElboMode::exact_sum ? "exact_sum" : "mc"; }

struct ElboReport {
  double l0 = 0.0;
  std::vector<double> lt_terms;  // lt_terms[j - 2] for j = 2..S
  double lT = 0.0;
  double total_nats = 0.0;
  double bpc = 0.0;
  double std_error_nats = 0.0;  // 0 for exact_sum
  ElboMode mode = ElboMode::exact_sum;
  std::size_t length = 0;
};

inline void finalize(ElboReport& r) {
  r.total_nats = r.l0 + r.lT;
  for (double v : r.lt_terms) r.total_nats += v;
  r.bpc = r.total_nats / (static_cast<double>(r.length) * std::numbers::ln2);
}

namespace detail {

// Visits every joint state x_t containing x0 with its marginal probability at
// step j (zero-probability states skipped).
template <class Fn>
void for_each_reachable(const ForwardKernel& kernel, std::span<const std::size_t> x0,
                        std::size_t j, Fn&& fn) {
  const std::size_t k = kernel.categories(), len = x0.size();
  const std::size_t free_bits = (k - 1) * len;
  const double r = kernel.wrong_inclusion(j);
  const std::uint64_t total = std::uint64_t{1} << free_bits;
  CandidateSequence state;
  for (std::uint64_t code = 0; code < total; ++code) {
    double prob = 1.0;
    state.clear();
    std::size_t bit = 0;
    for (std::size_t l = 0; l < len; ++l) {
      Bits bits(k, 0);
      for (std::size_t i = 0; i < k; ++i) {
        if (i == x0[l]) {
          bits[i] = 1;
          continue;
        }
        const bool on = (code >> bit++) & 1U;
        bits[i] = on;
        prob *= on ? r : 1.0 - r;
      }
      state.emplace_back(std::move(bits));
    }
    if (prob > 0.0) fn(state, prob);
  }
}

}  // namespace detail

/// Variational bound for one sequence: L_T + sum_{j=2..S} L_{j-1} + L_0.
///
/// exact_sum enumerates every reachable x_j (2^{(K-1)L} states per step) and
/// needs S * 2^{(K-1)L} within the budget; monte_carlo draws `draws` states
/// per step and reports the standard error of the total.
template <Predictor P>
ElboReport elbo(const P& predictor, std::span<const std::size_t> x0, const ForwardKernel& kernel,
                ElboMode mode, ClassLabel cls = std::nullopt, std::size_t draws = 1,
                const Rng& rng = Rng(0), EnumerationBudget budget = {}) {
  const std::size_t k = kernel.categories(), len = x0.size(), steps = kernel.steps();
  detail::require(len >= 1, "elbo: empty sequence");
  ElboReport rep;
  rep.mode = mode;
  rep.length = len;
  rep.lT = lT_term(kernel, x0);
  rep.lt_terms.assign(steps >= 2 ? steps - 1 : 0, 0.0);

  auto term = [&](std::size_t j, std::span<const CandidateSet> x) {
    return j == 1 ? l0_term(kernel, predictor, x0, x, cls) : lt_term(kernel, predictor, x0, x, j, cls);
  };
  auto store = [&](std::size_t j, double v) {
    if (j == 1) rep.l0 = v;
    else rep.lt_terms[j - 2] = v;
  };

  if (mode == ElboMode::exact_sum) {
    const std::size_t free_bits = (k - 1) * len;
    detail::require(free_bits < 63 && (std::uint64_t{1} << free_bits) * steps <= budget.max_states,
                    "elbo: exact sum exceeds enumeration budget");
    for (std::size_t j = 1; j <= steps; ++j) {
      double acc = 0.0;
      detail::for_each_reachable(kernel, x0, j, [&](const CandidateSequence& s, double prob) {
        acc += prob * term(j, s);
      });
      store(j, acc);
    }
  } else {
    detail::require(draws >= 1, "elbo: at least one draw per step");
    double var_total = 0.0;
    for (std::size_t j = 1; j <= steps; ++j) {
      Rng stream = rng.split(j);
      std::vector<double> vals(draws);
      for (auto& v : vals) v = term(j, kernel.corrupt(x0, j, stream));
      const auto est = summarize(vals);
      store(j, est.mean);
      var_total += est.std_error * est.std_error;
    }
    rep.std_error_nats = std::sqrt(var_total);
  }
  finalize(rep);
  return rep;
}

}  // namespace slm
