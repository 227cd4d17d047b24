#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "predictor.hpp"
#include "rng.hpp"

namespace slm {

struct PredictorConfig {
  std::size_t categories = 2;     // K
  std::size_t length = 1;         // L
  std::size_t classes = 0;        // C; slot C of the class embedding means "no class"
  std::size_t time_features = 8;  // sinusoidal features of tau
  std::size_t hidden = 0;         // 0 = pure linear

  void validate() const {
    detail::require(categories >= 2, "predictor config: K must be >= 2");
    detail::require(length >= 1, "predictor config: L must be >= 1");
  }

  std::size_t outputs() const noexcept { return categories * length; }
  std::size_t feature_dim() const noexcept {
    return categories * length + time_features + classes + 1;
  }
  std::size_t param_count() const noexcept {
    const std::size_t d = feature_dim(), o = outputs();
    if (hidden == 0) return o * d + o;
    return hidden * d + hidden + o * hidden + o;
  }
  std::string layout() const { return hidden == 0 ? "linear-v1" : "tanh1-v1"; }

  friend bool operator==(const PredictorConfig&, const PredictorConfig&) = default;
};

/// sin/cos pairs at frequencies pi/2 * 2^m; an odd count ends with a sine.
inline void time_features(double tau, std::span<double> out) {
  for (std::size_t f = 0; f < out.size(); ++f) {
    const double freq = std::numbers::pi / 2.0 * std::ldexp(1.0, static_cast<int>(f / 2));
    out[f] = (f % 2 == 0) ? std::sin(freq * tau) : std::cos(freq * tau);
  }
}

/// d NN_i / d f_k = NN_i (delta_ik - NN_k), restricted to the support (row-major K x K).
inline std::vector<double> softmax_jacobian(const PredictorOutput& out) {
  const std::size_t k = out.size();
  std::vector<double> jac(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    if (!out.support[i]) continue;
    for (std::size_t j = 0; j < k; ++j) {
      if (!out.support[j]) continue;
      jac[i * k + j] = out.probs[i] * ((i == j ? 1.0 : 0.0) - out.probs[j]);
    }
  }
  return jac;
}

/// Reference predictor: per-position logits from an affine map (optionally
/// through one tanh layer) of [normalised candidate sets of every position,
/// time features, class one-hot], followed by the support-masked softmax.
///
/// Parameter layout (row-major):
///   linear:  W[LK x D] | b[LK]
///   hidden:  W1[H x D] | b1[H] | W2[LK x H] | b2[LK]
class ReferencePredictor {
 public:
  struct Forward {
    std::vector<double> features;
    std::vector<double> hidden;  // tanh activations, empty when linear
    std::vector<PredictorOutput> outputs;
  };

  explicit ReferencePredictor(PredictorConfig cfg)
      : cfg_(cfg), params_((cfg.validate(), cfg.param_count()), 0.0) {}

  ReferencePredictor(PredictorConfig cfg, std::vector<double> params)
      : cfg_(cfg), params_(std::move(params)) {
    cfg_.validate();
    detail::require(params_.size() == cfg_.param_count(), "reference predictor: parameter count mismatch");
  }

  /// Final layer zero (uniform outputs), everything else U(-0.01, 0.01).
  static ReferencePredictor initialized(PredictorConfig cfg, std::uint64_t seed) {
    ReferencePredictor p(cfg);
    if (cfg.hidden > 0) {
      Rng rng(seed);
      const std::size_t first = cfg.hidden * cfg.feature_dim() + cfg.hidden;
      for (std::size_t i = 0; i < first; ++i) p.params_[i] = 0.02 * rng.uniform() - 0.01;
    }
    return p;
  }

  const PredictorConfig& config() const noexcept { return cfg_; }
  std::size_t categories() const noexcept { return cfg_.categories; }
  std::size_t length() const noexcept { return cfg_.length; }
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> params() noexcept { return params_; }

  std::vector<PredictorOutput> predict(std::span<const CandidateSet> x_t, double tau,
                                       ClassLabel cls) const {
    return forward(x_t, tau, cls).outputs;
  }

  std::vector<double> features(std::span<const CandidateSet> x_t, double tau, ClassLabel cls) const {
    detail::require(x_t.size() == cfg_.length, "predict: wrong sequence length");
    detail::require(tau >= 0.0 && tau <= 1.0, "predict: tau must lie in [0,1]");
    const std::size_t k = cfg_.categories;
    std::vector<double> feat(cfg_.feature_dim(), 0.0);
    for (std::size_t l = 0; l < x_t.size(); ++l) {
      detail::require(x_t[l].size() == k, "predict: candidate set has wrong K");
      const double inv = 1.0 / static_cast<double>(x_t[l].count());
      for (std::size_t i = 0; i < k; ++i) feat[l * k + i] = x_t[l][i] ? inv : 0.0;
    }
    const std::size_t t0 = k * cfg_.length;
    time_features(tau, std::span<double>(feat).subspan(t0, cfg_.time_features));
    detail::require(!cls || *cls < cfg_.classes, "predict: class label out of range");
    const std::size_t slot = cls.value_or(cfg_.classes);
    feat[t0 + cfg_.time_features + slot] = 1.0;
    return feat;
  }

  Forward forward(std::span<const CandidateSet> x_t, double tau, ClassLabel cls) const {
    Forward fw;
    fw.features = features(x_t, tau, cls);
    const std::size_t d = cfg_.feature_dim(), o = cfg_.outputs(), h = cfg_.hidden;
    std::vector<double> logits(o);
    if (h == 0) {
      affine(params_.data(), params_.data() + o * d, fw.features, logits);
    } else {
      fw.hidden.resize(h);
      affine(params_.data(), params_.data() + h * d, fw.features, fw.hidden);
      for (auto& v : fw.hidden) v = std::tanh(v);
      const double* w2 = params_.data() + h * d + h;
      affine(w2, w2 + o * h, fw.hidden, logits);
    }
    const std::size_t k = cfg_.categories;
    fw.outputs.reserve(cfg_.length);
    for (std::size_t l = 0; l < cfg_.length; ++l)
      fw.outputs.push_back(masked_softmax(std::span<const double>(logits).subspan(l * k, k), x_t[l]));
    return fw;
  }

  /// Accumulates into `grad` the parameter gradient of a scalar loss whose
  /// derivative with respect to each position's probabilities is `dprob`.
  void backward(const Forward& fw, std::span<const std::vector<double>> dprob,
                std::span<double> grad) const {
    detail::require(grad.size() == params_.size(), "backward: gradient size mismatch");
    detail::require(dprob.size() == cfg_.length, "backward: one upstream vector per position");
    const std::size_t k = cfg_.categories, d = cfg_.feature_dim(), o = cfg_.outputs(),
                      h = cfg_.hidden;
    std::vector<double> dlogit(o, 0.0);
    for (std::size_t l = 0; l < cfg_.length; ++l) {
      const auto& out = fw.outputs[l];
      const auto& g = dprob[l];
      double mean = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        if (out.support[i]) mean += out.probs[i] * g[i];
      for (std::size_t i = 0; i < k; ++i)
        if (out.support[i]) dlogit[l * k + i] = out.probs[i] * (g[i] - mean);
    }
    if (h == 0) {
      accumulate_outer(grad.data(), grad.data() + o * d, dlogit, fw.features);
      return;
    }
    const double* w2 = params_.data() + h * d + h;
    double* gw2 = grad.data() + h * d + h;
    accumulate_outer(gw2, gw2 + o * h, dlogit, fw.hidden);
    std::vector<double> dz(h, 0.0);
    for (std::size_t r = 0; r < o; ++r) {
      if (dlogit[r] == 0.0) continue;
      const double* row = w2 + r * h;
      for (std::size_t u = 0; u < h; ++u) dz[u] += dlogit[r] * row[u];
    }
    for (std::size_t u = 0; u < h; ++u) dz[u] *= 1.0 - fw.hidden[u] * fw.hidden[u];
    accumulate_outer(grad.data(), grad.data() + h * d, dz, fw.features);
  }

 private:
  static void affine(const double* w, const double* b, std::span<const double> x,
                     std::span<double> y) {
    const std::size_t n = x.size();
    for (std::size_t r = 0; r < y.size(); ++r) {
      const double* row = w + r * n;
      double acc = b[r];
      for (std::size_t c = 0; c < n; ++c) acc += row[c] * x[c];
      y[r] = acc;
    }
  }

  static void accumulate_outer(double* gw, double* gb, std::span<const double> dy,
                               std::span<const double> x) {
    const std::size_t n = x.size();
    for (std::size_t r = 0; r < dy.size(); ++r) {
      if (dy[r] == 0.0) continue;
      double* row = gw + r * n;
      for (std::size_t c = 0; c < n; ++c) row[c] += dy[r] * x[c];
      gb[r] += dy[r];
    }
  }

  PredictorConfig cfg_;
  std::vector<double> params_;
};

/// Plain SGD with optional heavy-ball momentum: v <- mu v + g; theta <- theta - lr v.
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {
    detail::require(lr >= 0.0, "sgd: learning rate must be non-negative");
    detail::require(momentum >= 0.0 && momentum < 1.0, "sgd: momentum must lie in [0,1)");
  }

  void step(std::span<double> params, std::span<const double> grad) {
    detail::require(params.size() == grad.size(), "sgd: gradient size mismatch");
    for (double g : grad)
      if (!std::isfinite(g)) throw numeric_fault("sgd: non-finite gradient");
    if (velocity_.size() != params.size()) velocity_.assign(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i] = momentum_ * velocity_[i] + grad[i];
      params[i] -= lr_ * velocity_[i];
    }
  }

  double learning_rate() const noexcept { return lr_; }

 private:
  double lr_, momentum_;
  std::vector<double> velocity_;
};

/// One momentum-free update.
inline void sgd_step(ReferencePredictor& model, std::span<const double> grad, double lr) {
  detail::require(lr >= 0.0, "sgd: learning rate must be non-negative");
  SgdOptimizer(lr).step(model.params(), grad);
}

}  // namespace slm
