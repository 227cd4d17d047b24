#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "core_types.hpp"
#include "error.hpp"
#include "forward_process.hpp"
#include "linear_predictor.hpp"
#include "losses.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace slm {

struct LossGradient {
  LossEstimate loss;
  std::vector<double> gradient;  // mean over examples, same layout as the params
};

/// Analytic gradient of the S-scaled objective over prepared examples. The
/// result is the batch mean; per-example gradients are reduced in index order
/// so the value does not depend on the worker count.
inline LossGradient loss_gradient(const ReferencePredictor& model, const SequenceBatch& batch,
                                  std::span<const CorruptedExample> examples,
                                  const ForwardKernel& kernel, LossKind kind) {
  detail::require(!examples.empty(), "loss_gradient: batch must be nonempty");
  const auto& sched = kernel.schedule();
  const double scale = static_cast<double>(kernel.steps());
  const std::size_t np = model.params().size();
  std::vector<double> values(examples.size());
  std::vector<std::vector<double>> grads(examples.size());

  parallel_for(examples.size(), [&](std::size_t e) {
    const auto& ex = examples[e];
    const auto& truth = batch.tokens[ex.index];
    const auto fw = model.forward(ex.x_t, sched.tau(ex.step), ex.cls);
    std::vector<std::vector<double>> upstream(ex.x_t.size());
    double v = 0.0;
    for (std::size_t l = 0; l < ex.x_t.size(); ++l) {
      const auto& nn = fw.outputs[l];
      if (nn.probs[truth[l]] <= 0.0)
        throw numeric_fault("loss_gradient: zero probability at true category (position " +
                            std::to_string(l) + ")");
      v += step_objective(kind, nn, truth[l], ex.x_t[l], sched, ex.step);
      upstream[l] = step_objective_grad(kind, nn, truth[l], ex.x_t[l], sched, ex.step);
      for (auto& g : upstream[l]) g *= scale;
    }
    values[e] = scale * v;
    grads[e].assign(np, 0.0);
    model.backward(fw, upstream, grads[e]);
  });

  LossGradient out;
  out.loss = summarize(values);
  if (!std::isfinite(out.loss.mean)) throw numeric_fault("loss_gradient: non-finite loss");
  out.gradient.assign(np, 0.0);
  for (const auto& g : grads)
    for (std::size_t i = 0; i < np; ++i) out.gradient[i] += g[i];
  const double inv = 1.0 / static_cast<double>(examples.size());
  for (auto& g : out.gradient) g *= inv;
  return out;
}

/// Draws the corruption (and label dropout) from `rng`, then differentiates.
inline LossGradient loss_gradient(const ReferencePredictor& model, const SequenceBatch& batch,
                                  LossKind kind, const ForwardKernel& kernel, const Rng& rng,
                                  double label_dropout = 0.0) {
  const auto ex = corrupt_batch(batch, kernel, rng, label_dropout);
  return loss_gradient(model, batch, ex, kernel, kind);
}

}  // namespace slm
