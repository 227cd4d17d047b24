// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are fixed here.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "corpus_fixture.hpp"
#include "slm/bayes_predictor.hpp"
#include "slm/cli/commands.hpp"
#include "slm/oracle.hpp"
#include "slm/simplex.hpp"
#include "slm/training.hpp"
#include "test_util.hpp"

using namespace slm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

// Per-token TV between empirical frequencies of L=1 samples and a law.
double tv_distance(const std::vector<std::vector<std::size_t>>& samples, const std::vector<double>& law) {
  std::vector<double> c(law.size(), 0.0);
  for (const auto& s : samples) c[s[0]] += 1.0;
  double tv = 0.0;
  for (std::size_t k = 0; k < law.size(); ++k) tv += 0.5 * std::abs(c[k] / static_cast<double>(samples.size()) - law[k]);
  return tv;
}

const std::vector<double> kLaw{0.4, 0.3, 0.2, 0.1};

SequenceBatch iid_law_data(std::size_t count, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.categories = 4;
  spec.count = count;
  spec.probs = {kLaw};
  spec.seed = seed;
  return generate(spec);
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("slm_accept_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome ac1_marginals_posteriors() {
  double worst = 0.0;
  std::size_t cases = 0;
  std::string where;
  for (auto k : oracle::lattice_categories())
    for (auto s : oracle::lattice_steps()) {
      const ForwardKernel kernel(Schedule(k, s));
      for (std::size_t j = 0; j <= s; ++j) {
        for (std::size_t t = 0; t < k; ++t) {
          const auto m = kernel.marginal_params(one_hot(t, k), j);
          for (std::size_t i = 0; i < k; ++i) {
            const double e = std::abs(m[i] - oracle::marginal_by_composition(k, s, j, i == t));
            if (e > worst) worst = e, where = "marginal K=" + std::to_string(k) + " S=" + std::to_string(s);
            ++cases;
          }
        }
        if (j == 0) continue;
        // every x_t reachable from x0 = one-hot(0): x_t = {0} union A
        for (std::uint64_t a = 0; a < (std::uint64_t{1} << (k - 1)); ++a) {
          Bits bits(k, 0);
          bits[0] = 1;
          for (std::size_t i = 1; i < k; ++i) bits[i] = (a >> (i - 1)) & 1U;
          const CandidateSet xt(bits);
          const auto p = kernel.posterior_params(xt, one_hot(0, k), j);
          for (std::size_t i = 0; i < k; ++i) {
            const double e = std::abs(p[i] - oracle::posterior_by_bayes(k, s, j, i == 0, bits[i]));
            if (e > worst) worst = e, where = "posterior K=" + std::to_string(k) + " S=" + std::to_string(s);
            ++cases;
          }
        }
      }
    }
  Outcome o{worst <= 1e-12, fmt("max |impl - oracle| = %.3g over %.0f entries (tol 1e-12)", worst, double(cases))};
  if (!where.empty()) o.detail += "; worst at " + where;
  return o;
}

Outcome ac2_boundary_terms() {
  bool ok = true;
  std::size_t n = 0;
  for (auto k : oracle::lattice_categories())
    for (auto s : oracle::lattice_steps()) {
      const ForwardKernel kernel(Schedule(k, s));
      for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b) {
          const std::vector<std::size_t> x0{a, b};
          ok = ok && lT_term(kernel, x0) == 0.0;
          for (auto t : x0)
            for (double p : kernel.marginal_params(one_hot(t, k), s).probs) ok = ok && p == 1.0;
          ++n;
        }
    }
  return {ok, fmt("L_T == 0 and q(x_S|x0) == Bern(1) exactly for %.0f sequences", double(n))};
}

Outcome ac3_perfect_predictor() {
  Rng rng(2024);
  double worst = 0.0;
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t k = 2 + rng.below(4), s = 1 + rng.below(10), l = 1 + rng.below(3);
    const ForwardKernel kernel(Schedule(k, s));
    SequenceBatch b;
    b.categories = k;
    b.length = l;
    std::vector<std::size_t> x0(l);
    for (auto& v : x0) v = rng.below(k);
    b.tokens = {x0};
    const OneHotPredictor perfect(k, x0);
    const double e = elbo(perfect, x0, kernel, ElboMode::exact_sum).total_nats;
    const double ls = simple_loss(perfect, b, kernel, rng.split(trial)).mean;
    const double lw = weighted_loss(perfect, b, kernel, rng.split(1000 + trial)).mean;
    worst = std::max({worst, std::abs(e), std::abs(ls), std::abs(lw)});
  }
  return {worst <= 1e-12, fmt("max |ELBO|, |L_simple|, |L_weight| = %.3g over 40 instances (tol 1e-12)", worst)};
}

Outcome ac4_gradients() {
  const ForwardKernel kernel(Schedule(4, 8));
  double worst = 0.0;
  std::string where;
  for (auto kind : {LossKind::simple, LossKind::weighted, LossKind::elbo_exact})
    for (std::size_t hidden : {0u, 4u})
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto b = slm::testing::random_batch(4, 2, 8, 10 + seed, 2);
        auto m = slm::testing::random_model(PredictorConfig{4, 2, 2, 4, hidden}, 50 + seed, 0.5);
        auto ex = corrupt_batch(b, kernel, Rng(seed), 0.3);
        // the per-step KL needs j >= 2; keep half the batch there explicitly
        if (kind == LossKind::elbo_exact)
          for (std::size_t e = 0; e < ex.size(); e += 2) {
            Rng r(seed * 31 + e);
            ex[e].step = 2 + r.below(7);
            ex[e].x_t = kernel.corrupt(b.tokens[ex[e].index], ex[e].step, r);
          }
        const auto lg = loss_gradient(m, b, ex, kernel, kind);
        const auto num = slm::testing::numeric_gradient(
            m, [&](const ReferencePredictor& p) { return summarize(example_losses(p, b, ex, kernel, kind)).mean; },
            1e-5);
        const double err = slm::testing::max_relative_error(lg.gradient, num);
        if (err > worst) worst = err, where = to_string(kind) + (hidden ? " (hidden)" : " (linear)");
      }
  return {worst <= 1e-4, fmt("max relative error %.3g (tol 1e-4, h = 1e-5)", worst) + "; worst " + where};
}

Outcome ac5_reweighting() {
  const Schedule sched(8, 16);
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t j = 2 + rng.below(15), truth = rng.below(8);
    Bits bits(8);
    for (auto& v : bits) v = rng.bernoulli(0.5);
    bits[truth] = 1;
    const CandidateSet x(bits);
    std::vector<double> p(8, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < 8; ++i)
      if (x[i]) z += (p[i] = 0.01 + rng.uniform());
    for (auto& v : p) v /= z;
    const PredictorOutput nn{p, x};
    const double pred = p[truth] + (1.0 - p[truth]) * sched.retain_fraction(j);
    const double kl = lt_position_grad(nn, truth, x, sched, j)[truth];
    const double w = step_objective_grad(LossKind::weighted, nn, truth, x, sched, j)[truth];
    worst = std::max(worst, std::abs(w - kl * pred / p[truth]));
  }
  return {worst <= 1e-9, fmt("max |grad L_weight - (pred/NN) grad KL| = %.3g on 500 probes (tol 1e-9)", worst)};
}

Outcome ac6_elbo_bounds_nll() {
  const ForwardKernel kernel(Schedule(2, 2));
  double margin = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto m = slm::testing::random_model(PredictorConfig{2, 1, 0, 4, seed % 2 ? 3u : 0u}, seed, 3.0);
    for (std::size_t t = 0; t < 2; ++t) {
      const std::vector<std::size_t> x0{t};
      const double e = elbo(m, x0, kernel, ElboMode::exact_sum).total_nats;
      const double nll = oracle::exact_nll_sequence(m, 2, {x0, 1.0, {}}).nll_nats;
      margin = std::min(margin, e - nll);
    }
  }
  return {margin >= -1e-10, fmt("min (ELBO - NLL) = %.3g over 100 predictors x 2 tokens (tol -1e-10)", margin)};
}

Outcome ac7_bayes_recovery() {
  const auto data = iid_law_data(100000, 1);
  const BayesPredictor bayes(data, ForwardKernel(Schedule(4, 100)));
  const auto s = sample(bayes, SamplerConfig{100, 1.0, std::nullopt, 3}, 200000);
  const double tv = tv_distance(s, kLaw);
  return {tv <= 0.02, fmt("TV = %.4f from 200k samples at S = 100 (tol 0.02)", tv)};
}

Outcome ac8_training_convergence() {
  // S = 20, batch 512: lr is fixed at 0.05 and the objective is S-scaled, so
  // larger S makes plain SGD unstable.
  const std::size_t steps = 20, batch = 512;
  const auto data = iid_law_data(100000, 1);
  const ForwardKernel kernel(Schedule(4, steps));
  auto model = ReferencePredictor::initialized(PredictorConfig{4, 1, 0, 8, 0}, 0);
  SgdOptimizer opt(0.05);
  const Rng master(7);
  for (std::size_t step = 0; step < 5000; ++step) {
    Rng br = master.split(2 * step);
    SequenceBatch b;
    b.categories = 4;
    b.length = 1;
    for (std::size_t i = 0; i < batch; ++i) b.tokens.push_back(data.tokens[br.below(data.size())]);
    const auto lg = loss_gradient(model, b, LossKind::simple, kernel, master.split(2 * step + 1));
    opt.step(model.params(), lg.gradient);
  }
  // Terminal-step L_simple in expectation over the law: x_S is all-ones.
  const auto nn = model.predict(all_ones_sequence(1, 4), 1.0, std::nullopt)[0];
  double ce = 0.0, h = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    ce -= kLaw[k] * std::log(nn.probs[k]);
    h -= kLaw[k] * std::log(kLaw[k]);
  }
  const auto s = sample(model, SamplerConfig{steps, 1.0, std::nullopt, 3}, 100000);
  const double tv = tv_distance(s, kLaw);
  const bool ok = std::abs(ce - 1.27985) <= 0.05 && tv <= 0.05 && std::abs(h - 1.27985) < 1e-5;
  return {ok, fmt("L_simple = %.5f vs H = %.5f (tol 0.05), TV = %.4f (tol 0.05)", ce, h, tv)};
}

Outcome ac9_sampler_invariants() {
  const auto m = slm::testing::random_model(PredictorConfig{10, 2, 2, 8, 0}, 77, 1.5);
  const SamplerConfig cfg{50, 1.0, std::nullopt, 12};
  const Rng master(cfg.seed);
  std::size_t violations = 0, fallbacks = 0;
  for (std::size_t s = 0; s < 10000; ++s) {
    const auto r = sample_one(m, cfg, master.split(s), true);
    fallbacks += r.fallbacks;
    for (std::size_t t = 1; t < r.trajectory.size(); ++t)
      for (std::size_t l = 0; l < 2; ++l)
        if (r.trajectory[t][l].count() == 0 || !is_subset(r.trajectory[t][l], r.trajectory[t - 1][l])) ++violations;
  }
  const slm::testing::FixedClass<ReferencePredictor> fixed{&m, 1};
  const auto guided = sample(m, SamplerConfig{50, 1.0, 1, 99}, 10000);
  const auto cond = sample(fixed, SamplerConfig{50, 1.0, std::nullopt, 99}, 10000);
  std::size_t mismatches = 0;
  for (std::size_t i = 0; i < guided.size(); ++i) mismatches += guided[i] != cond[i];
  return {violations == 0 && mismatches == 0,
          fmt("support/emptiness violations = %.0f, gamma=1 mismatches = %.0f / 10000 (fallbacks hit: %.0f)",
              double(violations), double(mismatches), double(fallbacks))};
}

Outcome ac10_simplex() {
  Rng rng(10);
  double worst = 0.0, idem = 0.0;
  for (int n = 0; n < 1000; ++n) {
    const std::size_t d = 2 + n % 2;
    std::vector<double> v(d);
    for (auto& x : v) x = 4.0 * rng.uniform() - 1.5;
    const auto w = simplex_project(v);
    const auto g = oracle::projection_by_grid(v, 5e-5);
    const auto ww = simplex_project(w);
    for (std::size_t i = 0; i < d; ++i) {
      worst = std::max(worst, std::abs(w[i] - g[i]));
      idem = std::max(idem, std::abs(ww[i] - w[i]));
    }
  }
  return {worst <= 1e-4 && idem <= 1e-12,
          fmt("max |proj - grid| = %.3g (tol 1e-4), idempotence %.3g (tol 1e-12)", worst, idem)};
}

Outcome ac11_determinism() {
  using namespace slm::cli;
  const auto cfg = from_json(json::parse(R"({
    "model": {"categories": 5, "length": 3, "classes": 2, "time_features": 4, "hidden": 4},
    "schedule": {"steps": 10},
    "training": {"steps": 40, "batch_size": 16, "lr": 0.02, "seed": 8, "log_every": 10},
    "data": {"type": "synthetic", "synthetic": {"count": 300, "seed": 3,
             "class_probs": [[0.5, 0.2, 0.1, 0.1, 0.1], [0.1, 0.1, 0.1, 0.2, 0.5]]}},
    "sampling": {"count": 50, "gamma": 1.5, "cls": 0, "seed": 4},
    "eval": {"mode": "mc", "draws": 2, "max_sequences": 20, "seed": 6}
  })"));
  std::vector<std::string> files[2];
  for (int run = 0; run < 2; ++run) {
    const auto dir = scratch("det" + std::to_string(run));
    const auto tr = cmd_train(cfg, dir / "train");
    cmd_sample(cfg, tr.checkpoint.string(), dir / "sample");
    cmd_eval(cfg, tr.checkpoint.string(), dir / "eval");
    for (const auto& p : {dir / "train/metrics.jsonl", dir / "train/checkpoint.bin", dir / "sample/samples.jsonl",
                          dir / "eval/eval.jsonl"})
      files[run].push_back(read_file(p.string()));
    fs::remove_all(dir);
  }
  std::size_t same = 0;
  for (std::size_t i = 0; i < files[0].size(); ++i) same += files[0][i] == files[1][i];
  return {same == files[0].size(), fmt("%.0f / %.0f artefacts byte-identical across reruns", double(same),
                                       double(files[0].size()))};
}

Outcome ac12_corpus_bpc() {
  using namespace slm::cli;
  const auto dir = scratch("bpc");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "corpus.txt") << slm::testing::synthetic_text(1 << 20, 11);
  }
  json j = {{"model", {{"categories", 27}, {"length", 16}, {"time_features", 8}}},
            {"schedule", {{"steps", 50}}},
            {"loss", "weighted"},
            {"training",
             {{"steps", 200}, {"batch_size", 32}, {"lr", 0.01}, {"log_every", 100}, {"checkpoint_every", 100}, {"seed", 1}}},
            {"data", {{"type", "corpus"}, {"corpus", {{"path", (dir / "corpus.txt").string()}, {"chunk_length", 16}}}}},
            {"eval", {{"mode", "mc"}, {"draws", 1}, {"max_sequences", 128}, {"seed", 5}}}};
  const auto cfg = from_json(j);
  const auto tr = cmd_train(cfg, dir / "train");
  const auto corpus = open_corpus(cfg.data.corpus);
  const double unigram_bits = unigram_entropy(corpus.tokens) / std::log(2.0);
  std::vector<EvalSummary> evals;
  for (std::size_t i = 0; i < tr.snapshots.size(); ++i)
    evals.push_back(cmd_eval(cfg, tr.snapshots[i].string(), dir / ("eval" + std::to_string(i))));
  fs::remove_all(dir);
  bool ok = evals.size() == 3;
  std::ostringstream os;
  os << "bpc at steps 0/100/200 =";
  for (std::size_t i = 0; i < evals.size(); ++i) {
    const auto& e = evals[i];
    ok = ok && std::isfinite(e.bpc_mean) && e.bpc_mean >= unigram_bits - e.bpc_stderr;
    if (i > 0) ok = ok && e.bpc_mean < evals[i - 1].bpc_mean;
    os << " " << fmt("%.4f(+-%.4f)", e.bpc_mean, e.bpc_stderr);
  }
  os << fmt("; unigram entropy %.4f bits", unigram_bits);
  return {ok, os.str()};
}

}  // namespace

int main() {
  struct Criterion {
    const char* id;
    const char* name;
    double budget_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"AC1", "forward marginals and posteriors match chain oracle", 5.0, ac1_marginals_posteriors},
      {"AC2", "ELBO boundary terms", 0.0, ac2_boundary_terms},
      {"AC3", "perfect predictor gives zero losses", 0.0, ac3_perfect_predictor},
      {"AC4", "analytic gradients match finite differences", 30.0, ac4_gradients},
      {"AC5", "reweighting identity on truth dims", 0.0, ac5_reweighting},
      {"AC6", "ELBO upper-bounds exact NLL", 0.0, ac6_elbo_bounds_nll},
      {"AC7", "Bayes predictor recovers the data law", 120.0, ac7_bayes_recovery},
      {"AC8", "training converges to the data entropy", 300.0, ac8_training_convergence},
      {"AC9", "sampler invariants and gamma=1 identity", 0.0, ac9_sampler_invariants},
      {"AC10", "simplex projection matches grid oracle", 0.0, ac10_simplex},
      {"AC11", "train/sample/eval are byte-deterministic", 0.0, ac11_determinism},
      {"AC12", "char-corpus BPC finite, bounded, decreasing", 0.0, ac12_corpus_bpc},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0.0 && secs > c.budget_s) {
      o.passed = false;
      o.detail += fmt("; runtime %.1fs exceeds %.0fs", secs, c.budget_s);
    }
    failed += !o.passed;
    std::cout << (o.passed ? "[PASS] " : "[FAIL] ") << c.id << " " << c.name << ": " << o.detail
              << fmt(" [%.2fs]", secs) << std::endl;
  }
  std::cout << (failed ? "acceptance: FAILED (" + std::to_string(failed) + ")" : std::string("acceptance: all passed"))
            << std::endl;
  return failed ? 1 : 0;
}
