#include <gtest/gtest.h>

#include <cmath>

#include "slm/bayes_predictor.hpp"
#include "slm/data.hpp"
#include "slm/oracle.hpp"
#include "slm/reverse_sampler.hpp"
#include "slm/simplex.hpp"
#include "test_util.hpp"

using namespace slm;

TEST(ReverseStep, Interpolation) {
  const Schedule sched(5, 2);
  const PredictorOutput nn{{0.0, 1.0, 0.0, 0.0, 0.0}, CandidateSet(Bits{1, 1, 0, 1, 1})};
  const auto p = reverse_step_params(nn, nn.support, sched, 2);
  const double f = (sched.n_at(1) - 1.0) / (sched.n_at(2) - 1.0);
  EXPECT_EQ(p.probs[1], 1.0);
  EXPECT_EQ(p.probs[2], 0.0);
  for (std::size_t i : {0u, 3u, 4u}) EXPECT_NEAR(p.probs[i], f, 1e-15);
}

TEST(ReverseStep, FirstStepIsPrediction) {
  const Schedule sched(4, 5);
  const PredictorOutput nn{{0.1, 0.2, 0.3, 0.4}, all_ones(4)};
  EXPECT_EQ(reverse_step_params(nn, nn.support, sched, 1).probs, nn.probs);
}

TEST(ReverseStep, UniformK5) {
  const Schedule sched(5, 2);
  const PredictorOutput nn{std::vector<double>(5, 0.2), all_ones(5)};
  for (double p : reverse_step_params(nn, nn.support, sched, 2).probs) EXPECT_NEAR(p, 0.447214, 1e-6);
}

TEST(ReverseStep, SupportMismatchRejected) {
  const Schedule sched(3, 2);
  const PredictorOutput nn{{0.5, 0.5, 0.0}, CandidateSet(Bits{1, 1, 0})};
  EXPECT_THROW(reverse_step_params(nn, all_ones(3), sched, 2), invalid_input);
}

TEST(CfgMix, Identities) {
  const PredictorOutput c{{0.7, 0.3}, all_ones(2)}, u{{0.2, 0.8}, all_ones(2)};
  EXPECT_EQ(cfg_mix(c, u, 1.0).probs, c.probs);
  EXPECT_EQ(cfg_mix(c, u, 0.0).probs, u.probs);
}

TEST(CfgMix, ProjectsOvershoot) {
  const PredictorOutput c{{0.9, 0.1}, all_ones(2)}, u{{0.5, 0.5}, all_ones(2)};
  const auto m = cfg_mix(c, u, 2.0);
  EXPECT_NEAR(m.probs[0], 1.0, 1e-15);
  EXPECT_NEAR(m.probs[1], 0.0, 1e-15);
}

TEST(CfgMix, OffSupportStaysZero) {
  const CandidateSet s(Bits{1, 0, 1, 1});
  const PredictorOutput c{{0.8, 0.0, 0.1, 0.1}, s}, u{{0.1, 0.0, 0.6, 0.3}, s};
  const auto m = cfg_mix(c, u, 3.0);
  EXPECT_EQ(m.probs[1], 0.0);
  EXPECT_NEAR(m.probs[0] + m.probs[2] + m.probs[3], 1.0, 1e-12);
  for (double p : m.probs) EXPECT_GE(p, 0.0);
  EXPECT_THROW(cfg_mix(c, PredictorOutput{{0.5, 0.5, 0.0, 0.0}, CandidateSet(Bits{1, 1, 0, 0})}, 2.0), invalid_input);
}

TEST(Simplex, Examples) {
  const auto a = simplex_project(std::vector<double>{0.4, 0.6});
  EXPECT_NEAR(a[0], 0.4, 1e-15);
  EXPECT_NEAR(a[1], 0.6, 1e-15);
  const auto b = simplex_project(std::vector<double>{0.5, 0.7});
  EXPECT_NEAR(b[0], 0.4, 1e-12);
  EXPECT_NEAR(b[1], 0.6, 1e-12);
  const auto c = simplex_project(std::vector<double>{1.5, -0.3, 0.1});
  EXPECT_EQ(c, (std::vector<double>{1.0, 0.0, 0.0}));
  EXPECT_THROW(simplex_project(std::vector<double>{}), invalid_input);
}

TEST(Simplex, AgreesWithGridAndIsIdempotent) {
  Rng rng(3);
  for (int n = 0; n < 200; ++n) {
    const std::size_t d = 2 + n % 2;
    std::vector<double> v(d);
    for (auto& x : v) x = 4.0 * rng.uniform() - 1.5;
    const auto w = simplex_project(v);
    const auto g = oracle::projection_by_grid(v, 1e-4);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(w[i], g[i], 1e-4);
    const auto ww = simplex_project(w);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(ww[i], w[i], 1e-12);
  }
}

TEST(ArgmaxLowest, Ties) {
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax_lowest(std::vector<double>{0.5, 0.5}), 0u);
}

TEST(Sampler, OneHotPredictorAlwaysWins) {
  for (std::size_t s : {1u, 3u, 20u}) {
    const OneHotPredictor p(6, {4, 0, 5});
    SamplerConfig cfg{s, 1.0, std::nullopt, 7};
    for (const auto& t : sample(p, cfg, 50)) EXPECT_EQ(t, (std::vector<std::size_t>{4, 0, 5}));
  }
}

TEST(Sampler, UniformSingleStep) {
  const UniformPredictor p(4, 1);
  SamplerConfig cfg{1, 1.0, std::nullopt, 11};
  const std::size_t n = 100000;
  std::vector<double> counts(4, 0.0);
  for (const auto& t : sample(p, cfg, n)) counts[t[0]] += 1.0;
  // With every parameter at 1/4, an all-zero draw (prob (3/4)^4) falls back to
  // the lowest index; any nonempty draw is symmetric and ties split uniformly.
  const double zero = std::pow(0.75, 4);
  for (std::size_t i = 0; i < 4; ++i) {
    const double p = 0.25 * (1.0 - zero) + (i == 0 ? zero : 0.0);
    EXPECT_NEAR(counts[i] / n, p, 3.0 * std::sqrt(p * (1 - p) / n)) << i;
  }
}

TEST(Sampler, TrajectoryInvariantsAndFallbacks) {
  const auto m = slm::testing::random_model(PredictorConfig{6, 3, 0, 4, 0}, 5, 2.0);
  SamplerConfig cfg{12, 1.0, std::nullopt, 0};
  const Rng master(0);
  std::size_t fallbacks = 0;
  for (std::size_t s = 0; s < 200; ++s) {
    const auto r = sample_one(m, cfg, master.split(s), true);
    ASSERT_EQ(r.trajectory.size(), 13u);
    fallbacks += r.fallbacks;
    for (std::size_t t = 1; t < r.trajectory.size(); ++t)
      for (std::size_t l = 0; l < 3; ++l) {
        ASSERT_GE(r.trajectory[t][l].count(), 1u);
        ASSERT_TRUE(is_subset(r.trajectory[t][l], r.trajectory[t - 1][l]));
      }
    for (std::size_t l = 0; l < 3; ++l) ASSERT_TRUE(r.trajectory.back()[l].test(r.tokens[l]));
  }
  EXPECT_GT(fallbacks, 0u);  // the fallback path is exercised
}

TEST(Sampler, Deterministic) {
  const auto m = slm::testing::random_model(PredictorConfig{5, 4, 2, 4, 0}, 8);
  SamplerConfig cfg{10, 1.5, 1, 99};
  EXPECT_EQ(sample(m, cfg, 64), sample(m, cfg, 64));
  cfg.seed = 100;
  const auto other = sample(m, cfg, 64);
  cfg.seed = 99;
  EXPECT_NE(sample(m, cfg, 64), other);
}

TEST(Sampler, GammaOneEqualsConditional) {
  const auto m = slm::testing::random_model(PredictorConfig{5, 2, 3, 4, 2}, 19, 2.0);
  const slm::testing::FixedClass<ReferencePredictor> fixed{&m, 2};
  const auto a = sample(m, SamplerConfig{8, 1.0, 2, 4}, 200);
  const auto b = sample(fixed, SamplerConfig{8, 1.0, std::nullopt, 4}, 200);
  EXPECT_EQ(a, b);
}

TEST(Sampler, NonFiniteOutputFaults) {
  LogitPredictor bad(3, 1, [](std::span<const CandidateSet>, double, ClassLabel) {
    return std::vector<std::vector<double>>{{0.0, std::nan(""), 1.0}};
  });
  EXPECT_THROW(sample(bad, SamplerConfig{3, 1.0, std::nullopt, 0}, 2), numeric_fault);
}

TEST(Sampler, BayesRecoversLaw) {
  SyntheticSpec spec;
  spec.categories = 4;
  spec.count = 4000;
  spec.probs = {{0.4, 0.3, 0.2, 0.1}};
  spec.seed = 5;
  const auto data = generate(spec);
  const BayesPredictor bayes(data, ForwardKernel(Schedule(4, 20)));
  const std::size_t n = 20000;
  std::vector<double> counts(4, 0.0);
  for (const auto& t : sample(bayes, SamplerConfig{20, 1.0, std::nullopt, 2}, n)) counts[t[0]] += 1.0;
  double tv = 0.0;
  for (std::size_t i = 0; i < 4; ++i) tv += 0.5 * std::abs(counts[i] / n - spec.probs[0][i]);
  EXPECT_LT(tv, 0.03);
}
