#include <gtest/gtest.h>

#include <cmath>

#include "slm/forward_process.hpp"
#include "slm/losses.hpp"
#include "slm/oracle.hpp"
#include "test_util.hpp"

using namespace slm;

TEST(OracleMarginal, Examples) {
  for (std::size_t j = 0; j <= 4; ++j) EXPECT_EQ(oracle::marginal_by_composition(5, 4, j, 1), 1.0);
  EXPECT_EQ(oracle::marginal_by_composition(5, 4, 0, 0), 0.0);
  EXPECT_NEAR(oracle::marginal_by_composition(5, 2, 1, 0), 0.309017, 1e-6);
  EXPECT_NEAR(oracle::marginal_by_composition(5, 2, 1, 0),
              ForwardKernel(Schedule(5, 2)).marginal_params(one_hot(0, 5), 1)[1], 1e-15);
}

TEST(OraclePosterior, Examples) {
  EXPECT_EQ(oracle::posterior_by_bayes(5, 2, 2, 1, 1), 1.0);
  EXPECT_EQ(oracle::posterior_by_bayes(5, 2, 2, 0, 0), 0.0);
  EXPECT_NEAR(oracle::posterior_by_bayes(5, 2, 2, 0, 1), 0.309017, 1e-6);
  EXPECT_THROW(oracle::posterior_by_bayes(5, 2, 2, 1, 0), invalid_input);
}

TEST(OracleChecks, LatticePasses) {
  EXPECT_TRUE(oracle::check_marginals([](std::size_t k, std::size_t s, std::size_t j) {
                return ForwardKernel(Schedule(k, s)).marginal_params(one_hot(0, k), j)[1];
              }).passed);
}

TEST(OracleChecks, MutationIsCaught) {
  const auto r = oracle::check_marginals([](std::size_t k, std::size_t s, std::size_t j) {
    return ForwardKernel(Schedule(k, s)).marginal_params(one_hot(0, k), j)[1] - 1e-6;
  });
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.detail.empty());
  EXPECT_NEAR(r.max_error, 1e-6, 1e-9);
}

TEST(OracleNll, PerfectPredictor) {
  const std::vector<std::size_t> x0{1, 0};
  const OneHotPredictor perfect(2, x0);
  const auto r = oracle::exact_nll_sequence(perfect, 3, {x0, 1.0, {}});
  EXPECT_NEAR(r.elbo_nats, 0.0, 1e-12);
  EXPECT_NEAR(r.nll_nats, 0.0, 1e-12);
}

TEST(OracleNll, UniformDataUniformPredictor) {
  const UniformPredictor uni(2, 1);
  const std::vector<oracle::WeightedSequence> law{{{0}, 0.5, {}}, {{1}, 0.5, {}}};
  const auto r = oracle::exact_nll(law, 2, uni);
  EXPECT_GE(r.elbo_nats - r.nll_nats, -1e-10);
  // By hand: x_1 = {0,1} w.p. 1/2 then {0} w.p. 1/4; x_1 = {0} w.p. a(1-a), a = 1/sqrt2.
  // The rest of the mass ends in non-singleton or empty states.
  const double a = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(r.nll_nats, -std::log(0.125 + a * (1.0 - a)), 1e-12);
}

TEST(OracleNll, SingleStepIsL0) {
  const auto m = slm::testing::random_model(PredictorConfig{3, 1, 0, 2, 0}, 4);
  const std::vector<std::size_t> x0{2};
  const auto r = oracle::exact_nll_sequence(m, 1, {x0, 1.0, {}});
  const auto e = elbo(m, x0, ForwardKernel(Schedule(3, 1)), ElboMode::exact_sum);
  EXPECT_NEAR(r.elbo_nats, e.total_nats, 1e-12);
  EXPECT_NEAR(r.elbo_nats, e.l0, 1e-12);
}

TEST(OracleNll, BudgetExceeded) {
  const UniformPredictor uni(4, 2);
  EXPECT_THROW(oracle::exact_nll_sequence(uni, 6, {{0, 1}, 1.0, {}}), invalid_input);
}

TEST(OracleUniformElbo, MatchesExactSum) {
  for (std::size_t k : {2u, 4u, 8u})
    for (std::size_t s : {1u, 3u, 10u}) {
      const std::vector<std::size_t> x0{0};
      const auto e = elbo(UniformPredictor(k, 1), x0, ForwardKernel(Schedule(k, s)), ElboMode::exact_sum,
                          std::nullopt, 1, Rng(0), EnumerationBudget{std::size_t{1} << 30});
      EXPECT_NEAR(e.total_nats, oracle::uniform_predictor_elbo(k, s), 1e-9) << k << " " << s;
    }
}

TEST(OracleGrid, Examples) {
  const auto a = oracle::projection_by_grid(std::vector<double>{0.5, 0.7}, 1e-4);
  EXPECT_NEAR(a[0], 0.4, 1e-4);
  EXPECT_NEAR(a[1], 0.6, 1e-4);
  const auto b = oracle::projection_by_grid(std::vector<double>{0.2, 0.3, 0.5}, 1e-4);
  EXPECT_NEAR(b[0], 0.2, 1e-4);
  EXPECT_NEAR(b[2], 0.5, 1e-4);
  const auto c = oracle::projection_by_grid(std::vector<double>{2, 0, 0}, 1e-4);
  EXPECT_EQ(c[0], 1.0);
  EXPECT_THROW(oracle::projection_by_grid(std::vector<double>{0.1, 0.2, 0.3, 0.4}, 1e-4), invalid_input);
}
