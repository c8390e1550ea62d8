#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "flowr/gaussian.hpp"
#include "support.hpp"

namespace flowr {
namespace {

using testing::Rng;

TEST(FactorToNatural, IdentityPrecision) {
  const auto s = factor_to_natural(IsotropicGaussian{{0.0}, 1.0});
  EXPECT_EQ(s.q, Vector{0.0});
  EXPECT_EQ(s.lambda, 1.0);
}

TEST(FactorToNatural, ScalesByPrecision) {
  const auto s = factor_to_natural(IsotropicGaussian{{2.0, -2.0}, 0.5});
  EXPECT_EQ(s.q, (Vector{4.0, -4.0}));
  EXPECT_EQ(s.lambda, 2.0);
}

TEST(NaturalToMoment, Examples) {
  const auto a = natural_to_moment(NaturalClassStats{{0.0}, 1.0});
  EXPECT_EQ(a.mean, Vector{0.0});
  EXPECT_EQ(a.variance, 1.0);
  const auto b = natural_to_moment(NaturalClassStats{{2.0}, 3.0});
  EXPECT_DOUBLE_EQ(b.mean[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(b.variance, 1.0 / 3.0);
}

TEST(NaturalToMoment, RoundTripRandom) {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = testing::uniform_int(rng, 1, 12);
    const IsotropicGaussian g{testing::random_vector(rng, d, 5.0), testing::uniform(rng, 0.01, 50.0)};
    const IsotropicGaussian back = natural_to_moment(factor_to_natural(g));
    ASSERT_EQ(back.dim(), d);
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(back.mean[i], g.mean[i], 1e-12 * (1 + std::abs(g.mean[i])));
    EXPECT_NEAR(back.variance, g.variance, 1e-12 * g.variance);
  }
}

TEST(Condition, SinglePoint) {
  const auto s = condition(NaturalClassStats{{0.0}, 1.0}, Vector{1.0}, NoiseModel{0.5});
  EXPECT_DOUBLE_EQ(s.q[0], 2.0);
  EXPECT_DOUBLE_EQ(s.lambda, 3.0);
}

TEST(Condition, TwoPointsMatchesClosedForm) {
  const NoiseModel noise{0.5};
  auto s = condition(NaturalClassStats{{0.0}, 1.0}, Vector{1.0}, noise);
  s = condition(s, Vector{0.0}, noise);
  EXPECT_DOUBLE_EQ(s.q[0], 2.0);
  EXPECT_DOUBLE_EQ(s.lambda, 5.0);
  // (sum z / noise + mu0 / s0) / (1 / s0 + K / noise)
  const double oracle = (1.0 / 0.5 + 0.0) / (1.0 + 2.0 / 0.5);
  EXPECT_NEAR(natural_to_moment(s).mean[0], oracle, 1e-15);
  EXPECT_NEAR(natural_to_moment(s).mean[0], 0.4, 1e-15);
}

TEST(Condition, UninformativeNoise) {
  const NaturalClassStats s0{{0.3, -0.1}, 2.0};
  const auto s = condition(s0, Vector{5.0, -7.0}, NoiseModel{1e12});
  EXPECT_LE(std::abs(s.q[0] - s0.q[0]), 1e-11);
  EXPECT_LE(std::abs(s.q[1] - s0.q[1]), 1e-11);
  EXPECT_LE(std::abs(s.lambda - s0.lambda), 1e-11);
}

TEST(Condition, DimensionMismatchThrows) {
  EXPECT_THROW(condition(NaturalClassStats{{0.0, 0.0}, 1.0}, Vector{1.0}, NoiseModel{}), DimensionError);
}

TEST(BatchPosterior, EmptyIsPrior) {
  const SharedPrior prior{{{1.0, 2.0}, 0.5}};
  EXPECT_EQ(batch_posterior(prior, {}, NoiseModel{}), prior.stats);
}

TEST(BatchPosterior, ClosedForm) {
  const std::vector<Vector> z{{1.0}, {0.0}};
  const auto g = natural_to_moment(batch_posterior(SharedPrior{{{0.0}, 1.0}}, z, NoiseModel{0.5}));
  EXPECT_NEAR(g.mean[0], 0.4, 1e-15);
  EXPECT_NEAR(g.variance, 0.2, 1e-15);
}

TEST(BatchPosterior, OrderInvariant) {
  Rng rng(5);
  const SharedPrior prior = testing::random_prior(rng, 6);
  const NoiseModel noise = testing::random_noise(rng);
  std::vector<Vector> z;
  for (int i = 0; i < 30; ++i) z.push_back(testing::random_vector(rng, 6, 4.0));
  const auto ref = batch_posterior(prior, z, noise);
  for (int t = 0; t < 50; ++t) {
    std::shuffle(z.begin(), z.end(), rng);
    const auto s = batch_posterior(prior, z, noise);
    for (std::size_t i = 0; i < 6; ++i) EXPECT_LE(testing::rel_err(s.q[i], ref.q[i]), 1e-10);
    EXPECT_LE(testing::rel_err(s.lambda, ref.lambda), 1e-10);
  }
}

TEST(BatchPosterior, MatchesSequentialCondition) {
  Rng rng(99);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = testing::uniform_int(rng, 1, 16);
    const std::size_t k = testing::uniform_int(rng, 0, 50);
    const SharedPrior prior = testing::random_prior(rng, d);
    const NoiseModel noise = testing::random_noise(rng);
    std::vector<Vector> z;
    NaturalClassStats seq = prior.stats;
    for (std::size_t i = 0; i < k; ++i) {
      z.push_back(testing::random_vector(rng, d, 3.0));
      seq = condition(seq, z.back(), noise);
    }
    const auto batch = batch_posterior(prior, z, noise);
    for (std::size_t i = 0; i < d; ++i) EXPECT_LE(testing::rel_err(seq.q[i], batch.q[i]), 1e-9);
    EXPECT_LE(testing::rel_err(seq.lambda, batch.lambda), 1e-9);
  }
}

TEST(PosteriorPredictive, PriorPredictive) {
  const auto g = posterior_predictive(NaturalClassStats{{0.0}, 1.0}, NoiseModel{0.5});
  EXPECT_EQ(g.mean, Vector{0.0});
  EXPECT_DOUBLE_EQ(g.variance, 1.5);
}

TEST(PosteriorPredictive, AfterData) {
  const auto g = posterior_predictive(NaturalClassStats{{2.0}, 3.0}, NoiseModel{0.5});
  EXPECT_DOUBLE_EQ(g.mean[0], 2.0 / 3.0);
  EXPECT_NEAR(g.variance, 5.0 / 6.0, 1e-15);
}

TEST(PosteriorPredictive, IntegratesToOne) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const NaturalClassStats s{{testing::uniform(rng, -3, 3)}, testing::uniform(rng, 0.3, 5.0)};
    const auto g = posterior_predictive(s, testing::random_noise(rng));
    auto pdf = [](double x, double m, double v) { return std::exp(log_density(IsotropicGaussian{{m}, v}, Vector{x})); };
    const double mass = testing::trapezoid(+pdf, g.mean[0], g.variance, -30.0, 30.0, 60000);
    EXPECT_NEAR(mass, 1.0, 1e-6);
  }
}

TEST(PosteriorPredictive, VarianceDecreasesTowardNoise) {
  const NoiseModel noise{0.5};
  NaturalClassStats s{{0.0}, 0.8};
  double prev = posterior_predictive(s, noise).variance;
  for (int k = 1; k <= 200; ++k) {
    s = condition(s, Vector{0.1}, noise);
    const double v = posterior_predictive(s, noise).variance;
    EXPECT_LT(v, prev);
    EXPECT_GT(v, noise.noise_variance);
    EXPECT_NEAR(v, 1.0 / (0.8 + k / 0.5) + 0.5, 1e-12);
    prev = v;
  }
}

TEST(LogDensity, StandardNormalAtMean) {
  EXPECT_NEAR(log_density(IsotropicGaussian{{0.0}, 1.0}, Vector{0.0}), -0.5 * std::log(2 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(log_density(IsotropicGaussian{{0.0}, 1.0}, Vector{0.0}), -0.9189385332, 1e-9);
}

TEST(LogDensity, TranslationInvariant) {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = testing::uniform_int(rng, 1, 8);
    IsotropicGaussian g{testing::random_vector(rng, d), testing::uniform(rng, 0.1, 4)};
    Vector z = testing::random_vector(rng, d);
    const double before = log_density(g, z);
    const Vector shift = testing::random_vector(rng, d, 10.0);
    for (std::size_t i = 0; i < d; ++i) {
      g.mean[i] += shift[i];
      z[i] += shift[i];
    }
    EXPECT_NEAR(log_density(g, z), before, 1e-9);
  }
}

TEST(LogDensity, MatchesNaiveProductOfDensities) {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = testing::uniform_int(rng, 1, 6);
    const IsotropicGaussian g{testing::random_vector(rng, d), testing::uniform(rng, 0.2, 3)};
    const Vector z = testing::random_vector(rng, d, 1.5);
    double naive = 1.0;
    for (std::size_t i = 0; i < d; ++i) naive *= testing::normal_pdf(z[i], g.mean[i], g.variance);
    ASSERT_GT(naive, 0.0);
    EXPECT_NEAR(log_density(g, z), std::log(naive), 1e-9);
  }
}

TEST(LogDensity, NoUnderflowFarFromMean) {
  const double ld = log_density(IsotropicGaussian{{0.0, 0.0}, 0.01}, Vector{70.0, 70.0});
  EXPECT_TRUE(std::isfinite(ld));
  EXPECT_NEAR(ld, -std::log(2 * std::numbers::pi * 0.01) - 9800.0 / 0.02, 1e-6);
}

TEST(Validity, RejectsNonPositivePrecision) {
  EXPECT_TRUE(is_valid(NaturalClassStats{{1.0}, 1.0}));
  EXPECT_FALSE(is_valid(NaturalClassStats{{1.0}, 0.0}));
  EXPECT_FALSE(is_valid(NaturalClassStats{{std::nan("")}, 1.0}));
}

}  // namespace
}  // namespace flowr
