#include "l96uq/rng.hpp"
#include "l96uq/verify.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

namespace {

using namespace l96uq;
using namespace l96uq::verify;

/// Errors ~ N(0, true_sigma^2) around a random reference, sigma column as given.
ScoredSet synthetic(Eigen::Index s, Eigen::Index m, double true_sigma, double stated_sigma,
                    std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  ScoredSet set;
  set.reference.resize(s, m);
  set.mean.resize(s, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < s; ++i) {
      set.reference(i, j) = 3.0 * n01(rng);
      set.mean(i, j) = set.reference(i, j) + true_sigma * n01(rng);
    }
    set.valid_time_index.push_back(j);
  }
  set.sigma = Eigen::MatrixXd::Constant(s, m, stated_sigma);
  return set;
}

ScoredSet random_set(Eigen::Index s, Eigen::Index m, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.1, 2.0);
  ScoredSet set = synthetic(s, m, 1.0, 1.0, seed);
  for (auto& v : set.sigma.reshaped()) v = u(rng);
  return set;
}

double naive_rmse(const ScoredSet& set) {
  double sum = 0.0;
  for (Eigen::Index j = 0; j < set.size(); ++j) {
    for (Eigen::Index i = 0; i < set.state_dim(); ++i) {
      const double e = set.mean(i, j) - set.reference(i, j);
      sum += e * e;
    }
  }
  return std::sqrt(sum / static_cast<double>(set.size() * set.state_dim()));
}

double naive_cp(const ScoredSet& set, double z) {
  double hits = 0.0;
  for (Eigen::Index j = 0; j < set.size(); ++j) {
    for (Eigen::Index i = 0; i < set.state_dim(); ++i) {
      if (std::abs(set.mean(i, j) - set.reference(i, j)) < z * set.sigma(i, j)) hits += 1.0;
    }
  }
  return hits / static_cast<double>(set.size() * set.state_dim());
}

double naive_corr(const ScoredSet& set) {
  std::vector<double> a;
  std::vector<double> b;
  for (Eigen::Index j = 0; j < set.size(); ++j) {
    for (Eigen::Index i = 0; i < set.state_dim(); ++i) {
      a.push_back(set.sigma(i, j));
      b.push_back(std::abs(set.mean(i, j) - set.reference(i, j)));
    }
  }
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    sab += (a[k] - ma) * (b[k] - mb);
    saa += (a[k] - ma) * (a[k] - ma);
    sbb += (b[k] - mb) * (b[k] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Quantiles, NormalCdfAndInverse) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(kZ90) - normal_cdf(-kZ90), 0.9, 1e-12);
  EXPECT_EQ(two_sided_z(0.9), kZ90);
  for (double p : {1e-6, 0.01, 0.3, 0.5, 0.77, 0.999}) {
    EXPECT_NEAR(normal_cdf(inverse_normal_cdf(p)), p, 1e-9 * std::max(p, 1e-3));
  }
  EXPECT_NEAR(two_sided_z(0.95), 1.959963984540054, 1e-9);
}

TEST(Rmse, TrivialCases) {
  ScoredSet set = synthetic(8, 20, 1.0, 1.0, 1);
  set.mean = set.reference;
  EXPECT_EQ(rmse(set), 0.0);
  set.mean.array() += -2.5;
  EXPECT_NEAR(rmse(set), 2.5, 1e-12);
}

TEST(Rmse, MatchesNaiveOracle) {
  const ScoredSet set = random_set(8, 500, 2);
  EXPECT_NEAR(rmse(set), naive_rmse(set), 1e-12);
}

TEST(Coverage, TrivialCases) {
  ScoredSet set = synthetic(8, 50, 1.0, 1e9, 3);
  EXPECT_EQ(coverage_probability(set), 1.0);
  set.sigma.setZero();
  EXPECT_EQ(coverage_probability(set), 0.0);
  EXPECT_TRUE(coverage(set).all_zero_sigma);
}

TEST(Coverage, MatchesNaiveOracle) {
  const ScoredSet set = random_set(8, 500, 4);
  EXPECT_NEAR(coverage_probability(set), naive_cp(set, kZ90), 1e-12);
  EXPECT_NEAR(coverage_probability(set, 0.5), naive_cp(set, two_sided_z(0.5)), 1e-12);
}

TEST(Coverage, CalibratedGaussianErrors) {
  const ScoredSet set = synthetic(1, 10000, 0.7, 0.7, 5);
  const double cp = coverage_probability(set);
  EXPECT_GE(cp, 0.885);
  EXPECT_LE(cp, 0.915);
}

TEST(Coverage, MonotoneInSigma) {
  ScoredSet set = random_set(8, 300, 6);
  double prev = coverage_probability(set);
  Rng rng{7};
  std::uniform_int_distribution<Eigen::Index> pick(0, set.sigma.size() - 1);
  for (int k = 0; k < 200; ++k) {
    set.sigma.reshaped()(pick(rng)) *= 1.5;
    const double cp = coverage_probability(set);
    EXPECT_GE(cp, prev);
    prev = cp;
  }
}

TEST(Correlation, TrivialCases) {
  ScoredSet set = synthetic(8, 100, 1.0, 1.0, 8);
  set.sigma = set.errors().cwiseAbs();
  EXPECT_NEAR(sigma_error_correlation(set), 1.0, 1e-12);
  set.sigma = (10.0 - set.errors().cwiseAbs().array()).matrix();
  EXPECT_NEAR(sigma_error_correlation(set), -1.0, 1e-12);
}

TEST(Correlation, MatchesNaiveOracle) {
  const ScoredSet set = random_set(8, 400, 9);
  EXPECT_NEAR(sigma_error_correlation(set), naive_corr(set), 1e-12);
}

TEST(Correlation, IndependentPairsNearZero) {
  const ScoredSet set = random_set(1, 10000, 10);
  EXPECT_LT(std::abs(sigma_error_correlation(set)), 0.05);
}

TEST(Correlation, StaticSigmaIsUndefined) {
  const ScoredSet set = synthetic(8, 100, 1.0, 0.4, 11);
  EXPECT_THROW(sigma_error_correlation(set), UndefinedCorrelation);
  ScoredSet exact = set;
  exact.mean = exact.reference;
  exact.sigma = random_set(8, 100, 12).sigma;
  EXPECT_THROW(sigma_error_correlation(exact), UndefinedCorrelation);
}

TEST(Pit, ZeroErrorsFallInMiddleBin) {
  ScoredSet set = synthetic(8, 30, 1.0, 1.0, 13);
  set.mean = set.reference;
  const auto h = pit_histogram(set, 10);
  EXPECT_EQ(h[5], 240);
  EXPECT_EQ(std::accumulate(h.begin(), h.end(), std::int64_t{0}), 240);
}

TEST(Pit, CalibratedErrorsAreFlat) {
  const ScoredSet set = synthetic(1, 100000, 1.3, 1.3, 14);
  const auto h = pit_histogram(set, 10);
  for (std::int64_t c : h) EXPECT_NEAR(static_cast<double>(c) / 1e5, 0.1, 0.01);
}

TEST(Pit, UnderdispersedSigmaIsUShaped) {
  const ScoredSet set = synthetic(1, 100000, 1.0, 0.5, 15);
  const auto h = pit_histogram(set, 10);
  // PIT = Phi(2 Z), so P(PIT < 0.1) = Phi(Phi^-1(0.1) / 2).
  const double edge = normal_cdf(0.5 * inverse_normal_cdf(0.1));
  EXPECT_NEAR(static_cast<double>(h.front()) / 1e5, edge, 0.005);
  EXPECT_GT(static_cast<double>(h.front()) / 1e5, 0.15);
  EXPECT_GT(static_cast<double>(h.back()) / 1e5, 0.15);
}

TEST(Pit, RejectsBadInput) {
  ScoredSet set = synthetic(2, 10, 1.0, 1.0, 16);
  EXPECT_THROW(pit_histogram(set, 1), std::invalid_argument);
  set.sigma(0, 0) = 0.0;
  EXPECT_THROW(pit_histogram(set, 10), std::invalid_argument);
}

TEST(Chi2, ClosedFormCases) {
  EXPECT_EQ(chi2_flatness(std::vector<std::int64_t>(10, 10), 100), 0.0);
  std::vector<std::int64_t> one(10, 0);
  one[3] = 100;
  EXPECT_DOUBLE_EQ(chi2_flatness(one, 100), 900.0);
  EXPECT_GT(chi2_flatness({11, 9, 10, 10, 10, 10, 10, 10, 10, 10}, 100), 0.0);
}

TEST(Chi2, MultinomialUniformAverage) {
  // Under uniform multinomial counts the statistic is chi-square with
  // N_b - 1 degrees of freedom, so its mean is 9 and chi2 / M is tiny.
  Rng rng{17};
  std::uniform_int_distribution<int> bin(0, 9);
  double sum = 0.0;
  const int trials = 400;
  for (int t = 0; t < trials; ++t) {
    std::vector<std::int64_t> counts(10, 0);
    for (int k = 0; k < 10000; ++k) ++counts[static_cast<std::size_t>(bin(rng))];
    const double c = chi2_flatness(counts, 10000);
    EXPECT_GE(c, 0.0);
    sum += c;
  }
  const double mean = sum / trials;
  EXPECT_NEAR(mean, 9.0, 4.0 * std::sqrt(18.0 / trials));
  EXPECT_LT(mean / 10000.0, 0.05);
}

TEST(Metrics, PermutationInvariant) {
  const ScoredSet set = random_set(8, 200, 18);
  std::vector<Eigen::Index> perm(200);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), Rng{19});
  const ScoredSet p = set.select(perm);
  EXPECT_NEAR(rmse(p), rmse(set), 1e-12);
  EXPECT_EQ(coverage_probability(p), coverage_probability(set));
  EXPECT_NEAR(sigma_error_correlation(p), sigma_error_correlation(set), 1e-12);
  EXPECT_NEAR(pit_chi2(p), pit_chi2(set), 1e-9);
}

TEST(Thinning, KeepsGreedySpacing) {
  const std::vector<std::int64_t> t{0, 1, 5, 6, 10, 11, 25};
  EXPECT_EQ(thin_columns(t, 20, 4), (std::vector<Eigen::Index>{0, 2, 4, 6}));
  EXPECT_EQ(thin_columns(t, 1, 1).size(), t.size());
  EXPECT_THROW(thin_columns({3, 1}, 1, 1), std::invalid_argument);
}

TEST(Bootstrap, ConstantMetricHasDegenerateInterval) {
  const ScoredSet set = random_set(4, 100, 20);
  const MetricReport r = bootstrap_ci("const", "x", [](const ScoredSet&) { return 1.25; }, set, {});
  EXPECT_EQ(r.ci_low, 1.25);
  EXPECT_EQ(r.value, 1.25);
  EXPECT_EQ(r.ci_high, 1.25);
  EXPECT_EQ(r.sample_size, 5);
}

TEST(Bootstrap, DeterministicForFixedSeed) {
  const ScoredSet set = random_set(8, 400, 21);
  BootstrapOptions o;
  o.thin_steps = 2;
  o.seed = 99;
  const MetricReport a = bootstrap_ci("rmse", "x", rmse, set, o);
  o.threads = 4;
  const MetricReport b = bootstrap_ci("rmse", "x", rmse, set, o);
  EXPECT_EQ(a.value, b.value);
  EXPECT_EQ(a.ci_low, b.ci_low);
  EXPECT_EQ(a.ci_high, b.ci_high);
  EXPECT_LE(a.ci_low, a.value);
  EXPECT_GE(a.ci_high, a.value);
  o.seed = 100;
  EXPECT_NE(bootstrap_ci("rmse", "x", rmse, set, o).ci_low, a.ci_low);
}

TEST(Bootstrap, RmseIntervalCoversTruth) {
  BootstrapOptions o;
  o.thin_steps = 1;
  int covered = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const ScoredSet set = synthetic(8, 100, 1.0, 1.0, 1000 + static_cast<std::uint64_t>(rep));
    o.seed = static_cast<std::uint64_t>(rep);
    const MetricReport r = bootstrap_ci("rmse", "x", rmse, set, o);
    if (r.ci_low <= 1.0 && 1.0 <= r.ci_high) ++covered;
  }
  EXPECT_GE(covered, 93);
}

TEST(Bootstrap, UndefinedResamplesAreSkipped) {
  ScoredSet set = synthetic(2, 60, 1.0, 1.0, 22);
  set.sigma.col(0).setConstant(2.0);
  const MetricReport r = bootstrap_ci("corr", "x", sigma_error_correlation, set, {.thin_steps = 1});
  EXPECT_LE(r.ci_low, r.ci_high);
}

}  // namespace
