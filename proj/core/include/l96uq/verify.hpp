#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

/// Probabilistic verification scores and bootstrap confidence intervals.
///
/// Every score pools variables and times. A forecast set is stored column
/// per valid time: mean, sigma (standard deviation) and reference are all
/// s x M.
namespace l96uq::verify {

/// 90% two-sided Gaussian quantile.
inline constexpr double kZ90 = 1.6448536269514722;

class UndefinedCorrelation : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A single scored forecast.
struct ScoredForecast {
  Eigen::VectorXd mean;
  Eigen::VectorXd sigma;
  Eigen::VectorXd reference;
  std::int64_t valid_time_index = 0;
};

/// A forecast set in column-per-time layout.
struct ScoredSet {
  Eigen::MatrixXd mean;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd reference;
  std::vector<std::int64_t> valid_time_index;

  Eigen::Index size() const { return mean.cols(); }
  Eigen::Index state_dim() const { return mean.rows(); }
  /// Shapes agree, sigma >= 0 and finite.
  void validate() const;
  ScoredSet select(const std::vector<Eigen::Index>& columns) const;
  Eigen::MatrixXd errors() const { return mean - reference; }

  static ScoredSet from_samples(const std::vector<ScoredForecast>& samples);
};

struct MetricReport {
  std::string metric;
  std::string name;
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  /// Number of valid times the value was computed from.
  std::int64_t sample_size = 0;
  /// Set when the score is undefined for this system (static sigma).
  bool not_applicable = false;
};

double normal_cdf(double x);
/// Acklam's rational approximation refined by one Halley step.
double inverse_normal_cdf(double p);
/// z with P(|Z| < z) = confidence.
double two_sided_z(double confidence);

double rmse(const ScoredSet& set);

struct Coverage {
  double value = 0.0;
  /// Every sigma was zero, so the score says nothing about the spread.
  bool all_zero_sigma = false;
};

/// Fraction of (variable, time) pairs with |mean - reference| < z * sigma.
Coverage coverage(const ScoredSet& set, double confidence = 0.9);
double coverage_probability(const ScoredSet& set, double confidence = 0.9);

/// Pearson correlation between sigma and |error|. Throws
/// UndefinedCorrelation when either pooled series is constant.
double sigma_error_correlation(const ScoredSet& set);

/// Phi(error / sigma) for every pooled pair; sigma must be > 0.
Eigen::ArrayXd pit_values(const ScoredSet& set);
/// Equal-width bins on [0, 1]; a value of exactly 1 falls in the last bin.
std::vector<std::int64_t> pit_histogram(const ScoredSet& set, int n_bins = 10);
double chi2_flatness(const std::vector<std::int64_t>& counts, std::int64_t m);
/// chi2_flatness of the PIT histogram with M = total count.
double pit_chi2(const ScoredSet& set, int n_bins = 10);

using Metric = std::function<double(const ScoredSet&)>;

struct BootstrapOptions {
  int n_resamples = 500;
  /// Minimum spacing of retained valid times, in model steps.
  int thin_steps = 20;
  /// Model steps per unit of valid_time_index.
  int steps_per_index = 1;
  double confidence = 0.95;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// Columns kept by greedy thinning: a valid time is kept when it lies at
/// least thin_steps after the last kept one.
std::vector<Eigen::Index> thin_columns(const std::vector<std::int64_t>& valid_time_index,
                                       int thin_steps, int steps_per_index);

/// Percentile bootstrap over whole time slices of the thinned set. The value
/// is the metric on the thinned set; the interval is widened if needed so it
/// contains the value. Resample r draws from derive_seed(seed, "bootstrap", r).
MetricReport bootstrap_ci(const std::string& metric, const std::string& name,
                          const Metric& fn, const ScoredSet& set,
                          const BootstrapOptions& options);

/// Type-7 sample quantile of `values` (sorted in place).
double quantile(std::vector<double>& values, double q);

}  // namespace l96uq::verify
