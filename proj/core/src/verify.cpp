#include "l96uq/verify.hpp"

#include "l96uq/parallel.hpp"
#include "l96uq/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace l96uq::verify {

void ScoredSet::validate() const {
  if (sigma.rows() != mean.rows() || sigma.cols() != mean.cols() ||
      reference.rows() != mean.rows() || reference.cols() != mean.cols()) {
    throw std::invalid_argument("ScoredSet: mean, sigma and reference shapes differ");
  }
  if (!valid_time_index.empty() &&
      static_cast<Eigen::Index>(valid_time_index.size()) != mean.cols()) {
    throw std::invalid_argument("ScoredSet: valid_time_index length mismatch");
  }
  if (!sigma.allFinite() || (sigma.array() < 0.0).any()) {
    throw std::invalid_argument("ScoredSet: sigma must be finite and >= 0");
  }
}

ScoredSet ScoredSet::select(const std::vector<Eigen::Index>& columns) const {
  ScoredSet out;
  out.mean = mean(Eigen::all, columns);
  out.sigma = sigma(Eigen::all, columns);
  out.reference = reference(Eigen::all, columns);
  if (!valid_time_index.empty()) {
    out.valid_time_index.reserve(columns.size());
    for (Eigen::Index c : columns) {
      out.valid_time_index.push_back(valid_time_index[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

ScoredSet ScoredSet::from_samples(const std::vector<ScoredForecast>& samples) {
  ScoredSet out;
  if (samples.empty()) return out;
  const Eigen::Index s = samples.front().mean.size();
  const auto m = static_cast<Eigen::Index>(samples.size());
  out.mean.resize(s, m);
  out.sigma.resize(s, m);
  out.reference.resize(s, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const ScoredForecast& f = samples[static_cast<std::size_t>(k)];
    if (f.mean.size() != s || f.sigma.size() != s || f.reference.size() != s) {
      throw std::invalid_argument("ScoredSet: inconsistent sample dimensions");
    }
    out.mean.col(k) = f.mean;
    out.sigma.col(k) = f.sigma;
    out.reference.col(k) = f.reference;
    out.valid_time_index.push_back(f.valid_time_index);
  }
  return out;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw std::invalid_argument("inverse_normal_cdf: p must lie in [0, 1]");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00, 2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x = 0.0;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement brings the ~1e-9 approximation to full precision.
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

double two_sided_z(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0)) {
    throw std::invalid_argument("confidence must lie in (0, 1)");
  }
  if (confidence == 0.9) return kZ90;
  return inverse_normal_cdf(0.5 + 0.5 * confidence);
}

double rmse(const ScoredSet& set) {
  if (set.mean.size() == 0) throw std::invalid_argument("rmse: empty set");
  return std::sqrt((set.mean - set.reference).squaredNorm() /
                   static_cast<double>(set.mean.size()));
}

Coverage coverage(const ScoredSet& set, double confidence) {
  set.validate();
  if (set.mean.size() == 0) throw std::invalid_argument("coverage: empty set");
  const double z = two_sided_z(confidence);
  const auto inside = ((set.mean - set.reference).array().abs() < z * set.sigma.array());
  Coverage c;
  c.value = static_cast<double>(inside.count()) / static_cast<double>(set.mean.size());
  c.all_zero_sigma = (set.sigma.array() == 0.0).all();
  return c;
}

double coverage_probability(const ScoredSet& set, double confidence) {
  return coverage(set, confidence).value;
}

double sigma_error_correlation(const ScoredSet& set) {
  set.validate();
  const Eigen::ArrayXd sig = set.sigma.reshaped().array();
  const Eigen::ArrayXd err = (set.mean - set.reference).reshaped().array().abs();
  const auto n = static_cast<double>(sig.size());
  if (sig.size() < 2) throw UndefinedCorrelation("correlation needs at least two pairs");
  const Eigen::ArrayXd ds = sig - sig.sum() / n;
  const Eigen::ArrayXd de = err - err.sum() / n;
  // Exact comparison: the centred sum of a constant series can be a
  // rounding residue instead of zero.
  if (sig.minCoeff() == sig.maxCoeff()) throw UndefinedCorrelation("sigma is constant");
  if (err.minCoeff() == err.maxCoeff()) throw UndefinedCorrelation("absolute errors are constant");
  const double vs = ds.square().sum();
  const double ve = de.square().sum();
  return (ds * de).sum() / std::sqrt(vs * ve);
}

Eigen::ArrayXd pit_values(const ScoredSet& set) {
  set.validate();
  if ((set.sigma.array() <= 0.0).any()) {
    throw std::invalid_argument("pit: sigma must be > 0");
  }
  const Eigen::ArrayXd z =
      ((set.mean - set.reference).array() / set.sigma.array()).reshaped();
  return z.unaryExpr([](double v) { return normal_cdf(v); });
}

std::vector<std::int64_t> pit_histogram(const ScoredSet& set, int n_bins) {
  if (n_bins < 2) throw std::invalid_argument("pit_histogram: n_bins must be >= 2");
  const Eigen::ArrayXd u = pit_values(set);
  std::vector<std::int64_t> counts(static_cast<std::size_t>(n_bins), 0);
  for (double v : u) {
    auto b = static_cast<int>(v * n_bins);
    b = std::clamp(b, 0, n_bins - 1);
    ++counts[static_cast<std::size_t>(b)];
  }
  return counts;
}

double chi2_flatness(const std::vector<std::int64_t>& counts, std::int64_t m) {
  if (counts.empty()) throw std::invalid_argument("chi2_flatness: no bins");
  if (m <= 0) throw std::invalid_argument("chi2_flatness: M must be > 0");
  const auto nb = static_cast<double>(counts.size());
  const double expected = static_cast<double>(m) / nb;
  double sum = 0.0;
  for (std::int64_t f : counts) {
    const double d = static_cast<double>(f) - expected;
    sum += d * d;
  }
  return nb / static_cast<double>(m) * sum;
}

double pit_chi2(const ScoredSet& set, int n_bins) {
  const auto counts = pit_histogram(set, n_bins);
  std::int64_t m = 0;
  for (auto c : counts) m += c;
  return chi2_flatness(counts, m);
}

std::vector<Eigen::Index> thin_columns(const std::vector<std::int64_t>& valid_time_index,
                                       int thin_steps, int steps_per_index) {
  if (steps_per_index < 1) throw std::invalid_argument("steps_per_index must be >= 1");
  std::vector<Eigen::Index> keep;
  for (std::size_t k = 0; k < valid_time_index.size(); ++k) {
    if (!keep.empty()) {
      const std::int64_t prev = valid_time_index[static_cast<std::size_t>(keep.back())];
      if (valid_time_index[k] < prev) {
        throw std::invalid_argument("bootstrap: samples must be in time order");
      }
      if ((valid_time_index[k] - prev) * steps_per_index < thin_steps) continue;
    }
    keep.push_back(static_cast<Eigen::Index>(k));
  }
  return keep;
}

double quantile(std::vector<double>& values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MetricReport bootstrap_ci(const std::string& metric, const std::string& name,
                          const Metric& fn, const ScoredSet& set,
                          const BootstrapOptions& options) {
  if (options.n_resamples < 1) throw std::invalid_argument("n_resamples must be >= 1");
  if (!(options.confidence > 0.0 && options.confidence < 1.0)) {
    throw std::invalid_argument("bootstrap confidence must lie in (0, 1)");
  }
  set.validate();
  std::vector<std::int64_t> times = set.valid_time_index;
  if (times.empty()) {
    times.resize(static_cast<std::size_t>(set.size()));
    for (std::size_t k = 0; k < times.size(); ++k) times[k] = static_cast<std::int64_t>(k);
  }
  const ScoredSet thinned =
      set.select(thin_columns(times, options.thin_steps, options.steps_per_index));
  const Eigen::Index m = thinned.size();
  if (m == 0) throw std::invalid_argument("bootstrap: empty sample");

  MetricReport report;
  report.metric = metric;
  report.name = name;
  report.sample_size = m;
  report.value = fn(thinned);

  std::vector<double> stats(static_cast<std::size_t>(options.n_resamples));
  parallel_for(stats.size(), options.threads, [&](std::size_t r) {
    Rng rng = make_rng(options.seed, "bootstrap", r);
    std::uniform_int_distribution<Eigen::Index> pick(0, m - 1);
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(m));
    for (auto& c : cols) c = pick(rng);
    try {
      stats[r] = fn(thinned.select(cols));
    } catch (const UndefinedCorrelation&) {
      stats[r] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  std::erase_if(stats, [](double v) { return !std::isfinite(v); });
  if (stats.empty()) throw std::runtime_error("bootstrap: no resample produced a finite value");
  const double alpha = 0.5 * (1.0 - options.confidence);
  report.ci_low = std::min(quantile(stats, alpha), report.value);
  report.ci_high = std::max(quantile(stats, 1.0 - alpha), report.value);
  return report;
}

}  // namespace l96uq::verify
