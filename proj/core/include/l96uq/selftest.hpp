#pragma once

#include <cstdint>
#include <string>
#include <vector>

/// Oracle checks of the numerical core against independent naive
/// implementations and closed forms. Shared by `l96uq verify-install` and
/// the acceptance suite.
namespace l96uq::selftest {

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// All three tendencies against 1-based index-by-index loops on `states`
/// random states; passes when the max relative error is below 1e-12.
Check tendency_oracles(int states = 100, std::uint64_t seed = 42);

/// dx/dt = -x integrated to t = 1 with dt in {0.05, 0.025, 0.0125}: the
/// error against exp(-1) must shrink by a factor in [14, 18] per halving.
Check rk4_order();

/// Two-variable linear-Gaussian update: ETKF analysis mean (both transform
/// routes) against the closed-form Kalman update with the ensemble
/// covariance, within 1e-8.
Check letkf_kalman(int problems = 20, std::uint64_t seed = 5);

/// Analytic gradients of every loss against central differences (step
/// 1e-6) on `nets` random networks per loss; max relative error < 1e-6.
Check gradient_checks(int nets = 10, std::uint64_t seed = 11);

/// d loss / d var changes sign at var = eps^2 for loss_emse and loss_lik.
Check loss_minimizers(int samples = 1000, std::uint64_t seed = 13);

/// RMSE, CP, correlation and chi2 against naive loops (1e-12), and PIT
/// flatness within +-0.01 per bin for calibrated Gaussian errors.
Check metric_oracles(long pit_samples = 100000, std::uint64_t seed = 17);

/// ArrayFile bit-exact round trip and corrupted-header rejection.
Check array_file_roundtrip(std::uint64_t seed = 19);

std::vector<Check> run_all();

}  // namespace l96uq::selftest
