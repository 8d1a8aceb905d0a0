#pragma once

#include "l96uq/dyncore.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

/// Synthetic observations and the ensemble transform Kalman filter.
namespace l96uq::da {

class FilterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FilterDivergence : public FilterError {
 public:
  using FilterError::FilterError;
};

/// Identity observation operator on every slow variable, R = sigma_r^2 I.
struct ObsNetwork {
  int obs_every_steps = 4;
  double sigma_r = 1.0;
  /// Length of the model step that obs_every_steps counts.
  double model_dt = 0.0125;

  void validate() const;
  double interval() const { return obs_every_steps * model_dt; }
};

struct ObservationRecord {
  /// Column of the nature trajectory the observation is taken from.
  std::int64_t time_index = 0;
  Eigen::VectorXd values;
};

/// N members stored as the columns of a dim x N matrix.
struct EnsembleState {
  Eigen::MatrixXd members;

  Eigen::Index size() const { return members.cols(); }
  Eigen::Index dim() const { return members.rows(); }
  Eigen::VectorXd mean() const { return members.rowwise().mean(); }
  /// Per-variable sample variance with N - 1 denominator.
  Eigen::VectorXd variance() const;
  Eigen::VectorXd spread() const { return variance().cwiseSqrt(); }
  void validate() const;
};

struct FilterConfig {
  /// Multiplicative covariance inflation; perturbations scale by sqrt().
  double inflation = 1.05;
  /// Gaspari-Cohn cutoff distance in grid points; infinity disables
  /// localization and performs one global transform.
  double localization_radius = std::numeric_limits<double>::infinity();

  void validate() const;
  bool localized() const {
    return localization_radius < std::numeric_limits<double>::infinity();
  }
};

struct AnalysisRecord {
  std::int64_t time_index = 0;
  EnsembleState ensemble;
  Eigen::VectorXd mean;
  Eigen::VectorXd spread;
};

/// Observations y_k = x^t_k + eps, eps ~ N(0, sigma_r^2 I), one record per
/// observation time after the initial state. Observation times are every
/// k-th trajectory column with k = obs interval / trajectory sample interval,
/// which must be a positive integer. Only the first `observed_dim` rows of
/// the trajectory are observed (the slow variables of a packed two-scale
/// state); 0 means all rows.
///
/// Each record draws from its own stream derive_seed(seed, "obs", index).
std::vector<ObservationRecord> generate_observations(
    const dyn::Trajectory& nature, const ObsNetwork& net, std::uint64_t seed,
    Eigen::Index observed_dim = 0);

/// Gaspari-Cohn fifth-order taper; distance and cutoff in grid points.
/// Returns 1 at distance 0 and 0 at distance >= cutoff.
double gaspari_cohn(double distance, double cutoff);

/// How the ensemble-space transform is evaluated.
enum class TransformRoute {
  /// Observation-space Gram matrix when obs count < N, ensemble space
  /// otherwise.
  Automatic,
  /// Eigendecomposition of the N x N matrix (N-1) I + S^T R^-1 S.
  EnsembleSpace,
  /// Eigendecomposition of the p x p matrix S S^T (exact when p < N).
  ObservationSpace,
};

/// ETKF analysis with identity H and R = sigma_r^2 I.
///
///   X' = sqrt(inflation) (x^(n) - xbar),  S = H X',  C = S^T R^-1
///   Pt = [(N-1) I + C S]^-1,  wbar = Pt C (y - H xbar)
///   W  = [(N-1) Pt]^(1/2)     (symmetric square root)
///   x^a(n) = xbar + X' (wbar + W e_n)
///
/// With a finite localization radius each grid point is updated by its own
/// transform, with observation j weighted by the Gaspari-Cohn taper of its
/// cyclic distance to that grid point (R-localization).
EnsembleState letkf_update(const EnsembleState& background,
                           const ObservationRecord& obs, const ObsNetwork& net,
                           const FilterConfig& cfg,
                           TransformRoute route = TransformRoute::Automatic);

struct CycleOptions {
  /// Nature column the initial ensemble is valid at.
  std::int64_t initial_time_index = 0;
  /// Model steps per unit of time_index; 0 means obs_every_steps (nature
  /// stored at observation times).
  long steps_per_index = 0;
  int threads = 1;
  /// Divergence guard: abort once the analysis-mean RMSE against the
  /// observations exceeds factor * sigma_r for `cycles` consecutive cycles.
  double divergence_factor = 5.0;
  int divergence_cycles = 100;
};

/// Alternates member forecasts (model.advance, steps_per_index per unit of
/// time_index) and letkf_update, one AnalysisRecord per observation record.
std::vector<AnalysisRecord> run_assimilation_cycle(
    const dyn::Model& model, const std::vector<ObservationRecord>& obs,
    const EnsembleState& initial, const ObsNetwork& net,
    const FilterConfig& cfg, const CycleOptions& options = {});

/// Initial ensemble: truth plus N(0, spread^2 I) perturbations drawn from
/// stream "init-ensemble".
EnsembleState perturbed_ensemble(const Eigen::VectorXd& truth, int members,
                                 double spread, std::uint64_t seed);

}  // namespace l96uq::da
