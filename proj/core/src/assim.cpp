#include "l96uq/assim.hpp"

#include "l96uq/parallel.hpp"
#include "l96uq/rng.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace l96uq::da {

namespace {

constexpr double kEigenFloor = 1e-12;

/// Ensemble-space weights for one (possibly localized) analysis.
struct Transform {
  Eigen::VectorXd mean_weights;   // wbar, length N
  Eigen::MatrixXd perturbation;   // W, N x N
};

// S: p x N observation-space perturbations, d: innovation, both already
// scaled by sqrt of any localization weight. r_var = sigma_r^2.
Transform ensemble_space_transform(const Eigen::MatrixXd& S,
                                   const Eigen::VectorXd& d, double r_var) {
  const Eigen::Index N = S.cols();
  const double a = static_cast<double>(N - 1);
  Eigen::MatrixXd A = (S.transpose() * S) / r_var;
  A.diagonal().array() += a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) {
    throw FilterError("LETKF: eigendecomposition of the ensemble-space matrix failed");
  }
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (!lambda.allFinite() || lambda.minCoeff() <= 0.0) {
    throw FilterError("LETKF: ensemble-space matrix is singular");
  }
  const Eigen::MatrixXd& V = eig.eigenvectors();
  // Eigenvalues of (N-1) Pt are a / lambda.
  const Eigen::VectorXd scaled =
      (a / lambda.array()).max(kEigenFloor).matrix();
  Transform t;
  const Eigen::VectorXd rhs = V.transpose() * (S.transpose() * d / r_var);
  t.mean_weights = V * (rhs.array() / lambda.array()).matrix();
  t.perturbation = V * scaled.cwiseSqrt().asDiagonal() * V.transpose();
  return t;
}

// Same transform through the p x p Gram matrix G = S S^T. With
// G = U diag(mu) U^T and t = mu / r_var:
//   wbar = S^T U diag(1 / (a r_var + mu)) U^T d
//   W    = I + S^T U diag(g(mu)) U^T S,  g = (sqrt(a / (a + t)) - 1) / mu
// g is evaluated as -(1/r_var) / ((a + t)(sqrt(a/(a+t)) + 1)), finite at mu=0.
Transform observation_space_transform(const Eigen::MatrixXd& S,
                                      const Eigen::VectorXd& d, double r_var) {
  const Eigen::Index N = S.cols();
  const double a = static_cast<double>(N - 1);
  const Eigen::MatrixXd G = S * S.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  if (eig.info() != Eigen::Success) {
    throw FilterError("LETKF: eigendecomposition of the observation Gram matrix failed");
  }
  const Eigen::VectorXd mu = eig.eigenvalues().cwiseMax(0.0);
  if (!mu.allFinite()) throw FilterError("LETKF: non-finite Gram spectrum");
  const Eigen::MatrixXd& U = eig.eigenvectors();
  const Eigen::MatrixXd SU = S.transpose() * U;  // N x p

  Eigen::VectorXd inv_shift(mu.size());
  Eigen::VectorXd g(mu.size());
  for (Eigen::Index k = 0; k < mu.size(); ++k) {
    const double t = mu[k] / r_var;
    const double q = std::max(a / (a + t), kEigenFloor);
    inv_shift[k] = 1.0 / (a * r_var + mu[k]);
    g[k] = -(1.0 / r_var) / ((a + t) * (std::sqrt(q) + 1.0));
  }
  Transform tr;
  tr.mean_weights = SU * (inv_shift.asDiagonal() * (U.transpose() * d));
  tr.perturbation = SU * g.asDiagonal() * SU.transpose();
  tr.perturbation.diagonal().array() += 1.0;
  return tr;
}

Transform solve_transform(const Eigen::MatrixXd& S, const Eigen::VectorXd& d,
                          double r_var, TransformRoute route) {
  if (route == TransformRoute::Automatic) {
    route = S.rows() < S.cols() ? TransformRoute::ObservationSpace
                                : TransformRoute::EnsembleSpace;
  }
  return route == TransformRoute::ObservationSpace
             ? observation_space_transform(S, d, r_var)
             : ensemble_space_transform(S, d, r_var);
}

int cyclic_distance(Eigen::Index i, Eigen::Index j, Eigen::Index n) {
  const Eigen::Index d = std::abs(i - j) % n;
  return static_cast<int>(std::min(d, n - d));
}

}  // namespace

void ObsNetwork::validate() const {
  if (obs_every_steps < 1) throw std::invalid_argument("obs_every_steps must be >= 1");
  if (!(sigma_r > 0.0)) throw std::invalid_argument("sigma_r must be > 0");
  if (!(model_dt > 0.0)) throw std::invalid_argument("model_dt must be > 0");
}

Eigen::VectorXd EnsembleState::variance() const {
  const Eigen::MatrixXd anomalies = members.colwise() - mean();
  return anomalies.rowwise().squaredNorm() / static_cast<double>(size() - 1);
}

void EnsembleState::validate() const {
  if (size() < 2) throw std::invalid_argument("ensemble needs at least 2 members");
}

void FilterConfig::validate() const {
  if (!(inflation >= 1.0 && inflation <= 2.0)) {
    throw std::invalid_argument("inflation must lie in [1, 2]");
  }
  if (!(localization_radius > 0.0)) {
    throw std::invalid_argument("localization_radius must be > 0");
  }
}

std::vector<ObservationRecord> generate_observations(
    const dyn::Trajectory& nature, const ObsNetwork& net, std::uint64_t seed,
    Eigen::Index observed_dim) {
  net.validate();
  const double ratio = net.interval() / nature.sample_interval();
  const auto every = static_cast<long>(std::llround(ratio));
  if (every < 1 || std::abs(ratio - static_cast<double>(every)) > 1e-9 * ratio) {
    throw std::invalid_argument(
        "generate_observations: observation interval is not a whole number "
        "of trajectory samples");
  }
  const Eigen::Index dim = observed_dim > 0 ? observed_dim : nature.dim();
  if (dim > nature.dim()) {
    throw std::invalid_argument("generate_observations: observed_dim too large");
  }
  std::vector<ObservationRecord> records;
  records.reserve(static_cast<std::size_t>(nature.size() / every));
  for (Eigen::Index col = every; col < nature.size(); col += every) {
    Rng rng = make_rng(seed, "obs", static_cast<std::uint64_t>(col));
    std::normal_distribution<double> noise(0.0, net.sigma_r);
    ObservationRecord rec;
    rec.time_index = col;
    rec.values = nature.states.col(col).head(dim);
    for (Eigen::Index i = 0; i < dim; ++i) rec.values[i] += noise(rng);
    records.push_back(std::move(rec));
  }
  return records;
}

double gaspari_cohn(double distance, double cutoff) {
  const double c = 0.5 * cutoff;
  const double r = std::abs(distance) / c;
  if (r >= 2.0) return 0.0;
  if (r <= 1.0) {
    return (((-0.25 * r + 0.5) * r + 0.625) * r - 5.0 / 3.0) * r * r + 1.0;
  }
  return ((((r / 12.0 - 0.5) * r + 0.625) * r + 5.0 / 3.0) * r - 5.0) * r +
         4.0 - 2.0 / (3.0 * r);
}

EnsembleState letkf_update(const EnsembleState& background,
                           const ObservationRecord& obs, const ObsNetwork& net,
                           const FilterConfig& cfg, TransformRoute route) {
  background.validate();
  net.validate();
  cfg.validate();
  const Eigen::Index n = background.dim();
  const Eigen::Index p = obs.values.size();
  if (p > n) throw std::invalid_argument("letkf_update: more observations than state variables");

  const Eigen::VectorXd xbar = background.mean();
  const Eigen::MatrixXd Xp =
      std::sqrt(cfg.inflation) * (background.members.colwise() - xbar);
  const Eigen::MatrixXd S = Xp.topRows(p);  // H = identity on the first p rows
  const Eigen::VectorXd d = obs.values - xbar.head(p);
  const double r_var = net.sigma_r * net.sigma_r;

  EnsembleState analysis;
  analysis.members.resize(n, background.size());

  if (!cfg.localized()) {
    const Transform t = solve_transform(S, d, r_var, route);
    Eigen::MatrixXd weights = t.perturbation;
    weights.colwise() += t.mean_weights;
    analysis.members = (Xp * weights).colwise() + xbar;
    return analysis;
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<Eigen::Index> local;
    std::vector<double> taper;
    for (Eigen::Index j = 0; j < p; ++j) {
      const double rho = gaspari_cohn(cyclic_distance(i, j, n), cfg.localization_radius);
      if (rho > 0.0) {
        local.push_back(j);
        taper.push_back(std::sqrt(rho));
      }
    }
    if (local.empty()) {
      analysis.members.row(i) = Xp.row(i).array() + xbar[i];
      continue;
    }
    const auto m = static_cast<Eigen::Index>(local.size());
    Eigen::MatrixXd S_loc(m, background.size());
    Eigen::VectorXd d_loc(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      S_loc.row(k) = taper[k] * S.row(local[k]);
      d_loc[k] = taper[k] * d[local[k]];
    }
    const Transform t = solve_transform(S_loc, d_loc, r_var, route);
    Eigen::MatrixXd weights = t.perturbation;
    weights.colwise() += t.mean_weights;
    analysis.members.row(i) = (Xp.row(i) * weights).array() + xbar[i];
  }
  return analysis;
}

std::vector<AnalysisRecord> run_assimilation_cycle(
    const dyn::Model& model, const std::vector<ObservationRecord>& obs,
    const EnsembleState& initial, const ObsNetwork& net,
    const FilterConfig& cfg, const CycleOptions& options) {
  initial.validate();
  net.validate();
  cfg.validate();
  const long steps_per_index =
      options.steps_per_index > 0 ? options.steps_per_index : net.obs_every_steps;

  std::vector<AnalysisRecord> out;
  out.reserve(obs.size());
  EnsembleState ens = initial;
  std::int64_t now = options.initial_time_index;
  int bad_streak = 0;

  for (const ObservationRecord& rec : obs) {
    if (rec.time_index <= now) {
      throw std::invalid_argument(
          "run_assimilation_cycle: observations must be strictly increasing in time");
    }
    const long steps = static_cast<long>(rec.time_index - now) * steps_per_index;
    parallel_for(static_cast<std::size_t>(ens.size()), options.threads,
                 [&](std::size_t m) {
                   Eigen::VectorXd x = ens.members.col(static_cast<Eigen::Index>(m));
                   dyn::Rk4Stepper stepper;
                   model.advance(x, steps, stepper);
                   ens.members.col(static_cast<Eigen::Index>(m)) = x;
                 });
    ens = letkf_update(ens, rec, net, cfg);
    now = rec.time_index;

    AnalysisRecord a;
    a.time_index = rec.time_index;
    a.mean = ens.mean();
    a.spread = ens.spread();
    const double misfit =
        std::sqrt((a.mean.head(rec.values.size()) - rec.values).squaredNorm() /
                  static_cast<double>(rec.values.size()));
    bad_streak = misfit > options.divergence_factor * net.sigma_r ? bad_streak + 1 : 0;
    if (bad_streak >= options.divergence_cycles) {
      throw FilterDivergence(
          "filter divergence: analysis RMSE against observations exceeded " +
          std::to_string(options.divergence_factor) + " sigma_r for " +
          std::to_string(bad_streak) + " consecutive cycles (last at time index " +
          std::to_string(rec.time_index) + ", misfit " + std::to_string(misfit) + ")");
    }
    a.ensemble = ens;
    out.push_back(std::move(a));
  }
  return out;
}

EnsembleState perturbed_ensemble(const Eigen::VectorXd& truth, int members,
                                 double spread, std::uint64_t seed) {
  if (members < 2) throw std::invalid_argument("ensemble needs at least 2 members");
  Rng rng = make_rng(seed, "init-ensemble");
  std::normal_distribution<double> noise(0.0, spread);
  EnsembleState ens;
  ens.members.resize(truth.size(), members);
  for (int m = 0; m < members; ++m) {
    for (Eigen::Index i = 0; i < truth.size(); ++i) {
      ens.members(i, m) = truth[i] + noise(rng);
    }
  }
  return ens;
}

}  // namespace l96uq::da
