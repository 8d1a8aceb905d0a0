#pragma once

#include <Eigen/Core>

#include <functional>
#include <stdexcept>
#include <string>

/// Lorenz'96 dynamics: the single-scale system, the two-scale "nature"
/// system and the single-scale surrogate with a linear parameterization,
/// plus the fixed-step RK4 integrator every other module drives.
///
/// Indices are 0-based and cyclic: x[-1] == x[s-1], y[-1] == y[s*J-1].
namespace l96uq::dyn {

using StateVector = Eigen::VectorXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IntegrationBlowUp : public std::runtime_error {
 public:
  IntegrationBlowUp(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

struct SingleScaleParams {
  int s = 8;
  double forcing = 8.0;

  void validate() const;
};

struct TwoScaleParams {
  int s = 8;
  int j_per_x = 32;
  double forcing = 20.0;
  double h = 1.0;
  double c = 10.0;
  double b = 10.0;

  void validate() const;
  Eigen::Index fast_size() const { return Eigen::Index{s} * j_per_x; }
};

/// Single-scale model plus G_i = alpha * x_i + beta.
struct SurrogateParams {
  SingleScaleParams base;
  double alpha = 0.0;
  double beta = 0.0;

  void validate() const { base.validate(); }
};

struct TwoScaleState {
  Eigen::VectorXd slow;
  Eigen::VectorXd fast;
};

/// Packed layout used by the integrator: [slow; fast].
Eigen::VectorXd pack(const TwoScaleState& z);
TwoScaleState unpack(const Eigen::VectorXd& packed, const TwoScaleParams& p);

StateVector l96_tendency(const StateVector& x, const SingleScaleParams& p);
TwoScaleState l96_two_scale_tendency(const TwoScaleState& z,
                                     const TwoScaleParams& p);
StateVector surrogate_tendency(const StateVector& x, const SurrogateParams& p);

// In-place kernels. `out` must already have the right size.
void l96_tendency_into(const Eigen::VectorXd& x, const SingleScaleParams& p,
                       Eigen::VectorXd& out);
void surrogate_tendency_into(const Eigen::VectorXd& x,
                             const SurrogateParams& p, Eigen::VectorXd& out);
void two_scale_tendency_into(const Eigen::VectorXd& packed,
                             const TwoScaleParams& p, Eigen::VectorXd& out);

template <class F>
concept Tendency = requires(const F& f, const Eigen::VectorXd& x,
                            Eigen::VectorXd& out) {
  f(x, out);
};

using TendencyFn =
    std::function<void(const Eigen::VectorXd&, Eigen::VectorXd&)>;

/// Classical 4th-order Runge-Kutta with reusable stage buffers.
class Rk4Stepper {
 public:
  /// Advances x in place by one step of size dt. Throws IntegrationBlowUp
  /// if the new state has a non-finite entry.
  template <Tendency F>
  void step(const F& f, Eigen::VectorXd& x, double dt) {
    const Eigen::Index n = x.size();
    if (k1_.size() != n) {
      k1_.resize(n);
      k2_.resize(n);
      k3_.resize(n);
      k4_.resize(n);
      work_.resize(n);
    }
    f(x, k1_);
    work_ = x + (0.5 * dt) * k1_;
    f(work_, k2_);
    work_ = x + (0.5 * dt) * k2_;
    f(work_, k3_);
    work_ = x + dt * k3_;
    f(work_, k4_);
    x += (dt / 6.0) * (k1_ + 2.0 * k2_ + 2.0 * k3_ + k4_);
    if (!x.allFinite()) {
      throw IntegrationBlowUp("RK4 step produced a non-finite state", -1);
    }
  }

 private:
  Eigen::VectorXd k1_, k2_, k3_, k4_, work_;
};

template <Tendency F>
Eigen::VectorXd rk4_step(const Eigen::VectorXd& x, double dt, const F& f) {
  if (!(dt > 0.0)) throw std::invalid_argument("rk4_step: dt must be > 0");
  Eigen::VectorXd next = x;
  Rk4Stepper stepper;
  stepper.step(f, next, dt);
  return next;
}

/// States sampled every `stride` integration steps, one column per sample.
struct Trajectory {
  double t0 = 0.0;
  double dt = 0.0;
  int stride = 1;
  Eigen::MatrixXd states;

  Eigen::Index size() const { return states.cols(); }
  Eigen::Index dim() const { return states.rows(); }
  double time(Eigen::Index k) const {
    return t0 + static_cast<double>(k) * stride * dt;
  }
  /// Spacing between stored samples in time units.
  double sample_interval() const { return stride * dt; }
};

/// Integrates n_steps RK4 steps from x0 and keeps every stride-th state,
/// the initial state included: floor(n_steps / stride) + 1 columns.
template <Tendency F>
Trajectory integrate(const Eigen::VectorXd& x0, double dt, long n_steps,
                     const F& f, int stride = 1, double t0 = 0.0) {
  if (!(dt > 0.0)) throw std::invalid_argument("integrate: dt must be > 0");
  if (n_steps < 0) throw std::invalid_argument("integrate: n_steps < 0");
  if (stride < 1) throw std::invalid_argument("integrate: stride < 1");
  Trajectory traj;
  traj.t0 = t0;
  traj.dt = dt;
  traj.stride = stride;
  traj.states.resize(x0.size(), n_steps / stride + 1);
  traj.states.col(0) = x0;
  Eigen::VectorXd x = x0;
  Rk4Stepper stepper;
  for (long k = 1; k <= n_steps; ++k) {
    try {
      stepper.step(f, x, dt);
    } catch (const IntegrationBlowUp&) {
      throw IntegrationBlowUp(
          "integration blew up at step " + std::to_string(k), k);
    }
    if (k % stride == 0) traj.states.col(k / stride) = x;
  }
  return traj;
}

/// A time-discrete model: `substeps` RK4 steps of length dt make one model
/// step. Forecast and filter models use substeps = 1; the two-scale nature
/// model subdivides the slow step for fast-variable stability.
struct Model {
  std::string name;
  Eigen::Index dim = 0;
  TendencyFn tendency;
  double dt = 0.0125;
  int substeps = 1;

  /// Advances x by `steps` model steps.
  void advance(Eigen::VectorXd& x, long steps, Rk4Stepper& stepper) const;
};

Model make_single_scale_model(const SingleScaleParams& p, double dt);
Model make_surrogate_model(const SurrogateParams& p, double dt);
/// Packed two-scale model; one model step is `substeps` RK4 steps of
/// length `dt_fine`.
Model make_two_scale_model(const TwoScaleParams& p, double dt_fine,
                           int substeps);

}  // namespace l96uq::dyn
