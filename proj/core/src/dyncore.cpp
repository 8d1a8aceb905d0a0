#include "l96uq/dyncore.hpp"

#include <string>

namespace l96uq::dyn {

namespace {

void require_size(const Eigen::VectorXd& v, Eigen::Index n, const char* what) {
  if (v.size() != n) {
    throw DimensionError(std::string(what) + ": expected length " +
                         std::to_string(n) + ", got " +
                         std::to_string(v.size()));
  }
}

// Advection -x[i-1] * (x[i-2] - x[i+1]) - x[i] + forcing, cyclic.
inline void single_scale_core(const double* x, int s, double forcing,
                              double* out) {
  for (int i = 0; i < s; ++i) {
    const int im2 = (i + s - 2) % s;
    const int im1 = (i + s - 1) % s;
    const int ip1 = (i + 1) % s;
    out[i] = -x[im1] * (x[im2] - x[ip1]) - x[i] + forcing;
  }
}

}  // namespace

void SingleScaleParams::validate() const {
  if (s < 4) throw std::invalid_argument("L96 needs s >= 4");
}

void TwoScaleParams::validate() const {
  if (s < 4) throw std::invalid_argument("two-scale L96 needs s >= 4");
  if (j_per_x < 1) throw std::invalid_argument("two-scale L96 needs J >= 1");
  if (!(c > 0.0)) throw std::invalid_argument("two-scale L96 needs c > 0");
  if (b == 0.0) throw std::invalid_argument("two-scale L96 needs b != 0");
}

Eigen::VectorXd pack(const TwoScaleState& z) {
  Eigen::VectorXd packed(z.slow.size() + z.fast.size());
  packed << z.slow, z.fast;
  return packed;
}

TwoScaleState unpack(const Eigen::VectorXd& packed, const TwoScaleParams& p) {
  require_size(packed, p.s + p.fast_size(), "unpack");
  return {packed.head(p.s), packed.tail(p.fast_size())};
}

void l96_tendency_into(const Eigen::VectorXd& x, const SingleScaleParams& p,
                       Eigen::VectorXd& out) {
  single_scale_core(x.data(), p.s, p.forcing, out.data());
}

void surrogate_tendency_into(const Eigen::VectorXd& x,
                             const SurrogateParams& p, Eigen::VectorXd& out) {
  const int s = p.base.s;
  single_scale_core(x.data(), s, p.base.forcing + p.beta, out.data());
  for (int i = 0; i < s; ++i) out[i] += p.alpha * x[i];
}

void two_scale_tendency_into(const Eigen::VectorXd& packed,
                             const TwoScaleParams& p, Eigen::VectorXd& out) {
  const int s = p.s;
  const int J = p.j_per_x;
  const int n = s * J;
  const double* x = packed.data();
  const double* y = packed.data() + s;
  double* dx = out.data();
  double* dy = out.data() + s;
  const double coupling = p.h * p.c / p.b;
  const double cb = p.c * p.b;

  single_scale_core(x, s, p.forcing, dx);
  for (int i = 0; i < s; ++i) {
    double sum = 0.0;
    for (int j = i * J; j < (i + 1) * J; ++j) sum += y[j];
    dx[i] -= coupling * sum;
  }
  for (int j = 0; j < n; ++j) {
    const int jp1 = (j + 1) % n;
    const int jp2 = (j + 2) % n;
    const int jm1 = (j + n - 1) % n;
    dy[j] = -cb * y[jp1] * (y[jp2] - y[jm1]) - p.c * y[j] +
            coupling * x[j / J];
  }
}

StateVector l96_tendency(const StateVector& x, const SingleScaleParams& p) {
  p.validate();
  require_size(x, p.s, "l96_tendency");
  StateVector out(p.s);
  l96_tendency_into(x, p, out);
  return out;
}

TwoScaleState l96_two_scale_tendency(const TwoScaleState& z,
                                     const TwoScaleParams& p) {
  p.validate();
  require_size(z.slow, p.s, "l96_two_scale_tendency (slow)");
  require_size(z.fast, p.fast_size(), "l96_two_scale_tendency (fast)");
  const Eigen::VectorXd packed = pack(z);
  Eigen::VectorXd out(packed.size());
  two_scale_tendency_into(packed, p, out);
  return unpack(out, p);
}

StateVector surrogate_tendency(const StateVector& x, const SurrogateParams& p) {
  p.validate();
  require_size(x, p.base.s, "surrogate_tendency");
  StateVector out(p.base.s);
  surrogate_tendency_into(x, p, out);
  return out;
}

void Model::advance(Eigen::VectorXd& x, long steps,
                    Rk4Stepper& stepper) const {
  for (long k = 0; k < steps; ++k) {
    for (int sub = 0; sub < substeps; ++sub) {
      try {
        stepper.step(tendency, x, dt);
      } catch (const IntegrationBlowUp&) {
        throw IntegrationBlowUp(name + " blew up at model step " +
                                    std::to_string(k + 1),
                                k + 1);
      }
    }
  }
}

Model make_single_scale_model(const SingleScaleParams& p, double dt) {
  p.validate();
  return Model{"l96", p.s,
               [p](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
                 l96_tendency_into(x, p, out);
               },
               dt, 1};
}

Model make_surrogate_model(const SurrogateParams& p, double dt) {
  p.validate();
  return Model{"l96-surrogate", p.base.s,
               [p](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
                 surrogate_tendency_into(x, p, out);
               },
               dt, 1};
}

Model make_two_scale_model(const TwoScaleParams& p, double dt_fine,
                           int substeps) {
  p.validate();
  if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
  return Model{"l96-two-scale", p.s + p.fast_size(),
               [p](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
                 two_scale_tendency_into(x, p, out);
               },
               dt_fine, substeps};
}

}  // namespace l96uq::dyn
