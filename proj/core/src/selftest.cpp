#include "l96uq/selftest.hpp"

#include "l96uq/array_file.hpp"
#include "l96uq/assim.hpp"
#include "l96uq/dyncore.hpp"
#include "l96uq/neuralnet.hpp"
#include "l96uq/rng.hpp"
#include "l96uq/verify.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>
#include <sstream>

namespace l96uq::selftest {

namespace {

std::string sci(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(b.cwiseAbs().maxCoeff(), 1e-300);
}

// 1-based cyclic access: at(v, 0) == v[n], at(v, n + 1) == v[1].
double at(const Eigen::VectorXd& v, long i) {
  const long n = v.size();
  return v[((i - 1) % n + n) % n];
}

Eigen::VectorXd naive_l96(const Eigen::VectorXd& x, double f) {
  Eigen::VectorXd d(x.size());
  for (long i = 1; i <= x.size(); ++i) {
    d[i - 1] = -at(x, i - 2) * at(x, i - 1) + at(x, i - 1) * at(x, i + 1) - at(x, i) + f;
  }
  return d;
}

void naive_two_scale(const Eigen::VectorXd& x, const Eigen::VectorXd& y,
                     const dyn::TwoScaleParams& p, Eigen::VectorXd& dx, Eigen::VectorXd& dy) {
  const long s = p.s;
  const long J = p.j_per_x;
  dx.resize(s);
  dy.resize(s * J);
  for (long i = 1; i <= s; ++i) {
    double sum = 0.0;
    for (long j = J * (i - 1) + 1; j <= i * J; ++j) sum += at(y, j);
    dx[i - 1] = -at(x, i - 1) * (at(x, i - 2) - at(x, i + 1)) - at(x, i) + p.forcing -
                p.h * p.c / p.b * sum;
  }
  for (long j = 1; j <= s * J; ++j) {
    dy[j - 1] = -p.c * p.b * at(y, j + 1) * (at(y, j + 2) - at(y, j - 1)) - p.c * at(y, j) +
                p.h * p.c / p.b * at(x, (j - 1) / J + 1);
  }
}

double naive_loss(nn::LossKind kind, const Eigen::MatrixXd& out, const Eigen::MatrixXd& tgt) {
  double total = 0.0;
  for (Eigen::Index k = 0; k < out.cols(); ++k) {
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double o = out(i, k);
      const double t = tgt(i, k);
      switch (kind) {
        case nn::LossKind::MeanMse:
        case nn::LossKind::VarMse: total += (o - t) * (o - t); break;
        case nn::LossKind::VarExt: total += (o - t * t) * (o - t * t); break;
        case nn::LossKind::VarLik: total += std::log(o) + t * t / o; break;
      }
    }
  }
  return total / static_cast<double>(out.cols());
}

}  // namespace

Check tendency_oracles(int states, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  const dyn::SingleScaleParams sp{8, 8.0};
  const dyn::TwoScaleParams tp{8, 32, 20.0, 1.0, 10.0, 10.0};
  const dyn::SurrogateParams gp{{8, 20.0}, 19.16, -0.81};
  double worst[3] = {0.0, 0.0, 0.0};
  for (int k = 0; k < states; ++k) {
    Eigen::VectorXd x(8);
    for (auto& v : x) v = 8.0 + 4.0 * n01(rng);
    worst[0] = std::max(worst[0], rel_err(dyn::l96_tendency(x, sp), naive_l96(x, sp.forcing)));

    dyn::TwoScaleState z{x, Eigen::VectorXd(256)};
    for (auto& v : z.fast) v = 0.5 * n01(rng);
    const dyn::TwoScaleState d = dyn::l96_two_scale_tendency(z, tp);
    Eigen::VectorXd dx;
    Eigen::VectorXd dy;
    naive_two_scale(z.slow, z.fast, tp, dx, dy);
    worst[1] = std::max({worst[1], rel_err(d.slow, dx), rel_err(d.fast, dy)});

    Eigen::VectorXd g = naive_l96(x, gp.base.forcing);
    for (Eigen::Index i = 0; i < 8; ++i) g[i] += gp.alpha * x[i] + gp.beta;
    worst[2] = std::max(worst[2], rel_err(dyn::surrogate_tendency(x, gp), g));
  }
  const double m = std::max({worst[0], worst[1], worst[2]});
  return {"tendency oracles", m < 1e-12,
          "max relative error single " + sci(worst[0]) + ", two-scale " + sci(worst[1]) +
              ", surrogate " + sci(worst[2]) + " over " + std::to_string(states) + " states"};
}

Check rk4_order() {
  const auto f = [](const Eigen::VectorXd& x, Eigen::VectorXd& out) { out = -x; };
  const double dts[3] = {0.05, 0.025, 0.0125};
  double global[3];
  double local[3];
  for (int k = 0; k < 3; ++k) {
    const long n = std::lround(1.0 / dts[k]);
    const dyn::Trajectory tr = dyn::integrate(Eigen::VectorXd::Ones(1), dts[k], n, f, n);
    global[k] = std::abs(tr.states(0, 1) - std::exp(-1.0));
    local[k] = std::abs(dyn::rk4_step(Eigen::VectorXd::Ones(1), dts[k], f)[0] - std::exp(-dts[k]));
  }
  const double r1 = global[0] / global[1];
  const double r2 = global[1] / global[2];
  const bool ok = r1 >= 14.0 && r1 <= 18.0 && r2 >= 14.0 && r2 <= 18.0;
  std::ostringstream d;
  d.precision(4);
  d << "error ratios at t=1: " << r1 << ", " << r2 << " (single-step ratios "
    << local[0] / local[1] << ", " << local[1] / local[2] << ")";
  return {"RK4 order", ok, d.str()};
}

Check letkf_kalman(int problems, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  double worst = 0.0;
  for (int k = 0; k < problems; ++k) {
    const int members = 3 + k % 8;
    da::EnsembleState bg;
    bg.members.resize(2, members);
    for (Eigen::Index j = 0; j < members; ++j) {
      bg.members(0, j) = 1.0 + 1.5 * n01(rng);
      bg.members(1, j) = -0.5 + 0.8 * n01(rng) + 0.4 * bg.members(0, j);
    }
    da::ObsNetwork net;
    net.sigma_r = 0.3 + 0.5 * std::abs(n01(rng));
    da::ObservationRecord obs{0, Eigen::Vector2d(n01(rng), n01(rng))};
    da::FilterConfig fc;
    fc.inflation = 1.0;

    const Eigen::VectorXd xb = bg.mean();
    const Eigen::MatrixXd anom = bg.members.colwise() - xb;
    const Eigen::Matrix2d p = anom * anom.transpose() / (members - 1.0);
    const Eigen::Matrix2d r = net.sigma_r * net.sigma_r * Eigen::Matrix2d::Identity();
    const Eigen::Vector2d kalman = xb + p * (p + r).inverse() * (obs.values - xb);
    for (auto route : {da::TransformRoute::EnsembleSpace, da::TransformRoute::ObservationSpace}) {
      const da::EnsembleState a = da::letkf_update(bg, obs, net, fc, route);
      worst = std::max(worst, (a.mean() - kalman).cwiseAbs().maxCoeff());
    }
  }
  return {"LETKF vs Kalman", worst < 1e-8,
          "max abs mean difference " + sci(worst) + " over " + std::to_string(problems) +
              " problems, both transform routes"};
}

Check gradient_checks(int nets, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  std::uniform_int_distribution<int> width(2, 6);
  double worst = 0.0;
  int runs = 0;
  for (auto kind : {nn::LossKind::MeanMse, nn::LossKind::VarMse, nn::LossKind::VarExt,
                    nn::LossKind::VarLik}) {
    const bool var_head = kind != nn::LossKind::MeanMse;
    for (int k = 0; k < nets; ++k) {
      nn::MlpConfig cfg;
      cfg.layer_sizes = {width(rng), width(rng), width(rng), width(rng)};
      cfg.output_activation = var_head ? nn::Activation::Softplus : nn::Activation::Linear;
      nn::MlpParams p = nn::init_params(cfg, rng);
      for (auto& l : p.layers) {
        for (auto& b : l.bias) b = 0.3 * n01(rng);
      }
      const int batch = 5;
      Eigen::MatrixXd x(cfg.input_size(), batch);
      Eigen::MatrixXd t(cfg.output_size(), batch);
      for (auto& v : x.reshaped()) v = n01(rng);
      for (auto& v : t.reshaped()) v = kind == nn::LossKind::VarMse ? std::abs(n01(rng)) : n01(rng);

      const Eigen::VectorXd g = nn::backward(p, cfg, x, t, kind).flatten();
      Eigen::VectorXd theta = p.flatten();
      Eigen::VectorXd fd(theta.size());
      const double h = 1e-6;
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        const double keep = theta[i];
        theta[i] = keep + h;
        const double up = naive_loss(kind, nn::forward_batch(nn::MlpParams::unflatten(cfg, theta), cfg, x), t);
        theta[i] = keep - h;
        const double dn = naive_loss(kind, nn::forward_batch(nn::MlpParams::unflatten(cfg, theta), cfg, x), t);
        theta[i] = keep;
        fd[i] = (up - dn) / (2.0 * h);
      }
      worst = std::max(worst, (g - fd).cwiseAbs().maxCoeff() / std::max(fd.cwiseAbs().maxCoeff(), 1e-12));
      ++runs;
    }
  }
  return {"gradient checks", worst < 1e-6,
          "max relative discrepancy " + sci(worst) + " over " + std::to_string(runs) +
              " nets (4 losses)"};
}

Check loss_minimizers(int samples, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  int failures = 0;
  for (int k = 0; k < samples; ++k) {
    const double eps = (0.05 + std::abs(n01(rng))) * (k % 2 ? 1.0 : -1.0);
    const double v0 = eps * eps;
    for (int which = 0; which < 2; ++which) {
      auto loss = [&](double v) {
        const Eigen::VectorXd pv = Eigen::VectorXd::Constant(1, v);
        const Eigen::VectorXd e = Eigen::VectorXd::Constant(1, eps);
        return which == 0 ? nn::loss_emse(pv, e) : nn::loss_lik(pv, e);
      };
      auto slope = [&](double v) {
        const double h = 1e-7 * v;
        return (loss(v + h) - loss(v - h)) / (2.0 * h);
      };
      if (!(slope(v0 * 0.99) < 0.0 && slope(v0 * 1.01) > 0.0)) ++failures;
    }
  }
  return {"loss minimizers", failures == 0,
          std::to_string(failures) + " of " + std::to_string(2 * samples) +
              " cases without a sign change at var = eps^2"};
}

Check metric_oracles(long pit_samples, std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  const int s = 8;
  const int m = 500;
  verify::ScoredSet set;
  set.mean.resize(s, m);
  set.sigma.resize(s, m);
  set.reference.resize(s, m);
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index i = 0; i < s; ++i) {
      set.reference(i, k) = n01(rng);
      set.sigma(i, k) = 0.2 + std::abs(n01(rng));
      set.mean(i, k) = set.reference(i, k) + set.sigma(i, k) * n01(rng) * 1.2;
    }
    set.valid_time_index.push_back(k);
  }
  // Naive versions.
  double se = 0.0;
  long inside = 0;
  std::vector<double> sig;
  std::vector<double> err;
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index i = 0; i < s; ++i) {
      const double e = set.mean(i, k) - set.reference(i, k);
      se += e * e;
      if (std::abs(e) < verify::kZ90 * set.sigma(i, k)) ++inside;
      sig.push_back(set.sigma(i, k));
      err.push_back(std::abs(e));
    }
  }
  const double n = static_cast<double>(sig.size());
  const double rmse = std::sqrt(se / n);
  const double cp = static_cast<double>(inside) / n;
  double ms = 0.0;
  double me = 0.0;
  for (std::size_t j = 0; j < sig.size(); ++j) {
    ms += sig[j] / n;
    me += err[j] / n;
  }
  double cov = 0.0;
  double vs = 0.0;
  double ve = 0.0;
  for (std::size_t j = 0; j < sig.size(); ++j) {
    cov += (sig[j] - ms) * (err[j] - me);
    vs += (sig[j] - ms) * (sig[j] - ms);
    ve += (err[j] - me) * (err[j] - me);
  }
  const double corr = cov / std::sqrt(vs * ve);
  std::vector<std::int64_t> counts(10, 0);
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index i = 0; i < s; ++i) {
      const double u = 0.5 * std::erfc(-(set.mean(i, k) - set.reference(i, k)) / set.sigma(i, k) / std::sqrt(2.0));
      ++counts[static_cast<std::size_t>(std::min(9, static_cast<int>(u * 10)))];
    }
  }
  double chi = 0.0;
  for (auto c : counts) chi += (c - n / 10.0) * (c - n / 10.0);
  chi *= 10.0 / n;

  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); };
  const double worst = std::max({rel(verify::rmse(set), rmse),
                                 rel(verify::coverage_probability(set, 0.9), cp),
                                 rel(verify::sigma_error_correlation(set), corr),
                                 rel(verify::pit_chi2(set, 10), chi)});
  const bool hist_equal = verify::pit_histogram(set, 10) == counts;

  // Calibrated PIT flatness.
  verify::ScoredSet cal;
  cal.mean.resize(1, pit_samples);
  cal.sigma.resize(1, pit_samples);
  cal.reference = Eigen::MatrixXd::Zero(1, pit_samples);
  for (long k = 0; k < pit_samples; ++k) {
    cal.sigma(0, k) = 0.5 + std::abs(n01(rng));
    cal.mean(0, k) = cal.sigma(0, k) * n01(rng);
  }
  const auto pit = verify::pit_histogram(cal, 10);
  double dev = 0.0;
  for (auto c : pit) dev = std::max(dev, std::abs(static_cast<double>(c) / pit_samples - 0.1));

  const bool ok = worst < 1e-12 && hist_equal && dev <= 0.01;
  return {"metric oracles", ok,
          "max relative difference " + sci(worst) + (hist_equal ? "" : ", histogram mismatch") +
              "; calibrated PIT max bin deviation " + sci(dev) + " at M=" +
              std::to_string(pit_samples)};
}

Check array_file_roundtrip(std::uint64_t seed) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  io::Array a;
  a.dims = {3, 4, 5};
  for (int k = 0; k < 60; ++k) a.data.push_back(n01(rng) * 1e3);
  a.data[7] = -0.0;
  a.data[8] = std::numeric_limits<double>::denorm_min();
  const std::string bytes = io::encode_array(a);
  const io::Array b = io::decode_array(bytes);
  const bool same = b.dims == a.dims &&
                    std::memcmp(a.data.data(), b.data.data(), 8 * a.data.size()) == 0 &&
                    io::encode_array(b) == bytes;
  bool rejected = false;
  std::string corrupt = bytes;
  corrupt[0] = 'X';
  try {
    (void)io::decode_array(corrupt);
  } catch (const io::ArrayFileError&) {
    rejected = true;
  }
  return {"array file round trip", same && rejected,
          std::string(same ? "bit-exact" : "MISMATCH") +
              (rejected ? ", corrupted magic rejected" : ", corrupted magic ACCEPTED")};
}

std::vector<Check> run_all() {
  return {tendency_oracles(), rk4_order(),          letkf_kalman(),
          gradient_checks(),  loss_minimizers(),    metric_oracles(),
          array_file_roundtrip()};
}

}  // namespace l96uq::selftest
