#include "l96uq/neuralnet.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

namespace {

using namespace l96uq;
using namespace l96uq::nn;

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed,
                              double scale = 1.0) {
  Rng rng{seed};
  std::normal_distribution<double> n01;
  Eigen::MatrixXd m(r, c);
  for (auto& v : m.reshaped()) v = scale * n01(rng);
  return m;
}

MlpConfig small_net(Activation head = Activation::Linear) {
  MlpConfig c;
  c.layer_sizes = {6, 7, 5, 3};
  c.output_activation = head;
  return c;
}

double naive_softplus(double x) { return std::log(1.0 + std::exp(x)); }

TEST(Softplus, ClosedFormValues) {
  EXPECT_DOUBLE_EQ(softplus(0.0), 0.6931471805599453);
  EXPECT_NEAR(softplus(100.0), 100.0, 1e-12);
  EXPECT_NEAR(softplus(-100.0) / std::exp(-100.0), 1.0, 1e-6);
  for (double x = -20.0; x <= 20.0; x += 0.5) {
    EXPECT_NEAR(softplus(x), naive_softplus(x), 1e-13 * std::max(1.0, naive_softplus(x)));
  }
}

TEST(Softplus, DerivativeIsLogistic) {
  for (double x : {-30.0, -2.0, 0.0, 0.3, 5.0, 40.0}) {
    const double h = 1e-6;
    EXPECT_NEAR(logistic(x), (softplus(x + h) - softplus(x - h)) / (2 * h), 1e-8);
  }
  EXPECT_DOUBLE_EQ(logistic(0.0), 0.5);
}

TEST(Forward, ZeroNetworkGivesZeroOutput) {
  const MlpConfig c = small_net();
  const MlpParams p = MlpParams::zeros(c);
  EXPECT_EQ(forward(p, c, Eigen::VectorXd::LinSpaced(6, -3.0, 3.0)), Eigen::VectorXd::Zero(3));
}

TEST(Forward, IdentityLayerPassesInputThrough) {
  MlpConfig c;
  c.layer_sizes = {4, 4, 4};
  c.hidden_activation = Activation::Linear;
  MlpParams p = MlpParams::zeros(c);
  p.layers[0].weight.setIdentity();
  p.layers[1].weight.setIdentity();
  const Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  EXPECT_EQ(forward(p, c, x), x);
}

TEST(Forward, MatchesNaiveMatrixMultiplyOracle) {
  const MlpConfig c = small_net();
  Rng rng{11};
  const MlpParams p = init_params(c, rng);
  const Eigen::MatrixXd x = random_matrix(6, 9, 12);
  const Eigen::MatrixXd y = forward_batch(p, c, x);
  for (Eigen::Index s = 0; s < x.cols(); ++s) {
    std::vector<double> a(x.col(s).data(), x.col(s).data() + 6);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      const auto& w = p.layers[l].weight;
      std::vector<double> z(static_cast<std::size_t>(w.rows()));
      for (Eigen::Index i = 0; i < w.rows(); ++i) {
        double acc = p.layers[l].bias[i];
        for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * a[static_cast<std::size_t>(j)];
        z[static_cast<std::size_t>(i)] = l + 1 < p.layers.size() ? naive_softplus(acc) : acc;
      }
      a = z;
    }
    for (Eigen::Index i = 0; i < 3; ++i) {
      EXPECT_NEAR(y(i, s), a[static_cast<std::size_t>(i)], 1e-12 * std::max(1.0, std::abs(y(i, s))));
    }
    EXPECT_EQ(forward(p, c, x.col(s)), y.col(s));
  }
}

TEST(Forward, RejectsWrongInputSize) {
  const MlpConfig c = small_net();
  EXPECT_THROW(forward(MlpParams::zeros(c), c, Eigen::VectorXd::Zero(5)), std::invalid_argument);
}

TEST(Params, InitIsGlorotUniformWithZeroBias) {
  MlpConfig c;
  c.layer_sizes = {40, 60, 8};
  Rng rng{3};
  const MlpParams p = init_params(c, rng);
  const double limit = std::sqrt(6.0 / 100.0);
  EXPECT_LE(p.layers[0].weight.cwiseAbs().maxCoeff(), limit);
  EXPECT_GT(p.layers[0].weight.cwiseAbs().maxCoeff(), 0.9 * limit);
  EXPECT_EQ(p.layers[0].bias, Eigen::VectorXd::Zero(60));
  EXPECT_EQ(c.parameter_count(), 40 * 60 + 60 + 60 * 8 + 8);
}

TEST(Params, FlattenRoundTrip) {
  const MlpConfig c = small_net();
  Rng rng{4};
  const MlpParams p = init_params(c, rng);
  const Eigen::VectorXd flat = p.flatten();
  EXPECT_EQ(flat.size(), c.parameter_count());
  EXPECT_EQ(MlpParams::unflatten(c, flat).flatten(), flat);
  EXPECT_THROW(MlpParams::unflatten(c, flat.head(5)), std::invalid_argument);
}

TEST(Losses, MseMean) {
  const Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(8, 0.0, 7.0);
  EXPECT_EQ(loss_mse_mean(t, t), 0.0);
  EXPECT_EQ(loss_mse_mean(t.array() + 1.0, t), 8.0);
  const Eigen::VectorXd a = random_matrix(8, 1, 1), b = random_matrix(8, 1, 2);
  double ref = 0.0;
  for (int i = 0; i < 8; ++i) ref += (a[i] - b[i]) * (a[i] - b[i]);
  EXPECT_NEAR(loss_mse_mean(a, b), ref, 1e-12);
}

TEST(Losses, MseVariance) {
  const Eigen::VectorXd v = Eigen::VectorXd::Constant(8, 2.0);
  EXPECT_EQ(loss_mse_var(v, v), 0.0);
  Eigen::VectorXd w = v;
  w[0] += 2.0;
  EXPECT_EQ(loss_mse_var(w, v), 4.0);
}

TEST(Losses, ErrorMse) {
  const Eigen::VectorXd eps = Eigen::VectorXd::LinSpaced(8, -2.0, 1.5);
  EXPECT_NEAR(loss_emse(eps.array().square(), eps), 0.0, 1e-15);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(8, 0.1, 0.8);
  EXPECT_NEAR(loss_emse(v, Eigen::VectorXd::Zero(8)), v.squaredNorm(), 1e-15);
  double ref = 0.0;
  for (int i = 0; i < 8; ++i) ref += std::pow(v[i] - eps[i] * eps[i], 2);
  EXPECT_NEAR(loss_emse(v, eps), ref, 1e-12);
}

TEST(Losses, Likelihood) {
  EXPECT_EQ(loss_lik(Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1)), 0.0);
  const double e = std::exp(1.0);
  EXPECT_NEAR(loss_lik(Eigen::VectorXd::Constant(1, e), Eigen::VectorXd::Constant(1, std::sqrt(e))),
              2.0, 1e-15);
  EXPECT_THROW(loss_lik(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1)), std::invalid_argument);
  // d/dv (ln v + e^2 / v) = 1/v - e^2/v^2 vanishes at v = e^2.
  const double eps = 1.7, v = eps * eps, h = 1e-6;
  const Eigen::VectorXd ev = Eigen::VectorXd::Constant(1, eps);
  const double slope = (loss_lik(Eigen::VectorXd::Constant(1, v + h), ev) -
                        loss_lik(Eigen::VectorXd::Constant(1, v - h), ev)) /
                       (2 * h);
  EXPECT_NEAR(slope, 0.0, 1e-8);
}

TEST(Losses, BatchLossAveragesOverColumns) {
  const Eigen::MatrixXd out = random_matrix(3, 4, 5);
  const Eigen::MatrixXd tgt = random_matrix(3, 4, 6);
  double sum = 0.0;
  for (int k = 0; k < 4; ++k) sum += loss_mse_mean(out.col(k), tgt.col(k));
  EXPECT_NEAR(batch_loss(LossKind::MeanMse, out, tgt), sum / 4.0, 1e-14);
}

class GradientTest : public ::testing::TestWithParam<LossKind> {};

TEST_P(GradientTest, MatchesCentralDifferences) {
  const LossKind kind = GetParam();
  const bool variance = kind != LossKind::MeanMse;
  const MlpConfig c = small_net(variance ? Activation::Softplus : Activation::Linear);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng{100 + seed};
    const MlpParams p = init_params(c, rng);
    const Eigen::MatrixXd x = random_matrix(6, 5, 200 + seed);
    Eigen::MatrixXd t = random_matrix(3, 5, 300 + seed);
    if (kind == LossKind::VarMse) t = t.cwiseAbs();
    const Eigen::VectorXd g = backward(p, c, x, t, kind).flatten();
    const Eigen::VectorXd theta = p.flatten();
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Eigen::VectorXd up = theta, dn = theta;
      up[i] += h;
      dn[i] -= h;
      const double fd =
          (batch_loss(kind, forward_batch(MlpParams::unflatten(c, up), c, x), t) -
           batch_loss(kind, forward_batch(MlpParams::unflatten(c, dn), c, x), t)) /
          (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i])));
    }
    EXPECT_LT(worst, 1e-6) << "seed " << seed;
  }
}

std::string loss_name(const ::testing::TestParamInfo<LossKind>& info) {
  switch (info.param) {
    case LossKind::MeanMse: return "MeanMse";
    case LossKind::VarMse: return "VarMse";
    case LossKind::VarExt: return "VarExt";
    case LossKind::VarLik: return "VarLik";
  }
  return "Unknown";
}

INSTANTIATE_TEST_SUITE_P(Losses, GradientTest,
                         ::testing::Values(LossKind::MeanMse, LossKind::VarMse, LossKind::VarExt,
                                           LossKind::VarLik),
                         loss_name);

TEST(Backward, ZeroResidualGivesZeroOutputBiasGradient) {
  const MlpConfig c = small_net();
  Rng rng{7};
  const MlpParams p = init_params(c, rng);
  const Eigen::MatrixXd x = random_matrix(6, 4, 8);
  double loss = -1.0;
  const MlpParams g = backward(p, c, x, forward_batch(p, c, x), LossKind::MeanMse, &loss);
  EXPECT_NEAR(loss, 0.0, 1e-28);
  EXPECT_LT(g.layers.back().bias.cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Backward, DoublingResidualsScalesLossAndGradient) {
  const MlpConfig c = small_net();
  Rng rng{9};
  const MlpParams p = init_params(c, rng);
  const Eigen::MatrixXd x = random_matrix(6, 4, 10);
  const Eigen::MatrixXd y = forward_batch(p, c, x);
  const Eigen::MatrixXd r = random_matrix(3, 4, 11);
  double l1 = 0.0, l2 = 0.0;
  const Eigen::VectorXd g1 = backward(p, c, x, y - r, LossKind::MeanMse, &l1).flatten();
  const Eigen::VectorXd g2 = backward(p, c, x, y - 2.0 * r, LossKind::MeanMse, &l2).flatten();
  EXPECT_NEAR(l2, 4.0 * l1, 1e-12 * l2);
  EXPECT_LT((g2 - 2.0 * g1).norm(), 1e-12 * g2.norm());
}

TEST(Backward, NonFiniteGradientThrows) {
  const MlpConfig c = small_net();
  MlpParams p = MlpParams::zeros(c);
  p.layers[0].weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(backward(p, c, random_matrix(6, 2, 1), random_matrix(3, 2, 2), LossKind::MeanMse),
               NonFiniteError);
}

/// Effectively one parameter: with zero input and zero weights the output
/// is the output bias b, so the batch loss against 0 is b^2 and every other
/// gradient vanishes.
struct Scalar {
  MlpConfig cfg;
  MlpParams params;
  explicit Scalar(double w0) {
    cfg.layer_sizes = {1, 1, 1};
    cfg.hidden_activation = Activation::Linear;
    params = MlpParams::zeros(cfg);
    params.layers[1].bias[0] = w0;
  }
  MlpParams grad_of(double g) const {
    MlpParams out = MlpParams::zeros(cfg);
    out.layers[1].bias[0] = g;
    return out;
  }
  double value() const { return params.layers[1].bias[0]; }
};

TEST(Adam, FirstStepMovesByLearningRate) {
  Scalar s(0.5);
  AdamState st = AdamState::for_params(s.params, 1e-3, 0.0);
  adam_step(st, s.params, s.grad_of(1.0));
  EXPECT_NEAR(s.value(), 0.5 - 1e-3, 1e-6);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  const MlpConfig c = small_net();
  Rng rng{1};
  MlpParams p = init_params(c, rng);
  const Eigen::VectorXd before = p.flatten();
  AdamState st = AdamState::for_params(p, 1e-2, 0.0);
  for (int k = 0; k < 5; ++k) adam_step(st, p, MlpParams::zeros(c));
  EXPECT_EQ(p.flatten(), before);
}

TEST(Adam, MatchesReferenceRecursionOnQuadratic) {
  Scalar s(1.0);
  AdamState st = AdamState::for_params(s.params, 1e-2, 0.0);
  double w = 1.0, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 1e-2;
  for (int t = 1; t <= 100; ++t) {
    // Gradient of f(w) = w^2 through the network's own backward pass.
    const MlpParams g = backward(s.params, s.cfg, Eigen::MatrixXd::Zero(1, 1),
                                 Eigen::MatrixXd::Zero(1, 1), LossKind::MeanMse);
    adam_step(st, s.params, g);
    const double grad = 2.0 * w;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    w -= lr * mh / (std::sqrt(vh) + eps);
    ASSERT_NEAR(s.value(), w, 1e-12) << "step " << t;
  }
  EXPECT_LT(std::abs(w), 1.0);
}

TEST(Adam, DecoupledDecayShrinksBeforeUpdate) {
  Scalar s(2.0);
  AdamState st = AdamState::for_params(s.params, 0.1, 0.5);
  adam_step(st, s.params, s.grad_of(0.0));
  EXPECT_NEAR(s.value(), 2.0 * (1.0 - 0.1 * 0.5), 1e-15);
}

TEST(Adam, CoupledDecayAddsToGradient) {
  Scalar s(2.0);
  AdamState st = AdamState::for_params(s.params, 0.1, 0.5, WeightDecayMode::CoupledL2);
  adam_step(st, s.params, s.grad_of(0.0));
  // Gradient wd * w = 1 > 0, so the first step is -lr.
  EXPECT_NEAR(s.value(), 2.0 - 0.1, 1e-6);
}

}  // namespace
