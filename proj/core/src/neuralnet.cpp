#include "l96uq/neuralnet.hpp"

#include <cmath>
#include <random>

namespace l96uq::nn {

void MlpConfig::validate() const {
  if (layer_sizes.size() < 3) {
    throw std::invalid_argument("MlpConfig: need input, at least one hidden and an output layer");
  }
  for (int n : layer_sizes) {
    if (n < 1) throw std::invalid_argument("MlpConfig: layer sizes must be >= 1");
  }
}

Eigen::Index MlpConfig::parameter_count() const {
  Eigen::Index n = 0;
  for (std::size_t l = 1; l < layer_sizes.size(); ++l) {
    n += Eigen::Index{layer_sizes[l]} * (layer_sizes[l - 1] + 1);
  }
  return n;
}

Eigen::VectorXd MlpParams::flatten() const {
  Eigen::Index n = 0;
  for (const auto& L : layers) n += L.weight.size() + L.bias.size();
  Eigen::VectorXd flat(n);
  Eigen::Index pos = 0;
  for (const auto& L : layers) {
    flat.segment(pos, L.weight.size()) = L.weight.reshaped();
    pos += L.weight.size();
    flat.segment(pos, L.bias.size()) = L.bias;
    pos += L.bias.size();
  }
  return flat;
}

MlpParams MlpParams::unflatten(const MlpConfig& cfg, const Eigen::VectorXd& flat) {
  cfg.validate();
  if (flat.size() != cfg.parameter_count()) {
    throw std::invalid_argument("MlpParams::unflatten: expected " +
                                std::to_string(cfg.parameter_count()) + " values, got " +
                                std::to_string(flat.size()));
  }
  MlpParams p = zeros(cfg);
  Eigen::Index pos = 0;
  for (auto& L : p.layers) {
    L.weight.reshaped() = flat.segment(pos, L.weight.size());
    pos += L.weight.size();
    L.bias = flat.segment(pos, L.bias.size());
    pos += L.bias.size();
  }
  return p;
}

MlpParams MlpParams::zeros(const MlpConfig& cfg) {
  MlpParams p;
  for (std::size_t l = 1; l < cfg.layer_sizes.size(); ++l) {
    p.layers.push_back({Eigen::MatrixXd::Zero(cfg.layer_sizes[l], cfg.layer_sizes[l - 1]),
                        Eigen::VectorXd::Zero(cfg.layer_sizes[l])});
  }
  return p;
}

bool MlpParams::all_finite() const {
  for (const auto& L : layers) {
    if (!L.weight.allFinite() || !L.bias.allFinite()) return false;
  }
  return true;
}

void MlpParams::check_shapes(const MlpConfig& cfg) const {
  if (layers.size() + 1 != cfg.layer_sizes.size()) {
    throw std::invalid_argument("MlpParams: layer count does not match config");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].weight.rows() != cfg.layer_sizes[l + 1] ||
        layers[l].weight.cols() != cfg.layer_sizes[l] ||
        layers[l].bias.size() != cfg.layer_sizes[l + 1]) {
      throw std::invalid_argument("MlpParams: shape mismatch in layer " + std::to_string(l));
    }
  }
}

MlpParams init_params(const MlpConfig& cfg, Rng& rng) {
  MlpParams p = MlpParams::zeros(cfg);
  for (auto& L : p.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(L.weight.rows() + L.weight.cols()));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index j = 0; j < L.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < L.weight.rows(); ++i) L.weight(i, j) = u(rng);
    }
  }
  return p;
}

double softplus(double x) noexcept {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

double logistic(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

// Same arithmetic as the scalar softplus(), vectorized.
void apply(Activation act, Eigen::MatrixXd& z) {
  if (act == Activation::Softplus) {
    z = z.array().max(0.0) + (-z.array().abs()).exp().log1p();
  }
}

Activation layer_activation(const MlpConfig& cfg, std::size_t l, std::size_t n_layers) {
  return l + 1 == n_layers ? cfg.output_activation : cfg.hidden_activation;
}

void check_input(const MlpConfig& cfg, Eigen::Index rows) {
  if (rows != cfg.input_size()) {
    throw std::invalid_argument("forward: input has " + std::to_string(rows) +
                                " rows, network expects " + std::to_string(cfg.input_size()));
  }
}

void check_pair(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": size mismatch");
}

}  // namespace

Eigen::MatrixXd forward_batch(const MlpParams& net, const MlpConfig& cfg,
                              const Eigen::MatrixXd& inputs) {
  check_input(cfg, inputs.rows());
  Eigen::MatrixXd a = inputs;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Eigen::MatrixXd z = net.layers[l].weight * a;
    z.colwise() += net.layers[l].bias;
    apply(layer_activation(cfg, l, net.layers.size()), z);
    a = std::move(z);
  }
  return a;
}

Eigen::VectorXd forward(const MlpParams& net, const MlpConfig& cfg,
                        const Eigen::VectorXd& input) {
  return forward_batch(net, cfg, input);
}

double loss_mse_mean(const Eigen::VectorXd& pred, const Eigen::VectorXd& target) {
  check_pair(pred, target, "loss_mse_mean");
  return (pred - target).squaredNorm();
}

double loss_mse_var(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& ens_var) {
  check_pair(pred_var, ens_var, "loss_mse_var");
  return (pred_var - ens_var).squaredNorm();
}

double loss_emse(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& eps) {
  check_pair(pred_var, eps, "loss_emse");
  return (pred_var.array() - eps.array().square()).matrix().squaredNorm();
}

double loss_lik(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& eps) {
  check_pair(pred_var, eps, "loss_lik");
  if (!(pred_var.array() > 0.0).all()) {
    throw std::invalid_argument("loss_lik: predicted variance must be > 0");
  }
  return (pred_var.array().log() + eps.array().square() / pred_var.array()).sum();
}

std::string to_string(LossKind kind) {
  switch (kind) {
    case LossKind::MeanMse: return "mean-mse";
    case LossKind::VarMse: return "nn-mse";
    case LossKind::VarExt: return "nn-ext";
    case LossKind::VarLik: return "nn-lik";
  }
  return "unknown";
}

namespace {

// Returns per-batch loss and fills dL/doutput for the batch-mean loss.
double loss_and_output_grad(LossKind kind, const Eigen::MatrixXd& y,
                            const Eigen::MatrixXd& t, Eigen::MatrixXd* grad) {
  if (y.rows() != t.rows() || y.cols() != t.cols()) {
    throw std::invalid_argument("batch_loss: output/target shape mismatch");
  }
  const double inv_b = 1.0 / static_cast<double>(y.cols());
  switch (kind) {
    case LossKind::MeanMse:
    case LossKind::VarMse: {
      const Eigen::MatrixXd r = y - t;
      if (grad) *grad = (2.0 * inv_b) * r;
      return r.squaredNorm() * inv_b;
    }
    case LossKind::VarExt: {
      const Eigen::MatrixXd r = y - t.cwiseProduct(t);
      if (grad) *grad = (2.0 * inv_b) * r;
      return r.squaredNorm() * inv_b;
    }
    case LossKind::VarLik: {
      if (!(y.array() > 0.0).all()) {
        throw NonFiniteError("likelihood loss: predicted variance underflowed to 0");
      }
      const Eigen::ArrayXXd e2 = t.array().square();
      if (grad) *grad = (inv_b * (1.0 / y.array() - e2 / y.array().square())).matrix();
      return (y.array().log() + e2 / y.array()).sum() * inv_b;
    }
  }
  throw std::invalid_argument("unknown loss kind");
}

}  // namespace

double batch_loss(LossKind kind, const Eigen::MatrixXd& outputs,
                  const Eigen::MatrixXd& targets) {
  return loss_and_output_grad(kind, outputs, targets, nullptr);
}

MlpParams backward(const MlpParams& net, const MlpConfig& cfg,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                   LossKind kind, double* loss_out) {
  check_input(cfg, inputs.rows());
  const std::size_t n_layers = net.layers.size();
  // Activations a_l (a_0 = inputs) and, for softplus layers, exp(-|z_l|),
  // which gives both softplus(z) and its derivative logistic(z).
  std::vector<Eigen::MatrixXd> a(n_layers + 1);
  std::vector<Eigen::MatrixXd> z(n_layers);
  std::vector<Eigen::MatrixXd> e(n_layers);
  a[0] = inputs;
  for (std::size_t l = 0; l < n_layers; ++l) {
    z[l].noalias() = net.layers[l].weight * a[l];
    z[l].colwise() += net.layers[l].bias;
    if (layer_activation(cfg, l, n_layers) == Activation::Softplus) {
      e[l] = (-z[l].array().abs()).exp().matrix();
      a[l + 1] = z[l].array().max(0.0) + e[l].array().log1p();
    } else {
      a[l + 1] = z[l];
    }
  }

  Eigen::MatrixXd delta;
  const double loss = loss_and_output_grad(kind, a[n_layers], targets, &delta);
  if (loss_out) *loss_out = loss;

  MlpParams grads;
  grads.layers.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    if (layer_activation(cfg, l, n_layers) == Activation::Softplus) {
      delta.array() *= (z[l].array() >= 0.0)
                           .select(1.0 / (1.0 + e[l].array()), e[l].array() / (1.0 + e[l].array()));
    }
    grads.layers[l].weight.noalias() = delta * a[l].transpose();
    grads.layers[l].bias = delta.rowwise().sum();
    if (l > 0) delta = (net.layers[l].weight.transpose() * delta).eval();
  }
  if (!grads.all_finite()) throw NonFiniteError("backward: non-finite gradient");
  return grads;
}

AdamState AdamState::for_params(const MlpParams& params, double lr,
                                double weight_decay, WeightDecayMode mode) {
  AdamState s;
  s.m = params;
  s.v = params;
  for (auto& L : s.m.layers) {
    L.weight.setZero();
    L.bias.setZero();
  }
  s.v = s.m;
  s.lr = lr;
  s.weight_decay = weight_decay;
  s.decay_mode = mode;
  return s;
}

namespace {

template <class Param>
void adam_update(Param& p, const Param& g_raw, Param& m, Param& v, const AdamState& s,
                 double bc1, double bc2) {
  if (s.decay_mode == WeightDecayMode::Decoupled) {
    if (s.weight_decay != 0.0) p *= (1.0 - s.lr * s.weight_decay);
    m = s.beta1 * m + (1.0 - s.beta1) * g_raw;
    v = s.beta2 * v + (1.0 - s.beta2) * g_raw.cwiseProduct(g_raw);
  } else {
    const Param g = g_raw + s.weight_decay * p;
    m = s.beta1 * m + (1.0 - s.beta1) * g;
    v = s.beta2 * v + (1.0 - s.beta2) * g.cwiseProduct(g);
  }
  p.array() -= s.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + s.eps);
}

}  // namespace

void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads) {
  if (grads.layers.size() != params.layers.size() ||
      state.m.layers.size() != params.layers.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state layer mismatch");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    adam_update(params.layers[l].weight, grads.layers[l].weight, state.m.layers[l].weight,
                state.v.layers[l].weight, state, bc1, bc2);
    adam_update(params.layers[l].bias, grads.layers[l].bias, state.m.layers[l].bias,
                state.v.layers[l].bias, state, bc1, bc2);
  }
}

}  // namespace l96uq::nn
