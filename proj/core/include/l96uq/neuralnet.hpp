#pragma once

#include "l96uq/rng.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

/// Dense networks with softplus hidden layers, the four training losses,
/// reverse-mode gradients and the Adam optimizer.
///
/// Batches are column-major: one sample per column.
namespace l96uq::nn {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Activation { Linear, Softplus };

struct MlpConfig {
  /// Input, hidden..., output.
  std::vector<int> layer_sizes;
  Activation hidden_activation = Activation::Softplus;
  Activation output_activation = Activation::Linear;

  void validate() const;
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  Eigen::Index parameter_count() const;
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  /// Layer by layer: weight (column-major) then bias.
  Eigen::VectorXd flatten() const;
  static MlpParams unflatten(const MlpConfig& cfg, const Eigen::VectorXd& flat);
  static MlpParams zeros(const MlpConfig& cfg);
  bool all_finite() const;
  void check_shapes(const MlpConfig& cfg) const;
};

/// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
MlpParams init_params(const MlpConfig& cfg, Rng& rng);

/// ln(1 + e^x) as max(x, 0) + ln(1 + e^-|x|).
double softplus(double x) noexcept;
/// d softplus / dx = logistic(x).
double logistic(double x) noexcept;

Eigen::VectorXd forward(const MlpParams& net, const MlpConfig& cfg,
                        const Eigen::VectorXd& input);
Eigen::MatrixXd forward_batch(const MlpParams& net, const MlpConfig& cfg,
                              const Eigen::MatrixXd& inputs);

// Per-sample losses; each sums over the state components.

/// (pred - target)^T (pred - target).
double loss_mse_mean(const Eigen::VectorXd& pred, const Eigen::VectorXd& target);
/// Sum of (pred_var - ens_var)^2.
double loss_mse_var(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& ens_var);
/// Sum of (pred_var - eps^2)^2 with elementwise squares.
double loss_emse(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& eps);
/// Sum of ln(pred_var) + eps^2 / pred_var. Throws on pred_var <= 0.
double loss_lik(const Eigen::VectorXd& pred_var, const Eigen::VectorXd& eps);

enum class LossKind {
  MeanMse,   ///< mean network against the analysis (or truth) target
  VarMse,    ///< variance network against the ensemble variance
  VarExt,    ///< variance network against eps^2 of the frozen mean network
  VarLik,    ///< Gaussian negative log-likelihood of eps
};

std::string to_string(LossKind kind);

/// Mean over columns of the per-sample loss. For VarExt and VarLik the
/// target columns are the error proxies eps, not eps^2.
double batch_loss(LossKind kind, const Eigen::MatrixXd& outputs,
                  const Eigen::MatrixXd& targets);

/// Exact gradient of batch_loss(kind, forward_batch(net, inputs), targets)
/// with respect to every parameter. The loss value is written to
/// `loss_out` when non-null. Throws NonFiniteError on a non-finite gradient.
MlpParams backward(const MlpParams& net, const MlpConfig& cfg,
                   const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                   LossKind kind, double* loss_out = nullptr);

enum class WeightDecayMode {
  Decoupled,  ///< params *= (1 - lr * wd) before the Adam update
  CoupledL2,  ///< grad += wd * params
};

struct AdamState {
  MlpParams m;
  MlpParams v;
  long t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  WeightDecayMode decay_mode = WeightDecayMode::Decoupled;

  static AdamState for_params(const MlpParams& params, double lr,
                              double weight_decay,
                              WeightDecayMode mode = WeightDecayMode::Decoupled);
};

/// One bias-corrected Adam update of params in place.
void adam_step(AdamState& state, MlpParams& params, const MlpParams& grads);

}  // namespace l96uq::nn
