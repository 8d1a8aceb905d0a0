#pragma once

#include "l96uq/forecastgen.hpp"
#include "l96uq/neuralnet.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

/// Two-stage training: the mean network first, then a variance network
/// against a frozen mean network, each with periodic validation, early
/// stopping and a learning-rate x weight-decay sweep.
namespace l96uq::nn {

enum class VarianceStrategy { NnMse, NnExt, NnLik };

std::string to_string(VarianceStrategy s);
VarianceStrategy strategy_from_string(const std::string& text);
LossKind loss_kind(VarianceStrategy s);

/// What the mean network is regressed onto.
enum class TargetSource { Analysis, Truth };

std::string to_string(TargetSource t);
TargetSource target_from_string(const std::string& text);

struct TrainConfig {
  int batch_size = 50;
  int eval_every_epochs = 20;
  /// Consecutive non-improving validation evaluations before stopping.
  int patience = 3;
  int max_epochs = 5000;
  std::uint64_t seed = 0;
  std::vector<double> lr_grid{1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
  std::vector<double> wd_grid{0.0, 5e-1, 1e-1, 1e-2};
  int repeats = 5;
  std::vector<int> hidden_layers{50, 50};
  WeightDecayMode decay_mode = WeightDecayMode::Decoupled;
  int threads = 1;

  void validate() const;
};

/// Per-feature standardization constants from the training split.
struct Normalization {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  Eigen::VectorXd target_mean;
  Eigen::VectorXd target_std;

  static Normalization fit(const Eigen::MatrixXd& train_inputs,
                           const Eigen::MatrixXd& train_targets);
  void validate() const;

  Eigen::MatrixXd normalize_inputs(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd normalize_targets(const Eigen::MatrixXd& y) const;
  Eigen::MatrixXd denormalize_targets(const Eigen::MatrixXd& y) const;
  /// Variances live in squared normalized units.
  Eigen::MatrixXd normalize_variance(const Eigen::MatrixXd& v) const;
  Eigen::MatrixXd denormalize_variance(const Eigen::MatrixXd& v) const;
};

struct LogRow {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
};

struct TrainedNet {
  MlpConfig config;
  MlpParams params;
  LossKind loss = LossKind::MeanMse;
  double lr = 0.0;
  double weight_decay = 0.0;
  int repeat = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t shuffle_seed = 0;
  int best_epoch = 0;
  int epochs_run = 0;
  double validation_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::vector<LogRow> log;
};

/// Network inputs and loss targets in normalized units.
struct TrainingData {
  Eigen::MatrixXd train_inputs;
  Eigen::MatrixXd train_targets;
  Eigen::MatrixXd validation_inputs;
  Eigen::MatrixXd validation_targets;
};

/// Core loop shared by both stages. Validation loss is evaluated before
/// training and every eval_every_epochs epochs; training stops after
/// `patience` consecutive evaluations without improvement (or at
/// max_epochs) and returns the checkpoint with the lowest validation loss.
/// A non-finite loss marks the run diverged instead of throwing.
TrainedNet train_network(const MlpConfig& config, LossKind loss,
                         const TrainingData& data, double lr, double weight_decay,
                         const TrainConfig& cfg, std::uint64_t init_seed,
                         std::uint64_t shuffle_seed);

/// Raw (unnormalized) network input and target matrices of a dataset.
Eigen::MatrixXd target_matrix(const fcst::ForecastDataset& ds, TargetSource target);

Normalization fit_normalization(const fcst::ForecastDataset& ds, TargetSource target);

/// Mean network regressed onto the target over the train split.
TrainedNet train_mean_network(const fcst::ForecastDataset& ds,
                              const Normalization& norm, const TrainConfig& cfg,
                              double lr, double weight_decay,
                              std::uint64_t init_seed, std::uint64_t shuffle_seed,
                              TargetSource target = TargetSource::Analysis);

/// Loss targets for the variance network: normalized ensemble variance for
/// NN-mse, the normalized proxy eps = xtilde - target of the frozen mean
/// network for NN-ext and NN-lik.
Eigen::MatrixXd variance_targets(const fcst::ForecastDataset& ds,
                                 const Normalization& norm, const TrainedNet& mean_net,
                                 VarianceStrategy strategy, TargetSource target);

TrainedNet train_variance_network(const fcst::ForecastDataset& ds,
                                  const Normalization& norm, const TrainedNet& mean_net,
                                  VarianceStrategy strategy, const TrainConfig& cfg,
                                  double lr, double weight_decay,
                                  std::uint64_t init_seed, std::uint64_t shuffle_seed,
                                  TargetSource target = TargetSource::Analysis);

struct SweepRun {
  std::size_t cell = 0;
  int repeat = 0;
  TrainedNet net;
};

struct SweepResult {
  std::vector<SweepRun> runs;
  std::size_t best_cell = 0;
  int best_repeat = 0;
  double best_cell_mean_loss = std::numeric_limits<double>::infinity();

  const TrainedNet& best() const;
};

/// Cell c = lr_index * wd_grid.size() + wd_index; run id = c * repeats + r.
/// Run seeds: derive_seed(cfg.seed, "nn-init" / "shuffle", stage_offset + id).
std::uint64_t sweep_init_seed(const TrainConfig& cfg, std::uint64_t stage, std::size_t run_id);
std::uint64_t sweep_shuffle_seed(const TrainConfig& cfg, std::uint64_t stage, std::size_t run_id);

/// Stage ids that keep the mean and variance sweeps on distinct streams.
std::uint64_t stage_id(LossKind kind);

/// Trains every cell `repeats` times. The winning cell has the lowest mean
/// validation loss over its repeats (ties: lowest cell index); a cell with
/// any diverged repeat is ineligible. Returns the winning cell's best repeat.
SweepResult sweep_mean(const fcst::ForecastDataset& ds, const Normalization& norm,
                       const TrainConfig& cfg, TargetSource target = TargetSource::Analysis);
SweepResult sweep_variance(const fcst::ForecastDataset& ds, const Normalization& norm,
                           const TrainedNet& mean_net, VarianceStrategy strategy,
                           const TrainConfig& cfg,
                           TargetSource target = TargetSource::Analysis);

struct TrainedPair {
  TrainedNet mean_net;
  TrainedNet var_net;
  Normalization normalization;
  VarianceStrategy strategy = VarianceStrategy::NnLik;
  TargetSource target = TargetSource::Analysis;
};

/// Full protocol: mean-network sweep (skipped when `frozen_mean` is given),
/// then the variance-network sweep for `strategy`.
TrainedPair hyperparameter_sweep(const fcst::ForecastDataset& ds, VarianceStrategy strategy,
                                 const TrainConfig& cfg,
                                 TargetSource target = TargetSource::Analysis,
                                 const TrainedNet* frozen_mean = nullptr);

/// Corrected forecast xtilde in physical units (s x M).
Eigen::MatrixXd predict_mean(const TrainedNet& mean_net, const Normalization& norm,
                             const Eigen::MatrixXd& raw_inputs);
/// Predicted error variance in physical units (s x M).
Eigen::MatrixXd predict_variance(const TrainedNet& var_net, const Normalization& norm,
                                 const Eigen::MatrixXd& raw_inputs);

MlpConfig mean_network_config(int inputs, int outputs, const std::vector<int>& hidden);
MlpConfig variance_network_config(int inputs, int outputs, const std::vector<int>& hidden);

}  // namespace l96uq::nn
