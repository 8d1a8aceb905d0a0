#include "l96uq/training.hpp"

#include "l96uq/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace l96uq::nn {

std::string to_string(VarianceStrategy s) {
  switch (s) {
    case VarianceStrategy::NnMse: return "nn-mse";
    case VarianceStrategy::NnExt: return "nn-ext";
    case VarianceStrategy::NnLik: return "nn-lik";
  }
  return "unknown";
}

VarianceStrategy strategy_from_string(const std::string& text) {
  if (text == "nn-mse") return VarianceStrategy::NnMse;
  if (text == "nn-ext") return VarianceStrategy::NnExt;
  if (text == "nn-lik") return VarianceStrategy::NnLik;
  throw std::invalid_argument("unknown variance strategy '" + text +
                              "' (expected nn-mse, nn-ext or nn-lik)");
}

LossKind loss_kind(VarianceStrategy s) {
  switch (s) {
    case VarianceStrategy::NnMse: return LossKind::VarMse;
    case VarianceStrategy::NnExt: return LossKind::VarExt;
    case VarianceStrategy::NnLik: return LossKind::VarLik;
  }
  return LossKind::VarLik;
}

std::string to_string(TargetSource t) { return t == TargetSource::Analysis ? "analysis" : "truth"; }

TargetSource target_from_string(const std::string& text) {
  if (text == "analysis") return TargetSource::Analysis;
  if (text == "truth") return TargetSource::Truth;
  throw std::invalid_argument("unknown training target '" + text + "' (expected analysis or truth)");
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (eval_every_epochs < 1) throw std::invalid_argument("eval_every_epochs must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (repeats < 1) throw std::invalid_argument("repeats must be >= 1");
  if (lr_grid.empty() || wd_grid.empty()) throw std::invalid_argument("empty hyperparameter grid");
  if (hidden_layers.empty()) throw std::invalid_argument("need at least one hidden layer");
}

Normalization Normalization::fit(const Eigen::MatrixXd& train_inputs,
                                 const Eigen::MatrixXd& train_targets) {
  auto moments = [](const Eigen::MatrixXd& x, Eigen::VectorXd& mean, Eigen::VectorXd& sd) {
    mean = x.rowwise().mean();
    sd = ((x.colwise() - mean).rowwise().squaredNorm() / static_cast<double>(x.cols()))
             .cwiseSqrt();
    for (Eigen::Index i = 0; i < sd.size(); ++i) {
      if (!(sd[i] > 0.0)) sd[i] = 1.0;
    }
  };
  Normalization n;
  moments(train_inputs, n.input_mean, n.input_std);
  moments(train_targets, n.target_mean, n.target_std);
  return n;
}

void Normalization::validate() const {
  if (!(input_std.array() > 0.0).all() || !(target_std.array() > 0.0).all()) {
    throw std::invalid_argument("Normalization: standard deviations must be > 0");
  }
  if (input_mean.size() != input_std.size() || target_mean.size() != target_std.size()) {
    throw std::invalid_argument("Normalization: inconsistent sizes");
  }
}

Eigen::MatrixXd Normalization::normalize_inputs(const Eigen::MatrixXd& x) const {
  return (x.colwise() - input_mean).array().colwise() / input_std.array();
}

Eigen::MatrixXd Normalization::normalize_targets(const Eigen::MatrixXd& y) const {
  return (y.colwise() - target_mean).array().colwise() / target_std.array();
}

Eigen::MatrixXd Normalization::denormalize_targets(const Eigen::MatrixXd& y) const {
  return (y.array().colwise() * target_std.array()).matrix().colwise() + target_mean;
}

Eigen::MatrixXd Normalization::normalize_variance(const Eigen::MatrixXd& v) const {
  return v.array().colwise() / target_std.array().square();
}

Eigen::MatrixXd Normalization::denormalize_variance(const Eigen::MatrixXd& v) const {
  return v.array().colwise() * target_std.array().square();
}

TrainedNet train_network(const MlpConfig& config, LossKind loss,
                         const TrainingData& data, double lr, double weight_decay,
                         const TrainConfig& cfg, std::uint64_t init_seed,
                         std::uint64_t shuffle_seed) {
  config.validate();
  cfg.validate();
  const Eigen::Index n = data.train_inputs.cols();
  if (n == 0 || data.validation_inputs.cols() == 0) {
    throw std::invalid_argument("train_network: empty train or validation set");
  }

  TrainedNet out;
  out.config = config;
  out.loss = loss;
  out.lr = lr;
  out.weight_decay = weight_decay;
  out.init_seed = init_seed;
  out.shuffle_seed = shuffle_seed;

  Rng init_rng{init_seed};
  Rng shuffle_rng{shuffle_seed};
  MlpParams params = init_params(config, init_rng);
  AdamState adam = AdamState::for_params(params, lr, weight_decay, cfg.decay_mode);

  auto evaluate = [&](const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    try {
      return batch_loss(loss, forward_batch(params, config, x), y);
    } catch (const NonFiniteError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  double best = evaluate(data.validation_inputs, data.validation_targets);
  out.log.push_back({0, evaluate(data.train_inputs, data.train_targets), best});
  MlpParams best_params = params;
  int best_epoch = 0;
  bool diverged = !std::isfinite(best);
  int stale = 0;
  int epoch = 0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::vector<Eigen::Index> batch_idx;
  Eigen::MatrixXd bx;
  Eigen::MatrixXd by;

  while (!diverged && epoch < cfg.max_epochs) {
    ++epoch;
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double sum = 0.0;
    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, n - start);
      batch_idx.assign(order.begin() + start, order.begin() + start + count);
      bx = data.train_inputs(Eigen::all, batch_idx);
      by = data.train_targets(Eigen::all, batch_idx);
      double batch_value = 0.0;
      try {
        const MlpParams grads = backward(params, config, bx, by, loss, &batch_value);
        adam_step(adam, params, grads);
      } catch (const NonFiniteError&) {
        diverged = true;
        break;
      }
      sum += batch_value * static_cast<double>(count);
    }
    const double train_loss = sum / static_cast<double>(n);
    if (diverged || !std::isfinite(train_loss) || !params.all_finite()) {
      diverged = true;
      break;
    }
    if (epoch % cfg.eval_every_epochs != 0) continue;
    const double val = evaluate(data.validation_inputs, data.validation_targets);
    out.log.push_back({epoch, train_loss, val});
    if (!std::isfinite(val)) {
      diverged = true;
      break;
    }
    if (val < best) {
      best = val;
      best_params = params;
      best_epoch = epoch;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }

  out.params = std::move(best_params);
  out.best_epoch = best_epoch;
  out.epochs_run = epoch;
  out.diverged = diverged;
  out.validation_loss = diverged ? std::numeric_limits<double>::infinity() : best;
  return out;
}

Eigen::MatrixXd target_matrix(const fcst::ForecastDataset& ds, TargetSource target) {
  return target == TargetSource::Analysis ? ds.analysis_target : ds.truth;
}

Normalization fit_normalization(const fcst::ForecastDataset& ds, TargetSource target) {
  const auto& tr = ds.split.train;
  return Normalization::fit(ds.inputs().middleCols(tr.begin, tr.size()),
                            target_matrix(ds, target).middleCols(tr.begin, tr.size()));
}

MlpConfig mean_network_config(int inputs, int outputs, const std::vector<int>& hidden) {
  MlpConfig c;
  c.layer_sizes.push_back(inputs);
  c.layer_sizes.insert(c.layer_sizes.end(), hidden.begin(), hidden.end());
  c.layer_sizes.push_back(outputs);
  c.hidden_activation = Activation::Softplus;
  c.output_activation = Activation::Linear;
  return c;
}

MlpConfig variance_network_config(int inputs, int outputs, const std::vector<int>& hidden) {
  MlpConfig c = mean_network_config(inputs, outputs, hidden);
  c.output_activation = Activation::Softplus;
  return c;
}

namespace {

TrainingData split_data(const fcst::ForecastDataset& ds, const Eigen::MatrixXd& x,
                        const Eigen::MatrixXd& y) {
  const auto& tr = ds.split.train;
  const auto& va = ds.split.validation;
  return {x.middleCols(tr.begin, tr.size()), y.middleCols(tr.begin, tr.size()),
          x.middleCols(va.begin, va.size()), y.middleCols(va.begin, va.size())};
}

}  // namespace

TrainedNet train_mean_network(const fcst::ForecastDataset& ds, const Normalization& norm,
                              const TrainConfig& cfg, double lr, double weight_decay,
                              std::uint64_t init_seed, std::uint64_t shuffle_seed,
                              TargetSource target) {
  norm.validate();
  const Eigen::MatrixXd x = norm.normalize_inputs(ds.inputs());
  const Eigen::MatrixXd y = norm.normalize_targets(target_matrix(ds, target));
  const MlpConfig config = mean_network_config(static_cast<int>(x.rows()),
                                               static_cast<int>(y.rows()), cfg.hidden_layers);
  return train_network(config, LossKind::MeanMse, split_data(ds, x, y), lr, weight_decay, cfg,
                       init_seed, shuffle_seed);
}

Eigen::MatrixXd variance_targets(const fcst::ForecastDataset& ds, const Normalization& norm,
                                 const TrainedNet& mean_net, VarianceStrategy strategy,
                                 TargetSource target) {
  if (strategy == VarianceStrategy::NnMse) {
    if (!ds.has_ensemble) {
      throw std::invalid_argument("NN-mse training needs ensemble variances in the dataset");
    }
    return norm.normalize_variance(ds.ens_var);
  }
  const Eigen::MatrixXd xtilde =
      forward_batch(mean_net.params, mean_net.config, norm.normalize_inputs(ds.inputs()));
  return xtilde - norm.normalize_targets(target_matrix(ds, target));
}

TrainedNet train_variance_network(const fcst::ForecastDataset& ds, const Normalization& norm,
                                  const TrainedNet& mean_net, VarianceStrategy strategy,
                                  const TrainConfig& cfg, double lr, double weight_decay,
                                  std::uint64_t init_seed, std::uint64_t shuffle_seed,
                                  TargetSource target) {
  norm.validate();
  const Eigen::MatrixXd x = norm.normalize_inputs(ds.inputs());
  const Eigen::MatrixXd y = variance_targets(ds, norm, mean_net, strategy, target);
  const MlpConfig config = variance_network_config(
      static_cast<int>(x.rows()), static_cast<int>(y.rows()), cfg.hidden_layers);
  return train_network(config, loss_kind(strategy), split_data(ds, x, y), lr, weight_decay,
                       cfg, init_seed, shuffle_seed);
}

const TrainedNet& SweepResult::best() const {
  for (const SweepRun& r : runs) {
    if (r.cell == best_cell && r.repeat == best_repeat) return r.net;
  }
  throw std::logic_error("SweepResult: best run missing");
}

std::uint64_t stage_id(LossKind kind) { return static_cast<std::uint64_t>(kind); }

std::uint64_t sweep_init_seed(const TrainConfig& cfg, std::uint64_t stage, std::size_t run_id) {
  return derive_seed(cfg.seed, "nn-init", (stage << 32) | run_id);
}

std::uint64_t sweep_shuffle_seed(const TrainConfig& cfg, std::uint64_t stage,
                                 std::size_t run_id) {
  return derive_seed(cfg.seed, "shuffle", (stage << 32) | run_id);
}

namespace {

template <class TrainFn>
SweepResult run_sweep(const TrainConfig& cfg, LossKind kind, TrainFn&& train_one) {
  cfg.validate();
  const std::size_t n_wd = cfg.wd_grid.size();
  const std::size_t n_cells = cfg.lr_grid.size() * n_wd;
  const auto repeats = static_cast<std::size_t>(cfg.repeats);
  const std::uint64_t stage = stage_id(kind);

  SweepResult result;
  result.runs.resize(n_cells * repeats);
  // Each run trains single-threaded; parallelism is across runs.
  TrainConfig run_cfg = cfg;
  run_cfg.threads = 1;
  parallel_for(result.runs.size(), cfg.threads, [&](std::size_t id) {
    const std::size_t cell = id / repeats;
    const double lr = cfg.lr_grid[cell / n_wd];
    const double wd = cfg.wd_grid[cell % n_wd];
    SweepRun& run = result.runs[id];
    run.cell = cell;
    run.repeat = static_cast<int>(id % repeats);
    run.net = train_one(run_cfg, lr, wd, sweep_init_seed(cfg, stage, id),
                        sweep_shuffle_seed(cfg, stage, id));
    run.net.repeat = run.repeat;
  });

  bool found = false;
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    double sum = 0.0;
    bool ok = true;
    for (std::size_t r = 0; r < repeats; ++r) {
      const TrainedNet& net = result.runs[cell * repeats + r].net;
      if (net.diverged || !std::isfinite(net.validation_loss)) {
        ok = false;
        break;
      }
      sum += net.validation_loss;
    }
    if (!ok) continue;
    const double mean = sum / static_cast<double>(repeats);
    if (!found || mean < result.best_cell_mean_loss) {
      found = true;
      result.best_cell = cell;
      result.best_cell_mean_loss = mean;
    }
  }
  if (!found) throw std::runtime_error("hyperparameter sweep: every cell diverged");

  int best_r = 0;
  for (std::size_t r = 1; r < repeats; ++r) {
    if (result.runs[result.best_cell * repeats + r].net.validation_loss <
        result.runs[result.best_cell * repeats + static_cast<std::size_t>(best_r)]
            .net.validation_loss) {
      best_r = static_cast<int>(r);
    }
  }
  result.best_repeat = best_r;
  return result;
}

}  // namespace

SweepResult sweep_mean(const fcst::ForecastDataset& ds, const Normalization& norm,
                       const TrainConfig& cfg, TargetSource target) {
  return run_sweep(cfg, LossKind::MeanMse,
                   [&](const TrainConfig& c, double lr, double wd, std::uint64_t s1,
                       std::uint64_t s2) {
                     return train_mean_network(ds, norm, c, lr, wd, s1, s2, target);
                   });
}

SweepResult sweep_variance(const fcst::ForecastDataset& ds, const Normalization& norm,
                           const TrainedNet& mean_net, VarianceStrategy strategy,
                           const TrainConfig& cfg, TargetSource target) {
  // Targets depend only on the frozen mean network; compute them once.
  norm.validate();
  const Eigen::MatrixXd x = norm.normalize_inputs(ds.inputs());
  const Eigen::MatrixXd y = variance_targets(ds, norm, mean_net, strategy, target);
  const TrainingData data = split_data(ds, x, y);
  const MlpConfig config = variance_network_config(
      static_cast<int>(x.rows()), static_cast<int>(y.rows()), cfg.hidden_layers);
  const LossKind kind = loss_kind(strategy);
  return run_sweep(cfg, kind,
                   [&](const TrainConfig& c, double lr, double wd, std::uint64_t s1,
                       std::uint64_t s2) {
                     return train_network(config, kind, data, lr, wd, c, s1, s2);
                   });
}

TrainedPair hyperparameter_sweep(const fcst::ForecastDataset& ds, VarianceStrategy strategy,
                                 const TrainConfig& cfg, TargetSource target,
                                 const TrainedNet* frozen_mean) {
  TrainedPair pair;
  pair.strategy = strategy;
  pair.target = target;
  pair.normalization = fit_normalization(ds, target);
  pair.mean_net = frozen_mean ? *frozen_mean
                              : sweep_mean(ds, pair.normalization, cfg, target).best();
  pair.var_net =
      sweep_variance(ds, pair.normalization, pair.mean_net, strategy, cfg, target).best();
  return pair;
}

Eigen::MatrixXd predict_mean(const TrainedNet& mean_net, const Normalization& norm,
                             const Eigen::MatrixXd& raw_inputs) {
  return norm.denormalize_targets(
      forward_batch(mean_net.params, mean_net.config, norm.normalize_inputs(raw_inputs)));
}

Eigen::MatrixXd predict_variance(const TrainedNet& var_net, const Normalization& norm,
                                 const Eigen::MatrixXd& raw_inputs) {
  return norm.denormalize_variance(
      forward_batch(var_net.params, var_net.config, norm.normalize_inputs(raw_inputs)));
}

}  // namespace l96uq::nn
