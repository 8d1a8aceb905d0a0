#include "l96uq/pipeline.hpp"

#include "l96uq/array_file.hpp"
#include "l96uq/manifest.hpp"
#include "l96uq/parallel.hpp"
#include "l96uq/rng.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

namespace l96uq::pipe {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

/// Shortest round-trip text for a double; NA for non-finite values.
std::string num(double v) {
  if (!std::isfinite(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

Eigen::MatrixXd cols(const Eigen::MatrixXd& m, const fcst::IndexRange& r) {
  return m.middleCols(r.begin, r.size());
}

std::string join(const std::vector<int>& v, const char* sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) {
    if (k) out += sep;
    out += std::to_string(v[k]);
  }
  return out;
}

Json seeds_json(const ExperimentConfig& c) {
  Json streams;
  for (const char* s : {"nature", "obs", "init-ensemble", "nn-init", "shuffle", "bootstrap"}) {
    streams[s] = derive_seed(c.seed, s, 0);
  }
  return Json{{"master", c.seed}, {"stream_base", streams}};
}

void finish_stage(const ExperimentConfig& c, const fs::path& dir, const std::string& command,
                  const Json& details, Clock::time_point start) {
  io::write_manifest(dir, command, cfg::to_json(c), seeds_json(c), details, seconds_since(start));
  write_root_manifest(c);
}

void require(const fs::path& p, const std::string& stage) {
  if (!fs::exists(p)) {
    throw PipelineError("missing " + p.string() + "; run '" + stage + "' first");
  }
}

Json net_meta(const nn::TrainedNet& n) {
  return Json{{"layer_sizes", n.config.layer_sizes},
              {"hidden_activation", n.config.hidden_activation == nn::Activation::Softplus
                                        ? "softplus"
                                        : "linear"},
              {"output_activation", n.config.output_activation == nn::Activation::Softplus
                                        ? "softplus"
                                        : "linear"},
              {"loss", nn::to_string(n.loss)},
              {"lr", n.lr},
              {"weight_decay", n.weight_decay},
              {"repeat", n.repeat},
              {"init_seed", n.init_seed},
              {"shuffle_seed", n.shuffle_seed},
              {"best_epoch", n.best_epoch},
              {"epochs_run", n.epochs_run},
              {"validation_loss", n.validation_loss}};
}

nn::Activation activation_from(const std::string& s) {
  if (s == "softplus") return nn::Activation::Softplus;
  if (s == "linear") return nn::Activation::Linear;
  throw PipelineError("unknown activation " + s);
}

nn::LossKind loss_from(const std::string& s) {
  for (auto k : {nn::LossKind::MeanMse, nn::LossKind::VarMse, nn::LossKind::VarExt,
                 nn::LossKind::VarLik}) {
    if (nn::to_string(k) == s) return k;
  }
  throw PipelineError("unknown loss " + s);
}

void save_sweep(const fs::path& dir, const nn::SweepResult& sweep) {
  const nn::TrainedNet& best = sweep.best();
  io::write_array(dir / "params.l96a", io::from_vector(best.params.flatten()));
  std::ostringstream log;
  log << "epoch,train_loss,validation_loss\n";
  for (const auto& r : best.log) {
    log << r.epoch << ',' << num(r.train_loss) << ',' << num(r.validation_loss) << '\n';
  }
  io::write_file(dir / "log.csv", log.str());

  std::ostringstream runs;
  std::ostringstream logs;
  runs << "run,cell,lr,weight_decay,repeat,best_epoch,epochs_run,validation_loss,diverged\n";
  logs << "run,epoch,train_loss,validation_loss\n";
  for (std::size_t k = 0; k < sweep.runs.size(); ++k) {
    const nn::SweepRun& r = sweep.runs[k];
    runs << k << ',' << r.cell << ',' << num(r.net.lr) << ',' << num(r.net.weight_decay) << ','
         << r.repeat << ',' << r.net.best_epoch << ',' << r.net.epochs_run << ','
         << num(r.net.validation_loss) << ',' << (r.net.diverged ? 1 : 0) << '\n';
    for (const auto& row : r.net.log) {
      logs << k << ',' << row.epoch << ',' << num(row.train_loss) << ','
           << num(row.validation_loss) << '\n';
    }
  }
  io::write_file(dir / "runs.csv", runs.str());
  io::write_file(dir / "logs.csv", logs.str());

  Json meta = net_meta(best);
  meta["best_cell"] = sweep.best_cell;
  meta["best_cell_mean_loss"] = sweep.best_cell_mean_loss;
  meta["runs"] = sweep.runs.size();
  io::write_file(dir / "net.json", meta.dump(2) + "\n");
}

nn::SweepResult load_sweep(const fs::path& dir) {
  const Json meta = Json::parse(io::read_file(dir / "net.json"));
  nn::TrainedNet net;
  net.config.layer_sizes = meta.at("layer_sizes").get<std::vector<int>>();
  net.config.hidden_activation = activation_from(meta.at("hidden_activation"));
  net.config.output_activation = activation_from(meta.at("output_activation"));
  net.loss = loss_from(meta.at("loss"));
  net.lr = meta.at("lr");
  net.weight_decay = meta.at("weight_decay");
  net.repeat = meta.at("repeat");
  net.init_seed = meta.at("init_seed");
  net.shuffle_seed = meta.at("shuffle_seed");
  net.best_epoch = meta.at("best_epoch");
  net.epochs_run = meta.at("epochs_run");
  net.validation_loss = meta.at("validation_loss");
  net.params = nn::MlpParams::unflatten(net.config, io::to_vector(io::read_array(dir / "params.l96a")));
  nn::SweepResult sweep;
  sweep.best_cell = meta.at("best_cell");
  sweep.best_repeat = net.repeat;
  sweep.best_cell_mean_loss = meta.at("best_cell_mean_loss");
  sweep.runs.push_back({sweep.best_cell, net.repeat, std::move(net)});
  return sweep;
}

bool static_sigma(const verify::ScoredSet& set) {
  if (set.size() < 2) return true;
  for (Eigen::Index i = 0; i < set.sigma.rows(); ++i) {
    if ((set.sigma.row(i).array() != set.sigma(i, 0)).any()) return false;
  }
  return true;
}

verify::MetricReport not_applicable(const std::string& metric, const std::string& system,
                                    std::int64_t m) {
  verify::MetricReport r;
  r.metric = metric;
  r.name = system;
  r.value = r.ci_low = r.ci_high = std::numeric_limits<double>::quiet_NaN();
  r.sample_size = m;
  r.not_applicable = true;
  return r;
}

}  // namespace

dyn::Model nature_model(const ExperimentConfig& c) {
  if (c.scenario == fcst::Scenario::Pms) return dyn::make_single_scale_model(c.model.pms, c.model.dt);
  return dyn::make_two_scale_model(c.model.ims, c.model.dt / c.model.ims_substeps,
                                   c.model.ims_substeps);
}

dyn::Model forecast_model(const ExperimentConfig& c) {
  if (c.scenario == fcst::Scenario::Pms) return dyn::make_single_scale_model(c.model.pms, c.model.dt);
  return dyn::make_surrogate_model(c.model.surrogate, c.model.dt);
}

nn::TrainConfig train_config(const ExperimentConfig& c) {
  nn::TrainConfig t = c.train.train;
  t.seed = c.seed;
  t.threads = c.threads;
  return t;
}

verify::BootstrapOptions bootstrap_options(const ExperimentConfig& c, const std::string& key) {
  verify::BootstrapOptions o = c.evaluate.bootstrap;
  o.seed = derive_seed(c.seed, "bootstrap", fnv1a64(key));
  o.threads = c.threads;
  o.steps_per_index = c.assim.obs.obs_every_steps;
  return o;
}

NatureRun simulate_nature(const ExperimentConfig& c) {
  c.validate();
  Rng rng = make_rng(c.seed, "nature");
  std::normal_distribution<double> normal(0.0, 1.0);
  const dyn::Model model = nature_model(c);
  const bool two_scale = c.scenario == fcst::Scenario::Ims;
  const int s = two_scale ? c.model.ims.s : c.model.pms.s;
  const double forcing = two_scale ? c.model.ims.forcing : c.model.pms.forcing;

  Eigen::VectorXd x(model.dim);
  for (Eigen::Index i = 0; i < s; ++i) x[i] = forcing + c.nature.init_perturbation * normal(rng);
  for (Eigen::Index i = s; i < model.dim; ++i) x[i] = c.nature.init_fast_amplitude * normal(rng);

  dyn::Rk4Stepper stepper;
  model.advance(x, c.nature.transient_steps, stepper);
  const long n_cols = c.total_cycles() + 1;
  NatureRun run;
  run.slow.resize(s, n_cols);
  if (two_scale) run.fast.resize(model.dim - s, n_cols);
  for (long k = 0; k < n_cols; ++k) {
    if (k > 0) model.advance(x, c.assim.obs.obs_every_steps, stepper);
    run.slow.col(k) = x.head(s);
    if (two_scale) run.fast.col(k) = x.tail(model.dim - s);
  }
  return run;
}

AssimRun assimilate(const ExperimentConfig& c, const Eigen::MatrixXd& nature_slow) {
  c.validate();
  if (nature_slow.cols() != c.total_cycles() + 1) {
    throw PipelineError("nature run has " + std::to_string(nature_slow.cols()) +
                        " samples but the configuration needs " +
                        std::to_string(c.total_cycles() + 1));
  }
  dyn::Trajectory traj;
  traj.dt = c.model.dt;
  traj.stride = c.assim.obs.obs_every_steps;
  traj.states = nature_slow;
  AssimRun run;
  run.observations = da::generate_observations(traj, c.assim.obs, c.seed);
  const da::EnsembleState initial =
      da::perturbed_ensemble(nature_slow.col(0), c.assim.members, c.assim.init_spread, c.seed);
  da::CycleOptions options;
  options.threads = c.threads;
  run.analyses = da::run_assimilation_cycle(forecast_model(c), run.observations, initial,
                                            c.assim.obs, c.filter(), options);
  const auto spinup = static_cast<std::ptrdiff_t>(c.assim.spinup_cycles);
  if (static_cast<std::ptrdiff_t>(run.analyses.size()) < spinup) {
    throw PipelineError("fewer analyses than spinup cycles");
  }
  run.analyses.erase(run.analyses.begin(), run.analyses.begin() + spinup);
  return run;
}

double time_mean_analysis_rmse(const std::vector<da::AnalysisRecord>& analyses,
                               const Eigen::MatrixXd& nature_slow) {
  if (analyses.empty()) throw PipelineError("no analyses");
  double sum = 0.0;
  for (const auto& a : analyses) {
    const Eigen::VectorXd d = a.mean - nature_slow.col(a.time_index);
    sum += std::sqrt(d.squaredNorm() / static_cast<double>(d.size()));
  }
  return sum / static_cast<double>(analyses.size());
}

std::vector<fcst::ForecastDataset> make_datasets(
    const ExperimentConfig& c, const std::vector<da::AnalysisRecord>& analyses,
    const Eigen::MatrixXd& nature_slow, const std::vector<fcst::LeadTimeSpec>& specs,
    bool with_ensemble) {
  fcst::BuildOptions o;
  o.with_ensemble = with_ensemble;
  o.init_stride = c.forecast.init_stride;
  o.threads = c.threads;
  o.train_size = c.forecast.train_size;
  o.validation_size = c.forecast.validation_size;
  o.test_size = c.forecast.test_size;
  return fcst::build_datasets(analyses, nature_slow, forecast_model(c),
                              c.assim.obs.obs_every_steps, specs, o);
}

const nn::TrainedNet& TrainedModels::var(nn::VarianceStrategy s) const {
  auto it = var_sweeps.find(s);
  if (it == var_sweeps.end()) {
    throw PipelineError("no trained variance network for " + nn::to_string(s));
  }
  return it->second.best();
}

TrainedModels train_models(const ExperimentConfig& c, const fcst::ForecastDataset& ds) {
  const nn::TrainConfig tc = train_config(c);
  TrainedModels m;
  m.target = c.train.target;
  m.norm = nn::fit_normalization(ds, m.target);
  m.mean_sweep = nn::sweep_mean(ds, m.norm, tc, m.target);
  for (auto s : c.train.strategies) {
    m.var_sweeps[s] = nn::sweep_variance(ds, m.norm, m.mean(), s, tc, m.target);
  }
  return m;
}

verify::ScoredSet scored_system(const ExperimentConfig& c, const fcst::ForecastDataset& ds,
                                const std::string& system, const TrainedModels* models) {
  const fcst::IndexRange test = ds.split.test;
  if (test.size() < 1) throw PipelineError("empty test split");
  verify::ScoredSet set;
  set.reference = cols(c.evaluate.reference == "truth" ? ds.truth : ds.analysis_target, test);
  set.valid_time_index.assign(ds.valid_time_index.begin() + test.begin,
                              ds.valid_time_index.begin() + test.end);
  if (system == "det") {
    const fcst::IndexRange tr = ds.split.train;
    const Eigen::MatrixXd resid = cols(ds.det_output, tr) - cols(ds.analysis_target, tr);
    const Eigen::VectorXd mu = resid.rowwise().mean();
    const Eigen::VectorXd sd =
        ((resid.colwise() - mu).rowwise().squaredNorm() / static_cast<double>(tr.size() - 1))
            .cwiseSqrt();
    set.mean = cols(ds.det_output, test);
    set.sigma = sd.replicate(1, test.size());
  } else if (system == "ens") {
    if (!ds.has_ensemble) throw PipelineError("dataset has no ensemble forecast");
    set.mean = cols(ds.ens_mean, test);
    set.sigma = cols(ds.ens_var, test).cwiseSqrt();
  } else {
    if (!models) throw PipelineError("system " + system + " needs trained networks");
    const Eigen::MatrixXd x = cols(ds.inputs(), test);
    set.mean = nn::predict_mean(models->mean(), models->norm, x);
    set.sigma = nn::predict_variance(models->var(nn::strategy_from_string(system)),
                                     models->norm, x)
                    .cwiseSqrt();
  }
  return set;
}

const verify::MetricReport& SystemScores::metric(const std::string& name) const {
  for (const auto& r : reports) {
    if (r.metric == name) return r;
  }
  throw PipelineError("no metric " + name + " for " + system);
}

SystemScores score_system(const ExperimentConfig& c, const std::string& spec,
                          const std::string& system, const verify::ScoredSet& set) {
  SystemScores out;
  out.system = system;
  const std::string key = spec + "/" + system + "/";
  const double conf = c.evaluate.confidence;
  const int bins = c.evaluate.pit_bins;
  out.reports.push_back(verify::bootstrap_ci(
      "rmse", system, [](const verify::ScoredSet& s) { return verify::rmse(s); }, set,
      bootstrap_options(c, key + "rmse")));
  out.reports.push_back(verify::bootstrap_ci(
      "cp", system,
      [conf](const verify::ScoredSet& s) { return verify::coverage_probability(s, conf); }, set,
      bootstrap_options(c, key + "cp")));
  const auto thinned = verify::thin_columns(set.valid_time_index, c.evaluate.bootstrap.thin_steps,
                                            c.assim.obs.obs_every_steps);
  const auto m = static_cast<std::int64_t>(thinned.size());
  if (static_sigma(set)) {
    out.reports.push_back(not_applicable("corr", system, m));
  } else {
    try {
      out.reports.push_back(verify::bootstrap_ci(
          "corr", system,
          [](const verify::ScoredSet& s) { return verify::sigma_error_correlation(s); }, set,
          bootstrap_options(c, key + "corr")));
    } catch (const verify::UndefinedCorrelation&) {
      out.reports.push_back(not_applicable("corr", system, m));
    }
  }
  out.reports.push_back(verify::bootstrap_ci(
      "chi2", system, [bins](const verify::ScoredSet& s) { return verify::pit_chi2(s, bins); },
      set, bootstrap_options(c, key + "chi2")));
  out.pit_counts = verify::pit_histogram(set, bins);
  for (auto k : out.pit_counts) out.pit_total += k;
  return out;
}

void save_nature(const fs::path& dir, const NatureRun& run) {
  io::write_columns(dir / "slow.l96a", run.slow);
  if (run.fast.size() > 0) io::write_columns(dir / "fast.l96a", run.fast);
}

NatureRun load_nature(const fs::path& dir) {
  require(dir / "slow.l96a", "nature");
  NatureRun run;
  run.slow = io::read_columns(dir / "slow.l96a");
  if (fs::exists(dir / "fast.l96a")) run.fast = io::read_columns(dir / "fast.l96a");
  return run;
}

void save_assim(const fs::path& dir, const AssimRun& run, bool store_members) {
  const auto n_obs = static_cast<Eigen::Index>(run.observations.size());
  if (n_obs > 0) {
    Eigen::MatrixXd y(run.observations.front().values.size(), n_obs);
    std::vector<std::int64_t> t;
    for (Eigen::Index k = 0; k < n_obs; ++k) {
      y.col(k) = run.observations[static_cast<std::size_t>(k)].values;
      t.push_back(run.observations[static_cast<std::size_t>(k)].time_index);
    }
    io::write_columns(dir / "observations.l96a", y);
    io::write_array(dir / "observation_time_index.l96a", io::from_indices(t));
  }
  const auto n = static_cast<Eigen::Index>(run.analyses.size());
  if (n == 0) throw PipelineError("no analyses to save");
  const Eigen::Index s = run.analyses.front().mean.size();
  const Eigen::Index members = run.analyses.front().ensemble.size();
  Eigen::MatrixXd mean(s, n);
  Eigen::MatrixXd spread(s, n);
  std::vector<std::int64_t> t;
  io::Array ens;
  ens.dims = {static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(members),
              static_cast<std::uint64_t>(s)};
  if (store_members) ens.data.reserve(static_cast<std::size_t>(n * members * s));
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& a = run.analyses[static_cast<std::size_t>(k)];
    mean.col(k) = a.mean;
    spread.col(k) = a.spread;
    t.push_back(a.time_index);
    if (store_members) {
      ens.data.insert(ens.data.end(), a.ensemble.members.data(),
                      a.ensemble.members.data() + a.ensemble.members.size());
    }
  }
  io::write_columns(dir / "analysis_mean.l96a", mean);
  io::write_columns(dir / "analysis_spread.l96a", spread);
  io::write_array(dir / "time_index.l96a", io::from_indices(t));
  if (store_members) io::write_array(dir / "members.l96a", ens);
}

std::vector<da::AnalysisRecord> load_analyses(const fs::path& dir) {
  require(dir / "analysis_mean.l96a", "assimilate");
  const Eigen::MatrixXd mean = io::read_columns(dir / "analysis_mean.l96a");
  const Eigen::MatrixXd spread = io::read_columns(dir / "analysis_spread.l96a");
  const auto t = io::to_indices(io::read_array(dir / "time_index.l96a"));
  io::Array ens;
  const bool have_members = fs::exists(dir / "members.l96a");
  if (have_members) ens = io::read_array(dir / "members.l96a");
  const Eigen::Index s = mean.rows();
  std::vector<da::AnalysisRecord> out(static_cast<std::size_t>(mean.cols()));
  for (Eigen::Index k = 0; k < mean.cols(); ++k) {
    auto& a = out[static_cast<std::size_t>(k)];
    a.time_index = t.at(static_cast<std::size_t>(k));
    a.mean = mean.col(k);
    a.spread = spread.col(k);
    if (have_members) {
      const auto members = static_cast<Eigen::Index>(ens.dims.at(1));
      a.ensemble.members = Eigen::Map<const Eigen::MatrixXd>(
          ens.data.data() + k * members * s, s, members);
    } else {
      a.ensemble.members = a.mean;
    }
  }
  return out;
}

void save_dataset(const fs::path& dir, const fcst::ForecastDataset& ds) {
  const Eigen::Index m = ds.size();
  const Eigen::Index s = ds.state_dim();
  io::Array det;
  det.dims = {static_cast<std::uint64_t>(m), ds.det.size(), static_cast<std::uint64_t>(s)};
  det.data.reserve(static_cast<std::size_t>(m) * ds.det.size() * static_cast<std::size_t>(s));
  for (Eigen::Index k = 0; k < m; ++k) {
    for (const Eigen::MatrixXd& lead : ds.det) {
      det.data.insert(det.data.end(), lead.col(k).data(), lead.col(k).data() + s);
    }
  }
  io::write_array(dir / "det.l96a", det);
  io::write_columns(dir / "det_output.l96a", ds.det_output);
  io::write_columns(dir / "analysis_target.l96a", ds.analysis_target);
  io::write_columns(dir / "truth.l96a", ds.truth);
  if (ds.has_ensemble) {
    io::write_columns(dir / "ens_mean.l96a", ds.ens_mean);
    io::write_columns(dir / "ens_var.l96a", ds.ens_var);
  }
  io::write_array(dir / "init_index.l96a", io::from_indices(ds.init_index));
  io::write_array(dir / "valid_time_index.l96a", io::from_indices(ds.valid_time_index));
  auto range = [](const fcst::IndexRange& r) { return Json{r.begin, r.end}; };
  const Json meta{{"name", ds.leads.name},
                  {"output_lead", ds.leads.output_lead},
                  {"input_leads", ds.leads.input_leads},
                  {"samples", m},
                  {"has_ensemble", ds.has_ensemble},
                  {"split",
                   {{"train", range(ds.split.train)},
                    {"validation", range(ds.split.validation)},
                    {"test", range(ds.split.test)}}}};
  io::write_file(dir / "dataset.json", meta.dump(2) + "\n");
}

fcst::ForecastDataset load_dataset(const fs::path& dir) {
  require(dir / "dataset.json", "forecast");
  const Json meta = Json::parse(io::read_file(dir / "dataset.json"));
  fcst::ForecastDataset ds;
  ds.leads.name = meta.at("name");
  ds.leads.output_lead = meta.at("output_lead");
  ds.leads.input_leads = meta.at("input_leads").get<std::vector<int>>();
  ds.has_ensemble = meta.at("has_ensemble");
  auto range = [](const Json& j) { return fcst::IndexRange{j.at(0), j.at(1)}; };
  ds.split.train = range(meta.at("split").at("train"));
  ds.split.validation = range(meta.at("split").at("validation"));
  ds.split.test = range(meta.at("split").at("test"));
  ds.det_output = io::read_columns(dir / "det_output.l96a");
  ds.analysis_target = io::read_columns(dir / "analysis_target.l96a");
  ds.truth = io::read_columns(dir / "truth.l96a");
  if (ds.has_ensemble) {
    ds.ens_mean = io::read_columns(dir / "ens_mean.l96a");
    ds.ens_var = io::read_columns(dir / "ens_var.l96a");
  }
  ds.init_index = io::to_indices(io::read_array(dir / "init_index.l96a"));
  ds.valid_time_index = io::to_indices(io::read_array(dir / "valid_time_index.l96a"));
  const io::Array det = io::read_array(dir / "det.l96a");
  const auto m = static_cast<Eigen::Index>(det.dims.at(0));
  const auto l = static_cast<Eigen::Index>(det.dims.at(1));
  const auto s = static_cast<Eigen::Index>(det.dims.at(2));
  ds.det.assign(static_cast<std::size_t>(l), Eigen::MatrixXd(s, m));
  for (Eigen::Index k = 0; k < m; ++k) {
    for (Eigen::Index j = 0; j < l; ++j) {
      ds.det[static_cast<std::size_t>(j)].col(k) =
          Eigen::Map<const Eigen::VectorXd>(det.data.data() + (k * l + j) * s, s);
    }
  }
  return ds;
}

void save_trained(const fs::path& dir, const TrainedModels& m) {
  const fs::path norm = dir / "normalization";
  io::write_array(norm / "input_mean.l96a", io::from_vector(m.norm.input_mean));
  io::write_array(norm / "input_std.l96a", io::from_vector(m.norm.input_std));
  io::write_array(norm / "target_mean.l96a", io::from_vector(m.norm.target_mean));
  io::write_array(norm / "target_std.l96a", io::from_vector(m.norm.target_std));
  save_sweep(dir / "mean", m.mean_sweep);
  std::vector<std::string> names;
  for (const auto& [s, sweep] : m.var_sweeps) {
    save_sweep(dir / nn::to_string(s), sweep);
    names.push_back(nn::to_string(s));
  }
  const Json meta{{"target", nn::to_string(m.target)}, {"strategies", names}};
  io::write_file(dir / "training.json", meta.dump(2) + "\n");
}

TrainedModels load_trained(const fs::path& dir) {
  require(dir / "training.json", "train");
  const Json meta = Json::parse(io::read_file(dir / "training.json"));
  TrainedModels m;
  m.target = nn::target_from_string(meta.at("target"));
  const fs::path norm = dir / "normalization";
  m.norm.input_mean = io::to_vector(io::read_array(norm / "input_mean.l96a"));
  m.norm.input_std = io::to_vector(io::read_array(norm / "input_std.l96a"));
  m.norm.target_mean = io::to_vector(io::read_array(norm / "target_mean.l96a"));
  m.norm.target_std = io::to_vector(io::read_array(norm / "target_std.l96a"));
  m.norm.validate();
  m.mean_sweep = load_sweep(dir / "mean");
  for (const auto& name : meta.at("strategies").get<std::vector<std::string>>()) {
    m.var_sweeps[nn::strategy_from_string(name)] = load_sweep(dir / name);
  }
  return m;
}

void write_metrics_csv(const fs::path& path, const std::vector<SystemScores>& scores) {
  std::ostringstream out;
  out << "metric,name,value,ci_low,ci_high,M\n";
  for (const auto& s : scores) {
    for (const auto& r : s.reports) {
      out << r.metric << ',' << r.name << ',' << num(r.value) << ',' << num(r.ci_low) << ','
          << num(r.ci_high) << ',' << r.sample_size << '\n';
    }
  }
  io::write_file(path, out.str());
}

std::string leadtime_category(const std::vector<int>& input_leads, int output_lead) {
  const bool prior = std::any_of(input_leads.begin(), input_leads.end(),
                                 [&](int l) { return l < output_lead; });
  if (prior) return "prior";
  const bool later = std::any_of(input_leads.begin(), input_leads.end(),
                                 [&](int l) { return l > output_lead; });
  return later ? "later" : "output";
}

std::vector<LeadtimeRow> leadtime_study(const ExperimentConfig& c,
                                        const std::vector<da::AnalysisRecord>& analyses,
                                        const Eigen::MatrixXd& nature_slow) {
  const int output = c.spec(c.leadtime.base_spec).output_lead;
  std::vector<fcst::LeadTimeSpec> specs;
  for (const auto& set : c.leadtime.input_sets) {
    specs.push_back({"L" + join(set, "-"), output, set});
  }
  const auto datasets = make_datasets(c, analyses, nature_slow, specs, false);
  std::vector<nn::Normalization> norms;
  for (const auto& ds : datasets) norms.push_back(nn::fit_normalization(ds, c.train.target));

  nn::TrainConfig tc = train_config(c);
  tc.threads = 1;
  const auto repeats = static_cast<std::size_t>(c.leadtime.repeats);
  struct Outcome {
    double rmse = std::numeric_limits<double>::quiet_NaN();
    double validation_loss = std::numeric_limits<double>::infinity();
  };
  std::vector<Outcome> outcomes(specs.size() * repeats);
  parallel_for(outcomes.size(), c.threads, [&](std::size_t id) {
    const std::size_t i = id / repeats;
    const auto& ds = datasets[i];
    // Stage 16 keeps these runs off the sweep streams.
    const std::uint64_t counter = (std::uint64_t{16} << 32) | id;
    const nn::TrainedNet net = nn::train_mean_network(
        ds, norms[i], tc, c.leadtime.lr, c.leadtime.weight_decay,
        derive_seed(c.seed, "nn-init", counter), derive_seed(c.seed, "shuffle", counter),
        c.train.target);
    if (net.diverged) return;
    const fcst::IndexRange test = ds.split.test;
    const Eigen::MatrixXd pred = nn::predict_mean(net, norms[i], cols(ds.inputs(), test));
    const Eigen::MatrixXd ref =
        cols(c.evaluate.reference == "truth" ? ds.truth : ds.analysis_target, test);
    outcomes[id].rmse = std::sqrt((pred - ref).squaredNorm() / static_cast<double>(pred.size()));
    outcomes[id].validation_loss = net.validation_loss;
  });

  std::vector<LeadtimeRow> rows;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    LeadtimeRow row;
    row.name = specs[i].name;
    row.input_leads = specs[i].input_leads;
    row.category = leadtime_category(row.input_leads, output);
    double best_val = std::numeric_limits<double>::infinity();
    row.best_validation_rmse = std::numeric_limits<double>::quiet_NaN();
    for (std::size_t r = 0; r < repeats; ++r) {
      const Outcome& o = outcomes[i * repeats + r];
      if (!std::isfinite(o.rmse)) continue;
      row.test_rmse.push_back(o.rmse);
      if (o.validation_loss < best_val) {
        best_val = o.validation_loss;
        row.best_validation_rmse = o.rmse;
      }
    }
    std::vector<double> sorted = row.test_rmse;
    row.median_rmse = sorted.empty() ? std::numeric_limits<double>::quiet_NaN()
                                     : verify::quantile(sorted, 0.5);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_root_manifest(const ExperimentConfig& c) {
  io::write_manifest(c.output_dir, "index", cfg::to_json(c), seeds_json(c), Json::object(), 0.0);
}

namespace {

void prepare_root(const ExperimentConfig& c) {
  fs::create_directories(c.output_dir);
  cfg::save(c, fs::path(c.output_dir) / "config.json");
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

std::vector<std::string> train_spec_names(const ExperimentConfig& c) {
  if (!c.train.specs.empty()) return c.train.specs;
  std::vector<std::string> names;
  for (const auto& s : c.forecast.specs) names.push_back(s.name);
  return names;
}

}  // namespace

Json cmd_nature(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto start = Clock::now();
  prepare_root(c);
  const Paths p{c.output_dir};
  reset_dir(p.nature());
  const NatureRun run = simulate_nature(c);
  save_nature(p.nature(), run);
  const Json details{{"scenario", fcst::to_string(c.scenario)},
                     {"samples", run.slow.cols()},
                     {"steps_per_sample", c.assim.obs.obs_every_steps},
                     {"transient_steps", c.nature.transient_steps},
                     {"slow_dims", {run.slow.cols(), run.slow.rows()}},
                     {"fast_dims", {run.fast.cols(), run.fast.rows()}}};
  finish_stage(c, p.nature(), "nature", details, start);
  log << "nature: " << run.slow.cols() << " samples of " << run.slow.rows() << " slow"
      << (run.fast.size() ? " and " + std::to_string(run.fast.rows()) + " fast" : std::string())
      << " variables\n";
  return details;
}

Json cmd_assimilate(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto start = Clock::now();
  prepare_root(c);
  const Paths p{c.output_dir};
  const NatureRun nature = load_nature(p.nature());
  const AssimRun run = assimilate(c, nature.slow);
  reset_dir(p.assim());
  save_assim(p.assim(), run, c.assim.store_members);
  const double rmse = time_mean_analysis_rmse(run.analyses, nature.slow);
  double spread = 0.0;
  for (const auto& a : run.analyses) spread += std::sqrt(a.spread.squaredNorm() / a.spread.size());
  spread /= static_cast<double>(run.analyses.size());
  const Json details{{"cycles", c.total_cycles()},
                     {"spinup_cycles_discarded", c.assim.spinup_cycles},
                     {"retained", run.analyses.size()},
                     {"members", c.assim.members},
                     {"inflation", c.filter().inflation},
                     {"localization_radius", std::isinf(c.assim.localization_radius)
                                                 ? Json("inf")
                                                 : Json(c.assim.localization_radius)},
                     {"time_mean_analysis_rmse", rmse},
                     {"time_mean_analysis_spread", spread}};
  finish_stage(c, p.assim(), "assimilate", details, start);
  log << "assimilate: " << run.analyses.size() << " analyses kept, time-mean RMSE "
      << num(rmse) << ", spread " << num(spread) << '\n';
  return details;
}

Json cmd_forecast(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto start = Clock::now();
  prepare_root(c);
  const Paths p{c.output_dir};
  const NatureRun nature = load_nature(p.nature());
  const auto analyses = load_analyses(p.assim());
  const auto datasets =
      make_datasets(c, analyses, nature.slow, c.forecast.specs, c.forecast.with_ensemble);
  const fs::path root = p.root / "forecast";
  reset_dir(root);
  std::ostringstream summary;
  summary << "spec,output_lead,samples,det_rmse,ens_rmse\n";
  Json details = Json::array();
  for (const auto& ds : datasets) {
    save_dataset(p.forecast(ds.leads.name), ds);
    const auto n = static_cast<double>(ds.truth.size());
    const double det = std::sqrt((ds.det_output - ds.truth).squaredNorm() / n);
    const double ens = ds.has_ensemble ? std::sqrt((ds.ens_mean - ds.truth).squaredNorm() / n)
                                       : std::numeric_limits<double>::quiet_NaN();
    summary << ds.leads.name << ',' << ds.leads.output_lead << ',' << ds.size() << ','
            << num(det) << ',' << num(ens) << '\n';
    details.push_back({{"spec", ds.leads.name},
                       {"samples", ds.size()},
                       {"split",
                        {ds.split.train.size(), ds.split.validation.size(), ds.split.test.size()}},
                       {"det_rmse", det},
                       {"ens_rmse", ens}});
    log << "forecast " << ds.leads.name << ": " << ds.size() << " samples, det RMSE "
        << num(det) << ", ensemble-mean RMSE " << num(ens) << '\n';
  }
  io::write_file(root / "summary.csv", summary.str());
  finish_stage(c, root, "forecast", Json{{"datasets", details}}, start);
  return details;
}

Json cmd_train(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const Paths p{c.output_dir};
  prepare_root(c);
  Json details = Json::array();
  for (const auto& name : train_spec_names(c)) {
    const auto start = Clock::now();
    const auto ds = load_dataset(p.forecast(name));
    const TrainedModels m = train_models(c, ds);
    reset_dir(p.train(name));
    save_trained(p.train(name), m);
    Json item{{"spec", name},
              {"target", nn::to_string(m.target)},
              {"mean", net_meta(m.mean())},
              {"runs_per_sweep", m.mean_sweep.runs.size()}};
    log << "train " << name << ": mean net lr " << num(m.mean().lr) << " wd "
        << num(m.mean().weight_decay) << " validation loss " << num(m.mean().validation_loss)
        << '\n';
    for (const auto& [s, sweep] : m.var_sweeps) {
      item[nn::to_string(s)] = net_meta(sweep.best());
      log << "train " << name << ": " << nn::to_string(s) << " lr " << num(sweep.best().lr)
          << " wd " << num(sweep.best().weight_decay) << " validation loss "
          << num(sweep.best().validation_loss) << '\n';
    }
    finish_stage(c, p.train(name), "train", item, start);
    details.push_back(std::move(item));
  }
  return details;
}

Json cmd_evaluate(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const Paths p{c.output_dir};
  prepare_root(c);
  Json details = Json::array();
  for (const auto& spec : c.forecast.specs) {
    const auto start = Clock::now();
    if (!fs::exists(p.forecast(spec.name) / "dataset.json")) continue;
    const auto ds = load_dataset(p.forecast(spec.name));
    const bool trained = fs::exists(p.train(spec.name) / "training.json");
    TrainedModels models;
    if (trained) models = load_trained(p.train(spec.name));
    const fs::path dir = p.evaluate(spec.name);
    reset_dir(dir);
    std::vector<SystemScores> scores;
    for (const auto& system : c.evaluate.systems) {
      if (system == "ens" && !ds.has_ensemble) continue;
      if (system != "det" && system != "ens" &&
          (!trained || !models.var_sweeps.contains(nn::strategy_from_string(system)))) {
        continue;
      }
      const verify::ScoredSet set = scored_system(c, ds, system, trained ? &models : nullptr);
      scores.push_back(score_system(c, spec.name, system, set));

      std::ostringstream pit;
      pit << "bin_low,bin_high,count,frequency\n";
      const auto& counts = scores.back().pit_counts;
      const auto bins = static_cast<double>(counts.size());
      for (std::size_t b = 0; b < counts.size(); ++b) {
        pit << num(static_cast<double>(b) / bins) << ',' << num(static_cast<double>(b + 1) / bins)
            << ',' << counts[b] << ','
            << num(static_cast<double>(counts[b]) / static_cast<double>(scores.back().pit_total))
            << '\n';
      }
      io::write_file(dir / ("pit_" + system + ".csv"), pit.str());

      const Eigen::Index len = std::min<Eigen::Index>(c.evaluate.field_dump_length, set.size());
      const fs::path fields = dir / "fields";
      io::write_columns(fields / (system + "_mean.l96a"), set.mean.leftCols(len));
      io::write_columns(fields / (system + "_sigma.l96a"), set.sigma.leftCols(len));
      io::write_columns(fields / (system + "_abs_error.l96a"),
                        (set.mean - set.reference).cwiseAbs().leftCols(len));
      if (scores.size() == 1) {
        io::write_columns(fields / "reference.l96a", set.reference.leftCols(len));
        io::write_array(fields / "valid_time_index.l96a",
                        io::from_indices({set.valid_time_index.begin(),
                                          set.valid_time_index.begin() + len}));
      }
    }
    write_metrics_csv(dir / "metrics.csv", scores);

    log << "evaluate " << spec.name << " (test samples " << ds.split.test.size() << ")\n";
    log << "  " << std::left << std::setw(8) << "system";
    for (const char* m : {"rmse", "cp", "corr", "chi2"}) log << std::right << std::setw(12) << m;
    log << '\n';
    Json systems;
    for (const auto& s : scores) {
      log << "  " << std::left << std::setw(8) << s.system;
      Json sj;
      for (const auto& r : s.reports) {
        log << std::right << std::setw(12) << (r.not_applicable ? "n/a" : num(std::round(r.value * 1e4) / 1e4));
        sj[r.metric] = r.not_applicable ? Json("not-applicable") : Json(r.value);
      }
      log << '\n';
      systems[s.system] = sj;
    }
    log.flush();
    const Json item{{"spec", spec.name},
                    {"reference", c.evaluate.reference},
                    {"pit_bins", c.evaluate.pit_bins},
                    {"systems", systems}};
    finish_stage(c, dir, "evaluate", item, start);
    details.push_back(item);
  }
  return details;
}

Json cmd_leadtime_study(const ExperimentConfig& c, std::ostream& log) {
  c.validate();
  const auto start = Clock::now();
  const Paths p{c.output_dir};
  prepare_root(c);
  const NatureRun nature = load_nature(p.nature());
  const auto analyses = load_analyses(p.assim());
  const auto rows = leadtime_study(c, analyses, nature.slow);
  reset_dir(p.leadtime());
  std::ostringstream table;
  table << "spec,input_leads,category,repeats,median_rmse,min_rmse,max_rmse,"
           "best_validation_rmse\n";
  for (const auto& r : rows) {
    const auto [lo, hi] = r.test_rmse.empty()
                              ? std::pair{std::numeric_limits<double>::quiet_NaN(),
                                          std::numeric_limits<double>::quiet_NaN()}
                              : std::pair{*std::min_element(r.test_rmse.begin(), r.test_rmse.end()),
                                          *std::max_element(r.test_rmse.begin(), r.test_rmse.end())};
    table << r.name << ',' << join(r.input_leads, " ") << ',' << r.category << ','
          << r.test_rmse.size() << ',' << num(r.median_rmse) << ',' << num(lo) << ',' << num(hi)
          << ',' << num(r.best_validation_rmse) << '\n';
    log << "leadtime " << std::left << std::setw(16) << r.name << std::setw(8) << r.category
        << " median RMSE " << num(r.median_rmse) << '\n';
  }
  io::write_file(p.leadtime() / "table.csv", table.str());
  const Json details{{"rows", rows.size()},
                     {"output_lead", c.spec(c.leadtime.base_spec).output_lead},
                     {"repeats", c.leadtime.repeats}};
  finish_stage(c, p.leadtime(), "leadtime-study", details, start);
  return details;
}

Json cmd_all(const ExperimentConfig& c, std::ostream& log) {
  Json out;
  out["nature"] = cmd_nature(c, log);
  out["assimilate"] = cmd_assimilate(c, log);
  out["forecast"] = cmd_forecast(c, log);
  out["train"] = cmd_train(c, log);
  out["evaluate"] = cmd_evaluate(c, log);
  return out;
}

}  // namespace l96uq::pipe
