#pragma once

#include "l96uq/assim.hpp"
#include "l96uq/config.hpp"
#include "l96uq/forecastgen.hpp"
#include "l96uq/training.hpp"
#include "l96uq/verify.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

/// Experiment stages and their on-disk layout:
///
///   <out>/config.json
///   <out>/nature/       slow.l96a [T, s], fast.l96a [T, s*J] (IMS)
///   <out>/assim/        observations, analysis mean/spread/members, time index
///   <out>/forecast/<T>/ one dataset per lead-time spec
///   <out>/train/<T>/    normalization, mean/ and one directory per strategy
///   <out>/evaluate/<T>/ metrics.csv, pit_<system>.csv, fields/
///   <out>/leadtime/     table.csv
///
/// Each stage directory carries its own manifest.json; <out>/manifest.json
/// lists every file of the run.
namespace l96uq::pipe {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using cfg::ExperimentConfig;

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Paths {
  fs::path root;

  fs::path nature() const { return root / "nature"; }
  fs::path assim() const { return root / "assim"; }
  fs::path forecast(const std::string& spec) const { return root / "forecast" / spec; }
  fs::path train(const std::string& spec) const { return root / "train" / spec; }
  fs::path evaluate(const std::string& spec) const { return root / "evaluate" / spec; }
  fs::path leadtime() const { return root / "leadtime"; }
};

/// Model the nature run integrates (packed two-scale state for IMS).
dyn::Model nature_model(const ExperimentConfig& c);
/// Model used for assimilation and forecasts.
dyn::Model forecast_model(const ExperimentConfig& c);

nn::TrainConfig train_config(const ExperimentConfig& c);
verify::BootstrapOptions bootstrap_options(const ExperimentConfig& c, const std::string& key);

struct NatureRun {
  /// One column per analysis cycle, the initial state first.
  Eigen::MatrixXd slow;
  /// Fast variables (IMS only), same columns as slow.
  Eigen::MatrixXd fast;
};

NatureRun simulate_nature(const ExperimentConfig& c);

struct AssimRun {
  std::vector<da::ObservationRecord> observations;
  /// Retained analyses (spinup discarded).
  std::vector<da::AnalysisRecord> analyses;
};

AssimRun assimilate(const ExperimentConfig& c, const Eigen::MatrixXd& nature_slow);

/// Mean over cycles of the per-cycle analysis-mean RMSE against truth.
double time_mean_analysis_rmse(const std::vector<da::AnalysisRecord>& analyses,
                               const Eigen::MatrixXd& nature_slow);

std::vector<fcst::ForecastDataset> make_datasets(
    const ExperimentConfig& c, const std::vector<da::AnalysisRecord>& analyses,
    const Eigen::MatrixXd& nature_slow, const std::vector<fcst::LeadTimeSpec>& specs,
    bool with_ensemble);

struct TrainedModels {
  nn::Normalization norm;
  nn::TargetSource target = nn::TargetSource::Analysis;
  nn::SweepResult mean_sweep;
  std::map<nn::VarianceStrategy, nn::SweepResult> var_sweeps;

  const nn::TrainedNet& mean() const { return mean_sweep.best(); }
  const nn::TrainedNet& var(nn::VarianceStrategy s) const;
};

/// Mean-network sweep, then one variance sweep per configured strategy.
TrainedModels train_models(const ExperimentConfig& c, const fcst::ForecastDataset& ds);

/// Test-split forecast of one system scored against the configured
/// reference. `system` is det, ens or a variance strategy name.
verify::ScoredSet scored_system(const ExperimentConfig& c, const fcst::ForecastDataset& ds,
                                const std::string& system, const TrainedModels* models);

struct SystemScores {
  std::string system;
  std::vector<verify::MetricReport> reports;  // rmse, cp, corr, chi2
  std::vector<std::int64_t> pit_counts;
  std::int64_t pit_total = 0;

  const verify::MetricReport& metric(const std::string& name) const;
};

SystemScores score_system(const ExperimentConfig& c, const std::string& spec,
                          const std::string& system, const verify::ScoredSet& set);

// Persistence.
void save_nature(const fs::path& dir, const NatureRun& run);
NatureRun load_nature(const fs::path& dir);
void save_assim(const fs::path& dir, const AssimRun& run, bool store_members);
std::vector<da::AnalysisRecord> load_analyses(const fs::path& dir);
void save_dataset(const fs::path& dir, const fcst::ForecastDataset& ds);
fcst::ForecastDataset load_dataset(const fs::path& dir);
void save_trained(const fs::path& dir, const TrainedModels& m);
TrainedModels load_trained(const fs::path& dir);
void write_metrics_csv(const fs::path& path, const std::vector<SystemScores>& scores);

struct LeadtimeRow {
  std::string name;
  std::vector<int> input_leads;
  /// "prior" (some lead before the output lead), "later" (only leads at or
  /// after it, at least one after) or "output" (the output lead alone).
  std::string category;
  std::vector<double> test_rmse;  // one per repeat
  double median_rmse = 0.0;
  /// Test RMSE of the repeat with the lowest validation loss.
  double best_validation_rmse = 0.0;
};

std::string leadtime_category(const std::vector<int>& input_leads, int output_lead);
std::vector<LeadtimeRow> leadtime_study(const ExperimentConfig& c,
                                        const std::vector<da::AnalysisRecord>& analyses,
                                        const Eigen::MatrixXd& nature_slow);

// Commands. Each reads earlier stages from c.output_dir, writes its stage
// directory with a manifest, refreshes the root manifest and returns a
// short summary.
Json cmd_nature(const ExperimentConfig& c, std::ostream& log);
Json cmd_assimilate(const ExperimentConfig& c, std::ostream& log);
Json cmd_forecast(const ExperimentConfig& c, std::ostream& log);
Json cmd_train(const ExperimentConfig& c, std::ostream& log);
Json cmd_evaluate(const ExperimentConfig& c, std::ostream& log);
Json cmd_leadtime_study(const ExperimentConfig& c, std::ostream& log);
/// nature, assimilate, forecast, train and evaluate in sequence.
Json cmd_all(const ExperimentConfig& c, std::ostream& log);

void write_root_manifest(const ExperimentConfig& c);

}  // namespace l96uq::pipe
