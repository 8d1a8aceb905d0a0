#pragma once

#include "l96uq/assim.hpp"
#include "l96uq/dyncore.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

/// Deterministic and ensemble forecasts from the analyses, assembled into
/// training/verification datasets.
namespace l96uq::fcst {

/// Largest lead (in model steps) any forecast may request.
inline constexpr int kMaxLead = 280;

enum class Scenario { Pms, Ims };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& text);

struct LeadTimeSpec {
  std::string name;
  int output_lead = 80;
  std::vector<int> input_leads{0, 40, 80};

  void validate() const;
  /// Every lead that needs a deterministic state, sorted and unique.
  std::vector<int> required_leads() const;
};

/// The three lead-time configurations used throughout the experiments.
LeadTimeSpec lead_spec_t4();
LeadTimeSpec lead_spec_t80();
LeadTimeSpec lead_spec_t160();

struct EnsembleMoments {
  Eigen::VectorXd mean;
  /// Per-variable sample variance, N - 1 denominator.
  Eigen::VectorXd variance;
};

/// One integration from the analysis mean; states captured at each lead.
std::map<int, Eigen::VectorXd> run_deterministic_forecast(
    const Eigen::VectorXd& analysis_mean, const dyn::Model& model,
    const std::vector<int>& leads);

/// Every member integrated with the same model; mean and variance per lead.
std::map<int, EnsembleMoments> run_ensemble_forecast(
    const da::EnsembleState& analysis, const dyn::Model& model,
    const std::vector<int>& leads);

/// Sample moments of the columns of `members` (mean, N - 1 variance).
EnsembleMoments ensemble_moments(const Eigen::MatrixXd& members);

struct IndexRange {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;
  Eigen::Index size() const { return end - begin; }
};

/// Chronological, contiguous, disjoint split of the sample sequence.
struct DatasetSplit {
  IndexRange train;
  IndexRange validation;
  IndexRange test;
};

/// Requested sizes are honoured for train and validation; the test range is
/// truncated at the tail when fewer samples exist.
DatasetSplit make_split(Eigen::Index n_samples, Eigen::Index train,
                        Eigen::Index validation, Eigen::Index test);

/// One record of a dataset.
struct ForecastSample {
  std::int64_t init_time_index = 0;
  std::map<int, Eigen::VectorXd> det_states;
  Eigen::VectorXd ens_mean;
  Eigen::VectorXd ens_var;
  Eigen::VectorXd analysis_target;
  Eigen::VectorXd truth;
};

/// Column-per-sample storage of a dataset for one LeadTimeSpec.
struct ForecastDataset {
  LeadTimeSpec leads;
  /// Position of the initializing analysis within the analysis sequence.
  std::vector<std::int64_t> init_index;
  /// Nature column of the verification time.
  std::vector<std::int64_t> valid_time_index;
  /// One s x M matrix per entry of leads.input_leads.
  std::vector<Eigen::MatrixXd> det;
  /// Deterministic forecast at the output lead (s x M).
  Eigen::MatrixXd det_output;
  Eigen::MatrixXd ens_mean;
  Eigen::MatrixXd ens_var;
  Eigen::MatrixXd analysis_target;
  Eigen::MatrixXd truth;
  bool has_ensemble = false;
  DatasetSplit split;

  Eigen::Index size() const { return analysis_target.cols(); }
  Eigen::Index state_dim() const { return analysis_target.rows(); }
  ForecastSample sample(Eigen::Index k) const;
  /// Stacked network input (s * L rows, one column per sample), input leads
  /// in the order of leads.input_leads.
  Eigen::MatrixXd inputs() const;
};

struct BuildOptions {
  bool with_ensemble = true;
  /// Only every stride-th analysis initializes a sample.
  int init_stride = 1;
  int threads = 1;
  Eigen::Index train_size = 7000;
  Eigen::Index validation_size = 3000;
  Eigen::Index test_size = 3000;
};

/// Runs the forecasts for every spec in one pass per initialization (the
/// union of all requested leads) and slices the results into one dataset
/// per spec. `analyses` are the retained (post-spinup) cycles, spaced
/// `steps_per_cycle` model steps apart; `nature_slow` holds the true slow
/// state at each analysis time_index (one column per nature sample).
///
/// A sample at init k takes its analysis target from analyses[k + lead /
/// steps_per_cycle]. Samples whose forecast blows up are dropped and
/// reported in `dropped` when non-null.
std::vector<ForecastDataset> build_datasets(
    const std::vector<da::AnalysisRecord>& analyses,
    const Eigen::MatrixXd& nature_slow, const dyn::Model& model,
    int steps_per_cycle, const std::vector<LeadTimeSpec>& specs,
    const BuildOptions& options, std::vector<std::int64_t>* dropped = nullptr);

ForecastDataset build_dataset(const std::vector<da::AnalysisRecord>& analyses,
                              const Eigen::MatrixXd& nature_slow,
                              const dyn::Model& model, int steps_per_cycle,
                              const LeadTimeSpec& spec,
                              const BuildOptions& options);


}  // namespace l96uq::fcst
