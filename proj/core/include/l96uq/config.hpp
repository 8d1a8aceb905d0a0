#pragma once

#include "l96uq/assim.hpp"
#include "l96uq/dyncore.hpp"
#include "l96uq/forecastgen.hpp"
#include "l96uq/training.hpp"
#include "l96uq/verify.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

/// Experiment configuration: one JSON document with every default embedded
/// in the binary. A user file only needs the keys it changes.
namespace l96uq::cfg {

using Json = nlohmann::ordered_json;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  double dt = 0.0125;
  /// Perfect-model scenario: single-scale nature and forecast model.
  dyn::SingleScaleParams pms{8, 8.0};
  /// Imperfect-model scenario nature.
  dyn::TwoScaleParams ims{8, 32, 20.0, 1.0, 10.0, 10.0};
  int ims_substeps = 5;
  /// Imperfect-model forecast model: single-scale L96 plus alpha x + beta.
  dyn::SurrogateParams surrogate{{8, 0.0}, -0.81, 19.16};
};

struct NatureConfig {
  /// Steps integrated and discarded before the first stored state.
  long transient_steps = 1600;
  /// Standard deviation of the random perturbation of the initial state.
  double init_perturbation = 1.0;
  /// Fast-variable initial amplitude (two-scale nature only).
  double init_fast_amplitude = 0.1;
};

struct AssimConfig {
  int members = 50;
  da::ObsNetwork obs{4, 1.0, 0.0125};
  /// Multiplicative inflation per scenario; model error in the imperfect
  /// scenario needs considerably more.
  double inflation_pms = 1.02;
  double inflation_ims = 1.3;
  double localization_radius = std::numeric_limits<double>::infinity();
  /// Analyses retained after the spinup cycles.
  long cycles = 13000;
  long spinup_cycles = 650;
  double init_spread = 1.0;
  bool store_members = true;
};

struct ForecastConfig {
  std::vector<fcst::LeadTimeSpec> specs{fcst::lead_spec_t4(), fcst::lead_spec_t80(),
                                        fcst::lead_spec_t160()};
  bool with_ensemble = true;
  int init_stride = 1;
  long train_size = 7000;
  long validation_size = 3000;
  long test_size = 3000;
};

struct TrainSection {
  nn::TrainConfig train{};
  std::vector<nn::VarianceStrategy> strategies{
      nn::VarianceStrategy::NnMse, nn::VarianceStrategy::NnExt, nn::VarianceStrategy::NnLik};
  nn::TargetSource target = nn::TargetSource::Analysis;
  /// Lead-time spec names to train; empty means all.
  std::vector<std::string> specs;
};

struct EvaluateConfig {
  double confidence = 0.9;
  int pit_bins = 10;
  verify::BootstrapOptions bootstrap{};
  /// Reference the forecasts are scored against.
  std::string reference = "truth";
  std::vector<std::string> systems{"det", "ens", "nn-mse", "nn-ext", "nn-lik"};
  /// Valid times per field dump written for the spatio-temporal maps.
  long field_dump_length = 200;
};

struct LeadtimeConfig {
  std::string base_spec = "T80";
  std::vector<std::vector<int>> input_sets;
  int repeats = 10;
  double lr = 1e-3;
  double weight_decay = 0.0;
};

struct ExperimentConfig {
  fcst::Scenario scenario = fcst::Scenario::Pms;
  std::uint64_t seed = 20240611;
  int threads = 1;
  std::string output_dir = "out";
  ModelConfig model;
  NatureConfig nature;
  AssimConfig assim;
  ForecastConfig forecast;
  TrainSection train;
  EvaluateConfig evaluate;
  LeadtimeConfig leadtime;

  void validate() const;
  /// Nature trajectory samples: one per analysis cycle plus the initial one.
  long total_cycles() const { return assim.cycles + assim.spinup_cycles; }
  const fcst::LeadTimeSpec& spec(const std::string& name) const;
  /// Filter settings for the configured scenario.
  da::FilterConfig filter() const;
};

/// Default input sets of the lead-time study (output lead 80).
std::vector<std::vector<int>> default_leadtime_inputs();

ExperimentConfig defaults();
/// Shrinks cycles, grid and repeats so the whole pipeline runs in minutes.
void apply_quick_profile(ExperimentConfig& c);

Json to_json(const ExperimentConfig& c);
/// Missing keys keep their current values; unknown keys are rejected.
void merge_json(ExperimentConfig& c, const Json& j);
ExperimentConfig from_json(const Json& j);

ExperimentConfig load(const std::filesystem::path& path);
void save(const ExperimentConfig& c, const std::filesystem::path& path);

}  // namespace l96uq::cfg
