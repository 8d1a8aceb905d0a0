#include "l96uq/forecastgen.hpp"

#include "l96uq/parallel.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace l96uq::fcst {

std::string to_string(Scenario s) { return s == Scenario::Pms ? "PMS" : "IMS"; }

Scenario scenario_from_string(const std::string& text) {
  if (text == "PMS" || text == "pms") return Scenario::Pms;
  if (text == "IMS" || text == "ims") return Scenario::Ims;
  throw std::invalid_argument("unknown scenario '" + text + "' (expected PMS or IMS)");
}

void LeadTimeSpec::validate() const {
  if (input_leads.empty()) throw std::invalid_argument("lead spec " + name + ": no input leads");
  for (std::size_t k = 0; k < input_leads.size(); ++k) {
    if (input_leads[k] < 0 || input_leads[k] > kMaxLead) {
      throw std::invalid_argument("lead spec " + name + ": input lead outside [0, 280]");
    }
    if (k > 0 && input_leads[k] <= input_leads[k - 1]) {
      throw std::invalid_argument("lead spec " + name + ": input leads must be strictly increasing");
    }
  }
  if (output_lead < 0 || output_lead > kMaxLead) {
    throw std::invalid_argument("lead spec " + name + ": output lead outside [0, 280]");
  }
}

std::vector<int> LeadTimeSpec::required_leads() const {
  std::set<int> leads(input_leads.begin(), input_leads.end());
  leads.insert(output_lead);
  return {leads.begin(), leads.end()};
}

LeadTimeSpec lead_spec_t4() { return {"T4", 4, {0, 4}}; }
LeadTimeSpec lead_spec_t80() { return {"T80", 80, {0, 40, 80}}; }
LeadTimeSpec lead_spec_t160() { return {"T160", 160, {0, 80, 160}}; }

EnsembleMoments ensemble_moments(const Eigen::MatrixXd& members) {
  EnsembleMoments m;
  m.mean = members.rowwise().mean();
  const Eigen::MatrixXd anomalies = members.colwise() - m.mean;
  m.variance = anomalies.rowwise().squaredNorm() /
               static_cast<double>(members.cols() - 1);
  return m;
}

namespace {

std::vector<int> sorted_unique(std::vector<int> leads) {
  std::sort(leads.begin(), leads.end());
  leads.erase(std::unique(leads.begin(), leads.end()), leads.end());
  for (int l : leads) {
    if (l < 0 || l > kMaxLead) throw std::invalid_argument("forecast lead outside [0, 280]");
  }
  return leads;
}

}  // namespace

std::map<int, Eigen::VectorXd> run_deterministic_forecast(
    const Eigen::VectorXd& analysis_mean, const dyn::Model& model,
    const std::vector<int>& leads) {
  const std::vector<int> sorted = sorted_unique(leads);
  std::map<int, Eigen::VectorXd> out;
  Eigen::VectorXd x = analysis_mean;
  dyn::Rk4Stepper stepper;
  int now = 0;
  for (int lead : sorted) {
    model.advance(x, lead - now, stepper);
    now = lead;
    out.emplace(lead, x);
  }
  return out;
}

std::map<int, EnsembleMoments> run_ensemble_forecast(
    const da::EnsembleState& analysis, const dyn::Model& model,
    const std::vector<int>& leads) {
  analysis.validate();
  const std::vector<int> sorted = sorted_unique(leads);
  Eigen::MatrixXd members = analysis.members;
  std::map<int, EnsembleMoments> out;
  dyn::Rk4Stepper stepper;
  Eigen::VectorXd x(members.rows());
  int now = 0;
  for (int lead : sorted) {
    for (Eigen::Index m = 0; m < members.cols(); ++m) {
      x = members.col(m);
      model.advance(x, lead - now, stepper);
      members.col(m) = x;
    }
    now = lead;
    out.emplace(lead, ensemble_moments(members));
  }
  return out;
}

DatasetSplit make_split(Eigen::Index n_samples, Eigen::Index train,
                        Eigen::Index validation, Eigen::Index test) {
  if (train < 1 || validation < 1 || test < 0) {
    throw std::invalid_argument("make_split: train and validation sizes must be positive");
  }
  if (n_samples < train + validation + 1) {
    throw std::invalid_argument(
        "make_split: " + std::to_string(n_samples) +
        " samples cannot hold the requested train and validation sets plus a test set");
  }
  DatasetSplit s;
  s.train = {0, train};
  s.validation = {train, train + validation};
  s.test = {train + validation, std::min(n_samples, train + validation + test)};
  return s;
}

ForecastSample ForecastDataset::sample(Eigen::Index k) const {
  ForecastSample s;
  s.init_time_index = init_index.at(static_cast<std::size_t>(k));
  for (std::size_t l = 0; l < leads.input_leads.size(); ++l) {
    s.det_states.emplace(leads.input_leads[l], det[l].col(k));
  }
  s.det_states.emplace(leads.output_lead, det_output.col(k));
  if (has_ensemble) {
    s.ens_mean = ens_mean.col(k);
    s.ens_var = ens_var.col(k);
  }
  s.analysis_target = analysis_target.col(k);
  s.truth = truth.col(k);
  return s;
}

Eigen::MatrixXd ForecastDataset::inputs() const {
  const Eigen::Index s = state_dim();
  Eigen::MatrixXd x(s * static_cast<Eigen::Index>(det.size()), size());
  for (std::size_t l = 0; l < det.size(); ++l) {
    x.middleRows(static_cast<Eigen::Index>(l) * s, s) = det[l];
  }
  return x;
}

namespace {

struct InitResult {
  bool ok = false;
  std::map<int, Eigen::VectorXd> det;
  std::map<int, EnsembleMoments> ens;
};

}  // namespace

std::vector<ForecastDataset> build_datasets(
    const std::vector<da::AnalysisRecord>& analyses,
    const Eigen::MatrixXd& nature_slow, const dyn::Model& model,
    int steps_per_cycle, const std::vector<LeadTimeSpec>& specs,
    const BuildOptions& options, std::vector<std::int64_t>* dropped) {
  if (steps_per_cycle < 1) throw std::invalid_argument("steps_per_cycle must be >= 1");
  if (options.init_stride < 1) throw std::invalid_argument("init_stride must be >= 1");
  if (specs.empty()) return {};
  for (const LeadTimeSpec& spec : specs) {
    spec.validate();
    if (spec.output_lead % steps_per_cycle != 0) {
      throw std::invalid_argument("lead spec " + spec.name +
                                  ": output lead is not a whole number of analysis cycles");
    }
  }
  const auto n_analyses = static_cast<std::int64_t>(analyses.size());
  std::vector<std::int64_t> cycles_ahead;
  for (const LeadTimeSpec& spec : specs) cycles_ahead.push_back(spec.output_lead / steps_per_cycle);

  auto spec_valid_at = [&](std::size_t s, std::int64_t k) {
    return k + cycles_ahead[s] < n_analyses;
  };

  std::vector<std::int64_t> inits;
  for (std::int64_t k = 0; k < n_analyses; k += options.init_stride) {
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (spec_valid_at(s, k)) {
        inits.push_back(k);
        break;
      }
    }
  }
  for (const LeadTimeSpec& spec : specs) {
    const std::int64_t ahead = spec.output_lead / steps_per_cycle;
    if (n_analyses - ahead < 1) {
      throw std::invalid_argument("lead spec " + spec.name +
                                  ": insufficient trailing analyses for the output lead");
    }
  }

  std::vector<InitResult> results(inits.size());
  parallel_for(inits.size(), options.threads, [&](std::size_t w) {
    const std::int64_t k = inits[w];
    std::vector<int> det_leads;
    std::vector<int> ens_leads;
    for (std::size_t s = 0; s < specs.size(); ++s) {
      if (!spec_valid_at(s, k)) continue;
      for (int l : specs[s].required_leads()) det_leads.push_back(l);
      ens_leads.push_back(specs[s].output_lead);
    }
    const da::AnalysisRecord& a = analyses[static_cast<std::size_t>(k)];
    InitResult r;
    try {
      r.det = run_deterministic_forecast(a.mean, model, det_leads);
      if (options.with_ensemble) r.ens = run_ensemble_forecast(a.ensemble, model, ens_leads);
      r.ok = true;
    } catch (const dyn::IntegrationBlowUp&) {
      r.ok = false;
    }
    results[w] = std::move(r);
  });

  if (dropped) {
    dropped->clear();
    for (std::size_t w = 0; w < inits.size(); ++w) {
      if (!results[w].ok) dropped->push_back(inits[w]);
    }
  }

  const Eigen::Index dim = analyses.front().mean.size();
  std::vector<ForecastDataset> datasets;
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const LeadTimeSpec& spec = specs[s];
    std::vector<std::size_t> members;
    for (std::size_t w = 0; w < inits.size(); ++w) {
      if (results[w].ok && spec_valid_at(s, inits[w])) members.push_back(w);
    }
    const auto M = static_cast<Eigen::Index>(members.size());
    ForecastDataset ds;
    ds.leads = spec;
    ds.has_ensemble = options.with_ensemble;
    ds.det.assign(spec.input_leads.size(), Eigen::MatrixXd(dim, M));
    ds.det_output.resize(dim, M);
    ds.analysis_target.resize(dim, M);
    ds.truth.resize(dim, M);
    if (ds.has_ensemble) {
      ds.ens_mean.resize(dim, M);
      ds.ens_var.resize(dim, M);
    }
    for (Eigen::Index c = 0; c < M; ++c) {
      const std::size_t w = members[static_cast<std::size_t>(c)];
      const std::int64_t k = inits[w];
      const InitResult& r = results[w];
      const da::AnalysisRecord& target =
          analyses[static_cast<std::size_t>(k + cycles_ahead[s])];
      ds.init_index.push_back(k);
      ds.valid_time_index.push_back(target.time_index);
      for (std::size_t l = 0; l < spec.input_leads.size(); ++l) {
        ds.det[l].col(c) = r.det.at(spec.input_leads[l]);
      }
      ds.det_output.col(c) = r.det.at(spec.output_lead);
      if (ds.has_ensemble) {
        const EnsembleMoments& em = r.ens.at(spec.output_lead);
        ds.ens_mean.col(c) = em.mean;
        ds.ens_var.col(c) = em.variance;
      }
      ds.analysis_target.col(c) = target.mean;
      if (target.time_index < 0 || target.time_index >= nature_slow.cols()) {
        throw std::out_of_range("build_datasets: nature does not cover analysis time " +
                                std::to_string(target.time_index));
      }
      ds.truth.col(c) = nature_slow.col(target.time_index).head(dim);
    }
    ds.split = make_split(M, options.train_size, options.validation_size, options.test_size);
    datasets.push_back(std::move(ds));
  }
  return datasets;
}

ForecastDataset build_dataset(const std::vector<da::AnalysisRecord>& analyses,
                              const Eigen::MatrixXd& nature_slow,
                              const dyn::Model& model, int steps_per_cycle,
                              const LeadTimeSpec& spec,
                              const BuildOptions& options) {
  return build_datasets(analyses, nature_slow, model, steps_per_cycle, {spec}, options)
      .front();
}

}  // namespace l96uq::fcst
