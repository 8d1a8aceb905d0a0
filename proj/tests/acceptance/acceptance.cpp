// Acceptance suite: one PASS/FAIL line per criterion.
//
//   l96uq_acceptance --suite fast   criteria 1-7 (oracles, determinism)
//   l96uq_acceptance --suite full   criteria 8-15 (full-profile experiments)
//
// The full suite caches nature, assimilation and forecast data under
// --work and reuses them while the configuration is unchanged.

#include "l96uq/array_file.hpp"
#include "l96uq/config.hpp"
#include "l96uq/manifest.hpp"
#include "l96uq/pipeline.hpp"
#include "l96uq/selftest.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace {

namespace fs = std::filesystem;
using namespace l96uq;
using cfg::ExperimentConfig;

struct Outcome {
  int id = 0;
  bool passed = false;
  std::string detail;
};

class Report {
 public:
  void add(int id, bool passed, const std::string& detail) {
    outcomes_.push_back({id, passed, detail});
    std::cout << "criterion " << std::setw(2) << id << ": " << (passed ? "PASS" : "FAIL")
              << "  " << detail << std::endl;
  }

  /// Exit status: failures outside `tolerated` are errors.
  int finish(const std::set<int>& tolerated) const {
    int unexpected = 0;
    int tolerated_red = 0;
    for (const auto& o : outcomes_) {
      if (o.passed) continue;
      if (tolerated.count(o.id)) {
        ++tolerated_red;
      } else {
        ++unexpected;
      }
    }
    std::cout << "summary: " << outcomes_.size() - static_cast<std::size_t>(unexpected + tolerated_red)
              << " passed, " << unexpected + tolerated_red << " failed";
    if (tolerated_red) std::cout << " (" << tolerated_red << " known red)";
    std::cout << std::endl;
    return unexpected ? 1 : 0;
  }

 private:
  std::vector<Outcome> outcomes_;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// Fast suite

void run_oracle(Report& report, int id, const selftest::Check& check) {
  report.add(id, check.passed, check.name + ": " + check.detail);
}

/// Relative path -> content hash for every non-manifest file under dir.
std::map<std::string, std::string> file_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : io::scan_files(dir)) out[e.path] = e.sha1;
  return out;
}

std::vector<fs::path> manifests(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "manifest.json") {
      out.push_back(fs::relative(e.path(), dir));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void determinism(Report& report, const fs::path& work) {
  ExperimentConfig c = cfg::defaults();
  cfg::apply_quick_profile(c);
  c.threads = 1;
  const fs::path base = work / "determinism";
  const fs::path run_dir = base / "run";
  const fs::path first = base / "first";
  fs::remove_all(base);
  c.output_dir = run_dir.string();

  std::ostringstream log;
  const Stopwatch clock;
  pipe::cmd_all(c, log);
  fs::rename(run_dir, first);
  pipe::cmd_all(c, log);

  const auto a = file_hashes(first);
  const auto b = file_hashes(run_dir);
  std::vector<std::string> problems;
  if (a.size() != b.size()) {
    problems.push_back("file count " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  for (const auto& [path, sha] : a) {
    const auto it = b.find(path);
    if (it == b.end()) {
      problems.push_back(path + " missing in second run");
    } else if (it->second != sha) {
      problems.push_back(path + " differs");
    }
  }
  const auto ma = manifests(first);
  if (ma != manifests(run_dir)) problems.push_back("manifest sets differ");
  for (const auto& m : ma) {
    const auto ja = io::stable_manifest(cfg::Json::parse(io::read_file(first / m)));
    const auto jb = io::stable_manifest(cfg::Json::parse(io::read_file(run_dir / m)));
    if (ja != jb) problems.push_back(m.string() + " differs beyond timing");
  }
  for (const fs::path& dir : {first, run_dir}) {
    for (const auto& p : io::check_manifest(dir)) problems.push_back(p);
  }

  std::string detail = "quick pipeline twice, " + std::to_string(a.size()) + " files and " +
                       std::to_string(ma.size()) + " manifests compared in " +
                       fmt(clock.seconds(), 3) + " s";
  if (!problems.empty()) detail += "; first problem: " + problems.front();
  report.add(7, problems.empty(), detail);
  if (problems.empty()) fs::remove_all(base);
}

void fast_suite(Report& report, const fs::path& work) {
  run_oracle(report, 1, selftest::tendency_oracles());
  run_oracle(report, 2, selftest::rk4_order());
  run_oracle(report, 3, selftest::letkf_kalman());
  run_oracle(report, 4, selftest::gradient_checks());
  run_oracle(report, 5, selftest::loss_minimizers());
  run_oracle(report, 6, selftest::metric_oracles());
  determinism(report, work);
}

// ---------------------------------------------------------------------------
// Full suite

struct Prepared {
  ExperimentConfig config;
  Eigen::MatrixXd nature_slow;
  std::vector<da::AnalysisRecord> analyses;
  std::map<std::string, fcst::ForecastDataset> datasets;
};

/// Nature, assimilation and forecasts for one scenario, reused from `work`
/// when a previous run with the identical configuration left them intact.
Prepared prepare(const fs::path& work, fcst::Scenario scenario, int threads) {
  Prepared p;
  ExperimentConfig& c = p.config;
  c = cfg::defaults();
  c.scenario = scenario;
  c.threads = threads;
  const std::string name = fcst::to_string(scenario);
  c.output_dir = (work / name).string();
  c.validate();

  const fs::path stamp = work / (name + ".config.json");
  cfg::Json prep = cfg::to_json(c);
  prep.erase("threads");
  prep.erase("train");
  prep.erase("evaluate");
  prep.erase("leadtime");
  const pipe::Paths paths{c.output_dir};
  const bool cached = fs::exists(stamp) && fs::exists(paths.forecast("") / "manifest.json") &&
                      cfg::Json::parse(io::read_file(stamp)) == prep &&
                      io::check_manifest(c.output_dir).empty();
  if (!cached) {
    fs::remove(stamp);
    std::ostringstream log;
    pipe::cmd_nature(c, log);
    pipe::cmd_assimilate(c, log);
    pipe::cmd_forecast(c, log);
    io::write_file(stamp, prep.dump(2) + "\n");
  }
  std::cout << "  " << name << " data " << (cached ? "reused from " : "generated in ")
            << c.output_dir << std::endl;
  p.nature_slow = pipe::load_nature(paths.nature()).slow;
  p.analyses = pipe::load_analyses(paths.assim());
  for (const auto& spec : c.forecast.specs) {
    p.datasets.emplace(spec.name, pipe::load_dataset(paths.forecast(spec.name)));
  }
  return p;
}

struct Scores {
  double rmse = 0.0;
  double cp = 0.0;
  double corr = std::nan("");  // NaN: not applicable
  double chi2 = 0.0;
};

Scores score(const ExperimentConfig& c, const verify::ScoredSet& set) {
  Scores s;
  s.rmse = verify::rmse(set);
  s.cp = verify::coverage_probability(set, c.evaluate.confidence);
  try {
    s.corr = verify::sigma_error_correlation(set);
  } catch (const verify::UndefinedCorrelation&) {
  }
  const bool static_sigma =
      ((set.sigma.colwise() - set.sigma.col(0)).array() == 0.0).all();
  if (static_sigma) s.corr = std::nan("");
  s.chi2 = verify::pit_chi2(set, c.evaluate.pit_bins);
  return s;
}

/// Median over the sweep seeds of every system's scores.
using Table = std::map<std::string, Scores>;

struct Experiment {
  std::string label;
  std::vector<Table> per_seed;

  double med(const std::string& system, double Scores::*field) const {
    std::vector<double> v;
    for (const auto& t : per_seed) v.push_back(t.at(system).*field);
    return median(v);
  }
};

/// Reduced-grid sweeps repeated over `seeds` training seeds.
Experiment run_experiment(const Prepared& p, const std::string& spec,
                          const std::vector<nn::VarianceStrategy>& strategies,
                          nn::TargetSource target, int seeds) {
  Experiment e;
  e.label = fcst::to_string(p.config.scenario) + " " + spec + " (" + nn::to_string(target) +
            " target)";
  const fcst::ForecastDataset& ds = p.datasets.at(spec);
  for (int k = 0; k < seeds; ++k) {
    const Stopwatch clock;
    ExperimentConfig c = p.config;
    c.seed = p.config.seed + static_cast<std::uint64_t>(k);
    c.train.train.lr_grid = {1e-3, 1e-4};
    c.train.train.wd_grid = {0.0};
    c.train.train.repeats = 1;
    c.train.strategies = strategies;
    c.train.target = target;
    const pipe::TrainedModels models = pipe::train_models(c, ds);

    Table t;
    for (const std::string system : {"det", "ens"}) {
      t[system] = score(c, pipe::scored_system(c, ds, system, nullptr));
    }
    for (const auto s : strategies) {
      t[nn::to_string(s)] = score(c, pipe::scored_system(c, ds, nn::to_string(s), &models));
    }
    e.per_seed.push_back(t);
    std::cout << "  " << e.label << " seed " << k << ":";
    for (const auto& [system, sc] : t) {
      std::cout << ' ' << system << " rmse " << fmt(sc.rmse) << " cp " << fmt(sc.cp, 3);
    }
    std::cout << " (" << fmt(clock.seconds(), 3) << " s)" << std::endl;
  }
  return e;
}

void full_suite(Report& report, const fs::path& work, int threads, int seeds) {
  const Prepared pms = prepare(work, fcst::Scenario::Pms, threads);
  const Prepared ims = prepare(work, fcst::Scenario::Ims, threads);

  // 8: assimilation quality.
  {
    const double rmse = pipe::time_mean_analysis_rmse(pms.analyses, pms.nature_slow);
    const double sigma_r = pms.config.assim.obs.sigma_r;
    report.add(8, rmse < sigma_r,
               "PMS time-mean analysis RMSE " + fmt(rmse) + " < sigma_R " + fmt(sigma_r));
  }

  // 9: deterministic error growth.
  {
    bool ok = true;
    std::ostringstream d;
    std::map<std::string, std::vector<double>> by_scenario;
    for (const Prepared* p : {&pms, &ims}) {
      const std::string name = fcst::to_string(p->config.scenario);
      d << name;
      for (const auto& spec : p->config.forecast.specs) {
        const verify::ScoredSet set =
            pipe::scored_system(p->config, p->datasets.at(spec.name), "det", nullptr);
        by_scenario[name].push_back(verify::rmse(set));
        d << ' ' << spec.name << ' ' << fmt(by_scenario[name].back());
      }
      d << "; ";
      const auto& v = by_scenario[name];
      for (std::size_t k = 1; k < v.size(); ++k) ok = ok && v[k] > v[k - 1];
    }
    const auto& a = by_scenario[fcst::to_string(fcst::Scenario::Pms)];
    const auto& b = by_scenario[fcst::to_string(fcst::Scenario::Ims)];
    for (std::size_t k = 0; k < a.size(); ++k) ok = ok && b[k] > a[k];
    d << "monotone growth and IMS above PMS at every lead";
    report.add(9, ok, d.str());
  }

  using VS = nn::VarianceStrategy;
  const Experiment t4a = run_experiment(pms, "T4", {VS::NnLik}, nn::TargetSource::Analysis, seeds);
  const Experiment t4t = run_experiment(pms, "T4", {VS::NnLik}, nn::TargetSource::Truth, seeds);
  const Experiment p160 = run_experiment(pms, "T160", {VS::NnLik}, nn::TargetSource::Analysis, seeds);
  const Experiment i80 =
      run_experiment(ims, "T80", {VS::NnExt, VS::NnLik}, nn::TargetSource::Analysis, seeds);
  const Experiment i160 =
      run_experiment(ims, "T160", {VS::NnExt, VS::NnLik}, nn::TargetSource::Analysis, seeds);

  // 10: target quality at T4.
  {
    const double cp_a = t4a.med("nn-lik", &Scores::cp);
    const double cp_t = t4t.med("nn-lik", &Scores::cp);
    const double r_a = t4a.med("nn-lik", &Scores::rmse);
    const double r_t = t4t.med("nn-lik", &Scores::rmse);
    const bool cp_ok = std::abs(cp_a - 0.63) <= 0.1 && std::abs(cp_t - 0.87) <= 0.1;
    const bool rmse_ok = std::abs(r_a - 0.12) <= 0.3 * 0.12 && std::abs(r_t - 0.10) <= 0.3 * 0.10;
    report.add(10, cp_ok && rmse_ok,
               "PMS T4 NN-lik CP analysis/truth " + fmt(cp_a, 3) + " / " + fmt(cp_t, 3) +
                   " (expect 0.63 / 0.87 +-0.1, " + (cp_ok ? "ok" : "off") + "); RMSE " +
                   fmt(r_a, 3) + " / " + fmt(r_t, 3) + " (expect 0.12 / 0.10 +-30%, " +
                   (rmse_ok ? "ok" : "off") + ")");
  }

  // 11: PMS T160 filtering.
  {
    const double nn = p160.med("nn-lik", &Scores::rmse);
    const double det = p160.med("det", &Scores::rmse);
    const double ens = p160.med("ens", &Scores::rmse);
    report.add(11, nn < det && ens <= nn,
               "PMS T160 RMSE ens " + fmt(ens) + " <= NN " + fmt(nn) + " < det " + fmt(det));
  }

  // 12: IMS accuracy and coverage.
  {
    bool ok = true;
    std::ostringstream d;
    for (const Experiment* e : {&i80, &i160}) {
      const double nn = e->med("nn-lik", &Scores::rmse);
      const double ens = e->med("ens", &Scores::rmse);
      const double det = e->med("det", &Scores::rmse);
      const double cp_ens = e->med("ens", &Scores::cp);
      const double cp_det = e->med("det", &Scores::cp);
      const double cp_ext = e->med("nn-ext", &Scores::cp);
      const double cp_lik = e->med("nn-lik", &Scores::cp);
      const double gap = std::abs(cp_ens - 0.9);
      ok = ok && nn < ens && ens < det;
      ok = ok && std::abs(cp_ext - 0.9) < gap && std::abs(cp_lik - 0.9) < gap;
      ok = ok && cp_ens < std::min({cp_det, cp_ext, cp_lik});
      d << e->label << ": RMSE NN " << fmt(nn) << " < ens " << fmt(ens) << " < det " << fmt(det)
        << ", CP ens " << fmt(cp_ens, 3) << " det " << fmt(cp_det, 3) << " ext " << fmt(cp_ext, 3)
        << " lik " << fmt(cp_lik, 3) << "; ";
    }
    report.add(12, ok, d.str());
  }

  // 13: PIT flatness at IMS T80.
  {
    const double ens = i80.med("ens", &Scores::chi2);
    const double lik = i80.med("nn-lik", &Scores::chi2);
    report.add(13, ens >= 5.0 * lik,
               "IMS T80 chi2 ens " + fmt(ens) + " >= 5 x NN-lik " + fmt(lik) + " (ratio " +
                   fmt(ens / lik, 3) + ")");
  }

  // 14: correlation signs.
  {
    bool ok = true;
    double lowest = std::numeric_limits<double>::infinity();
    std::string lowest_at;
    for (const Experiment* e : {&t4a, &p160, &i80, &i160}) {
      for (const auto& [system, sc] : e->per_seed.front()) {
        if (system == "det") {
          for (const auto& t : e->per_seed) ok = ok && std::isnan(t.at("det").corr);
          continue;
        }
        const double c = e->med(system, &Scores::corr);
        ok = ok && c > 0.1;
        if (!(c >= lowest)) {
          lowest = c;
          lowest_at = e->label + " " + system;
        }
      }
    }
    report.add(14, ok,
               "lowest NN/ensemble sigma-|error| correlation " + fmt(lowest, 3) + " (" +
                   lowest_at + "); deterministic static sigma flagged not applicable");
  }

  // 15: lead-time study.
  {
    const Stopwatch clock;
    const std::vector<pipe::LeadtimeRow> rows =
        pipe::leadtime_study(ims.config, ims.analyses, ims.nature_slow);
    std::vector<double> prior;
    std::vector<double> later;
    const pipe::LeadtimeRow* best = nullptr;
    for (const auto& r : rows) {
      std::cout << "  lead-time " << std::setw(12) << std::left << r.name << std::right << ' '
                << std::setw(6) << r.category << " median RMSE " << fmt(r.median_rmse) << std::endl;
      if (r.category == "prior") prior.push_back(r.median_rmse);
      if (r.category == "later") later.push_back(r.median_rmse);
      if (!best || r.median_rmse < best->median_rmse) best = &r;
    }
    const double mp = median(prior);
    const double ml = median(later);
    const bool ok = !prior.empty() && !later.empty() && mp < ml &&
                    std::abs(best->median_rmse - 2.9) <= 0.4;
    report.add(15, ok,
               "IMS T80 median RMSE prior-lead sets " + fmt(mp) + " < later-only sets " +
                   fmt(ml) + "; best " + best->name + " " + fmt(best->median_rmse) +
                   " within 2.9 +-0.4 (" + std::to_string(rows.size()) + " sets, " +
                   fmt(clock.seconds(), 3) + " s)");
  }
}

std::set<int> parse_ids(const std::string& text) {
  std::set<int> ids;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) ids.insert(std::stoi(item));
  }
  return ids;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"l96uq acceptance suite"};
  std::string suite = "fast";
  std::string work = "acceptance-work";
  std::string known_red;
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int seeds = 3;
  app.add_option("--suite", suite, "fast (criteria 1-7), full (8-15) or all")
      ->check(CLI::IsMember({"fast", "full", "all"}));
  app.add_option("--work", work, "Working directory for generated data");
  app.add_option("--threads", threads, "Worker threads for the full suite")
      ->check(CLI::PositiveNumber);
  app.add_option("--seeds", seeds, "Sweep seeds per experiment (median taken)")
      ->check(CLI::PositiveNumber);
  app.add_option("--known-red", known_red,
                 "Comma-separated criteria whose failure does not fail the run");
  CLI11_PARSE(app, argc, argv);

  Report report;
  try {
    fs::create_directories(work);
    if (suite == "fast" || suite == "all") fast_suite(report, work);
    if (suite == "full" || suite == "all") full_suite(report, work, threads, seeds);
  } catch (const std::exception& ex) {
    std::cerr << "acceptance: " << ex.what() << '\n';
    return 2;
  }
  return report.finish(parse_ids(known_red));
}
