#include "l96uq/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>

namespace l96uq::cfg {

namespace {

Json spec_to_json(const fcst::LeadTimeSpec& s) {
  return Json{{"name", s.name}, {"output_lead", s.output_lead}, {"input_leads", s.input_leads}};
}

fcst::LeadTimeSpec spec_from_json(const Json& j) {
  fcst::LeadTimeSpec s;
  s.name = j.at("name").get<std::string>();
  s.output_lead = j.at("output_lead").get<int>();
  s.input_leads = j.at("input_leads").get<std::vector<int>>();
  return s;
}

Json radius_to_json(double r) {
  if (std::isinf(r)) return "inf";
  return r;
}

double radius_from_json(const Json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
    throw ConfigError("assim.localization_radius: expected a number or \"inf\"");
  }
  return j.get<double>();
}

std::string decay_to_string(nn::WeightDecayMode m) {
  return m == nn::WeightDecayMode::Decoupled ? "decoupled" : "coupled-l2";
}

nn::WeightDecayMode decay_from_string(const std::string& s) {
  if (s == "decoupled") return nn::WeightDecayMode::Decoupled;
  if (s == "coupled-l2") return nn::WeightDecayMode::CoupledL2;
  throw ConfigError("train.decay_mode: expected decoupled or coupled-l2, got " + s);
}

/// Every key of `user` must exist in `reference` (objects only; arrays and
/// scalars are replaced wholesale).
void check_known_keys(const Json& reference, const Json& user, const std::string& where) {
  if (!user.is_object()) return;
  if (!reference.is_object()) throw ConfigError(where + ": expected a value, not an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!reference.contains(key)) throw ConfigError("unknown configuration key '" + path + "'");
    if (value.is_null()) throw ConfigError("configuration key '" + path + "' is null");
    check_known_keys(reference.at(key), value, path);
  }
}

}  // namespace

std::vector<std::vector<int>> default_leadtime_inputs() {
  return {
      // Leads before (or around) the output lead.
      {76, 80}, {70, 80}, {60, 80}, {50, 80}, {20, 50, 80}, {50, 65, 80}, {60, 70, 80},
      {70, 90}, {60, 80, 100}, {50, 80, 110},
      // The output lead alone.
      {80},
      // Only later leads.
      {84}, {100}, {80, 84}, {80, 100}, {80, 110, 140}, {90, 110, 140},
  };
}

ExperimentConfig defaults() {
  ExperimentConfig c;
  c.leadtime.input_sets = default_leadtime_inputs();
  return c;
}

void apply_quick_profile(ExperimentConfig& c) {
  c.assim.cycles = 2000;
  c.assim.spinup_cycles = 500;
  // Same 7:3:3 proportions as the full split.
  c.forecast.train_size = 1076;
  c.forecast.validation_size = 461;
  c.forecast.test_size = 461;
  c.train.train.lr_grid = {1e-3, 1e-4};
  c.train.train.wd_grid = {0.0};
  c.train.train.repeats = 2;
  c.train.train.max_epochs = 60;
  c.evaluate.bootstrap.n_resamples = 200;
  c.leadtime.repeats = 2;
  c.leadtime.input_sets = {{20, 50, 80}, {80}, {80, 110, 140}};
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (threads < 1) fail("threads must be >= 1");
  if (!(model.dt > 0.0)) fail("model.dt must be > 0");
  model.pms.validate();
  model.ims.validate();
  model.surrogate.validate();
  if (model.ims_substeps < 1) fail("model.ims_substeps must be >= 1");
  if (model.surrogate.base.s != model.ims.s) fail("surrogate and two-scale slow sizes differ");
  if (nature.transient_steps < 0) fail("nature.transient_steps must be >= 0");
  if (assim.members < 2) fail("assim.members must be >= 2");
  assim.obs.validate();
  filter().validate();
  if (assim.inflation_pms < 1.0 || assim.inflation_pms > 2.0 || assim.inflation_ims < 1.0 ||
      assim.inflation_ims > 2.0) {
    fail("assim inflation must lie in [1, 2]");
  }
  if (assim.obs.model_dt != model.dt) fail("assim.obs.model_dt must equal model.dt");
  if (assim.cycles < 1) fail("assim.cycles must be >= 1");
  if (assim.spinup_cycles < 500) fail("assim.spinup_cycles must be >= 500");
  if (forecast.specs.empty()) fail("forecast.specs is empty");
  for (const auto& s : forecast.specs) {
    s.validate();
    if (s.output_lead % assim.obs.obs_every_steps != 0) {
      fail("lead spec " + s.name + ": output lead must be a multiple of obs_every_steps");
    }
  }
  if (forecast.train_size < 1 || forecast.validation_size < 1 || forecast.test_size < 1) {
    fail("forecast split sizes must be >= 1");
  }
  if (forecast.train_size + forecast.validation_size >= assim.cycles) {
    fail("forecast split does not fit in assim.cycles");
  }
  train.train.validate();
  for (const auto& name : train.specs) (void)spec(name);
  if (!(evaluate.confidence > 0.0 && evaluate.confidence < 1.0)) {
    fail("evaluate.confidence must lie in (0, 1)");
  }
  if (evaluate.pit_bins < 2) fail("evaluate.pit_bins must be >= 2");
  if (evaluate.reference != "truth" && evaluate.reference != "analysis") {
    fail("evaluate.reference must be truth or analysis");
  }
  for (const auto& s : evaluate.systems) {
    if (s != "det" && s != "ens") (void)nn::strategy_from_string(s);
  }
  (void)spec(leadtime.base_spec);
  if (leadtime.repeats < 1) fail("leadtime.repeats must be >= 1");
  for (const auto& set : leadtime.input_sets) {
    fcst::LeadTimeSpec s{"study", spec(leadtime.base_spec).output_lead, set};
    s.validate();
  }
}

da::FilterConfig ExperimentConfig::filter() const {
  da::FilterConfig f;
  f.inflation = scenario == fcst::Scenario::Pms ? assim.inflation_pms : assim.inflation_ims;
  f.localization_radius = assim.localization_radius;
  return f;
}

const fcst::LeadTimeSpec& ExperimentConfig::spec(const std::string& name) const {
  for (const auto& s : forecast.specs) {
    if (s.name == name) return s;
  }
  throw ConfigError("no lead spec named '" + name + "'");
}

Json to_json(const ExperimentConfig& c) {
  Json j;
  j["scenario"] = fcst::to_string(c.scenario);
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["output_dir"] = c.output_dir;

  const auto& m = c.model;
  j["model"] = {
      {"dt", m.dt},
      {"pms", {{"s", m.pms.s}, {"forcing", m.pms.forcing}}},
      {"ims",
       {{"s", m.ims.s},
        {"j_per_x", m.ims.j_per_x},
        {"forcing", m.ims.forcing},
        {"h", m.ims.h},
        {"c", m.ims.c},
        {"b", m.ims.b},
        {"substeps", m.ims_substeps}}},
      {"surrogate",
       {{"forcing", m.surrogate.base.forcing},
        {"alpha", m.surrogate.alpha},
        {"beta", m.surrogate.beta}}},
  };
  j["nature"] = {{"transient_steps", c.nature.transient_steps},
                 {"init_perturbation", c.nature.init_perturbation},
                 {"init_fast_amplitude", c.nature.init_fast_amplitude}};
  const auto& a = c.assim;
  j["assim"] = {{"members", a.members},
                {"obs_every_steps", a.obs.obs_every_steps},
                {"sigma_r", a.obs.sigma_r},
                {"inflation", {{"pms", a.inflation_pms}, {"ims", a.inflation_ims}}},
                {"localization_radius", radius_to_json(a.localization_radius)},
                {"cycles", a.cycles},
                {"spinup_cycles", a.spinup_cycles},
                {"init_spread", a.init_spread},
                {"store_members", a.store_members}};
  Json specs = Json::array();
  for (const auto& s : c.forecast.specs) specs.push_back(spec_to_json(s));
  j["forecast"] = {{"specs", specs},
                   {"with_ensemble", c.forecast.with_ensemble},
                   {"init_stride", c.forecast.init_stride},
                   {"train_size", c.forecast.train_size},
                   {"validation_size", c.forecast.validation_size},
                   {"test_size", c.forecast.test_size}};
  const auto& t = c.train.train;
  std::vector<std::string> strategies;
  for (auto s : c.train.strategies) strategies.push_back(nn::to_string(s));
  j["train"] = {{"batch_size", t.batch_size},
                {"eval_every_epochs", t.eval_every_epochs},
                {"patience", t.patience},
                {"max_epochs", t.max_epochs},
                {"lr_grid", t.lr_grid},
                {"wd_grid", t.wd_grid},
                {"repeats", t.repeats},
                {"hidden_layers", t.hidden_layers},
                {"decay_mode", decay_to_string(t.decay_mode)},
                {"strategies", strategies},
                {"target", nn::to_string(c.train.target)},
                {"specs", c.train.specs}};
  const auto& e = c.evaluate;
  j["evaluate"] = {{"confidence", e.confidence},
                   {"pit_bins", e.pit_bins},
                   {"bootstrap_resamples", e.bootstrap.n_resamples},
                   {"thin_steps", e.bootstrap.thin_steps},
                   {"ci_confidence", e.bootstrap.confidence},
                   {"reference", e.reference},
                   {"systems", e.systems},
                   {"field_dump_length", e.field_dump_length}};
  j["leadtime"] = {{"base_spec", c.leadtime.base_spec},
                   {"input_sets", c.leadtime.input_sets},
                   {"repeats", c.leadtime.repeats},
                   {"lr", c.leadtime.lr},
                   {"weight_decay", c.leadtime.weight_decay}};
  return j;
}

ExperimentConfig from_json(const Json& j) {
  try {
    ExperimentConfig c;
    c.scenario = fcst::scenario_from_string(j.at("scenario").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.threads = j.at("threads").get<int>();
    c.output_dir = j.at("output_dir").get<std::string>();

    const Json& m = j.at("model");
    c.model.dt = m.at("dt").get<double>();
    c.model.pms.s = m.at("pms").at("s").get<int>();
    c.model.pms.forcing = m.at("pms").at("forcing").get<double>();
    const Json& ims = m.at("ims");
    c.model.ims.s = ims.at("s").get<int>();
    c.model.ims.j_per_x = ims.at("j_per_x").get<int>();
    c.model.ims.forcing = ims.at("forcing").get<double>();
    c.model.ims.h = ims.at("h").get<double>();
    c.model.ims.c = ims.at("c").get<double>();
    c.model.ims.b = ims.at("b").get<double>();
    c.model.ims_substeps = ims.at("substeps").get<int>();
    c.model.surrogate.base.s = c.model.ims.s;
    c.model.surrogate.base.forcing = m.at("surrogate").at("forcing").get<double>();
    c.model.surrogate.alpha = m.at("surrogate").at("alpha").get<double>();
    c.model.surrogate.beta = m.at("surrogate").at("beta").get<double>();

    const Json& n = j.at("nature");
    c.nature.transient_steps = n.at("transient_steps").get<long>();
    c.nature.init_perturbation = n.at("init_perturbation").get<double>();
    c.nature.init_fast_amplitude = n.at("init_fast_amplitude").get<double>();

    const Json& a = j.at("assim");
    c.assim.members = a.at("members").get<int>();
    c.assim.obs.obs_every_steps = a.at("obs_every_steps").get<int>();
    c.assim.obs.sigma_r = a.at("sigma_r").get<double>();
    c.assim.obs.model_dt = c.model.dt;
    c.assim.inflation_pms = a.at("inflation").at("pms").get<double>();
    c.assim.inflation_ims = a.at("inflation").at("ims").get<double>();
    c.assim.localization_radius = radius_from_json(a.at("localization_radius"));
    c.assim.cycles = a.at("cycles").get<long>();
    c.assim.spinup_cycles = a.at("spinup_cycles").get<long>();
    c.assim.init_spread = a.at("init_spread").get<double>();
    c.assim.store_members = a.at("store_members").get<bool>();

    const Json& f = j.at("forecast");
    c.forecast.specs.clear();
    for (const Json& s : f.at("specs")) c.forecast.specs.push_back(spec_from_json(s));
    c.forecast.with_ensemble = f.at("with_ensemble").get<bool>();
    c.forecast.init_stride = f.at("init_stride").get<int>();
    c.forecast.train_size = f.at("train_size").get<long>();
    c.forecast.validation_size = f.at("validation_size").get<long>();
    c.forecast.test_size = f.at("test_size").get<long>();

    const Json& t = j.at("train");
    auto& tc = c.train.train;
    tc.batch_size = t.at("batch_size").get<int>();
    tc.eval_every_epochs = t.at("eval_every_epochs").get<int>();
    tc.patience = t.at("patience").get<int>();
    tc.max_epochs = t.at("max_epochs").get<int>();
    tc.lr_grid = t.at("lr_grid").get<std::vector<double>>();
    tc.wd_grid = t.at("wd_grid").get<std::vector<double>>();
    tc.repeats = t.at("repeats").get<int>();
    tc.hidden_layers = t.at("hidden_layers").get<std::vector<int>>();
    tc.decay_mode = decay_from_string(t.at("decay_mode").get<std::string>());
    tc.seed = c.seed;
    tc.threads = c.threads;
    c.train.strategies.clear();
    for (const auto& s : t.at("strategies").get<std::vector<std::string>>()) {
      c.train.strategies.push_back(nn::strategy_from_string(s));
    }
    c.train.target = nn::target_from_string(t.at("target").get<std::string>());
    c.train.specs = t.at("specs").get<std::vector<std::string>>();

    const Json& e = j.at("evaluate");
    c.evaluate.confidence = e.at("confidence").get<double>();
    c.evaluate.pit_bins = e.at("pit_bins").get<int>();
    c.evaluate.bootstrap.n_resamples = e.at("bootstrap_resamples").get<int>();
    c.evaluate.bootstrap.thin_steps = e.at("thin_steps").get<int>();
    c.evaluate.bootstrap.confidence = e.at("ci_confidence").get<double>();
    c.evaluate.bootstrap.seed = c.seed;
    c.evaluate.bootstrap.threads = c.threads;
    c.evaluate.reference = e.at("reference").get<std::string>();
    c.evaluate.systems = e.at("systems").get<std::vector<std::string>>();
    c.evaluate.field_dump_length = e.at("field_dump_length").get<long>();

    const Json& l = j.at("leadtime");
    c.leadtime.base_spec = l.at("base_spec").get<std::string>();
    c.leadtime.input_sets = l.at("input_sets").get<std::vector<std::vector<int>>>();
    c.leadtime.repeats = l.at("repeats").get<int>();
    c.leadtime.lr = l.at("lr").get<double>();
    c.leadtime.weight_decay = l.at("weight_decay").get<double>();
    return c;
  } catch (const Json::exception& ex) {
    throw ConfigError(std::string("invalid configuration: ") + ex.what());
  }
}

void merge_json(ExperimentConfig& c, const Json& j) {
  Json base = to_json(c);
  check_known_keys(base, j, "");
  base.merge_patch(j);
  c = from_json(base);
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& ex) {
    throw ConfigError(path.string() + ": " + ex.what());
  }
  ExperimentConfig c = defaults();
  merge_json(c, j);
  return c;
}

void save(const ExperimentConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace l96uq::cfg
