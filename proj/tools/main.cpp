// l96uq: Lorenz'96 twin experiments with neural-network forecast
// uncertainty quantification.

#include "l96uq/array_file.hpp"
#include "l96uq/config.hpp"
#include "l96uq/manifest.hpp"
#include "l96uq/pipeline.hpp"
#include "l96uq/selftest.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

constexpr const char* kOutputEnv = "L96UQ_OUTPUT_DIR";

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool quick = false;
  std::string output;
};

/// defaults -> quick profile -> config file -> environment -> flags.
l96uq::cfg::ExperimentConfig resolve(const GlobalOptions& g) {
  l96uq::cfg::ExperimentConfig c = l96uq::cfg::defaults();
  if (g.quick) l96uq::cfg::apply_quick_profile(c);
  if (!g.config_path.empty()) {
    const auto file = l96uq::io::read_file(g.config_path);
    l96uq::cfg::Json j;
    try {
      j = l96uq::cfg::Json::parse(file);
    } catch (const l96uq::cfg::Json::parse_error& ex) {
      throw l96uq::cfg::ConfigError(g.config_path + ": " + ex.what());
    }
    l96uq::cfg::merge_json(c, j);
  }
  if (const char* env = std::getenv(kOutputEnv); env && *env) c.output_dir = env;
  if (!g.output.empty()) c.output_dir = g.output;
  if (g.seed) c.seed = *g.seed;
  if (g.threads) c.threads = *g.threads;
  c.validate();
  return c;
}

int verify_install() {
  int failed = 0;
  for (const auto& check : l96uq::selftest::run_all()) {
    std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << '\n';
    if (!check.passed) ++failed;
  }
  std::cout << (failed ? "verify-install: " + std::to_string(failed) + " check(s) failed\n"
                       : std::string("verify-install: all checks passed\n"));
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lorenz'96 twin experiments: data assimilation, forecast datasets, "
               "neural-network uncertainty estimates and probabilistic verification"};
  app.set_version_flag("--version", std::string(l96uq::io::tool_version()));
  app.require_subcommand(1);

  GlobalOptions g;
  std::uint64_t seed = 0;
  int threads = 1;
  app.add_option("--config", g.config_path, "JSON configuration (keys override defaults)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "Master seed");
  auto* threads_opt =
      app.add_option("--threads", threads, "Worker threads (1 gives bit-exact reruns)")
          ->check(CLI::PositiveNumber);
  app.add_flag("--quick", g.quick, "Small profile: 2000 cycles, 2x1 grid, 2 repeats");
  app.add_option("--output", g.output,
                 std::string("Output directory (default from config, or $") + kOutputEnv + ")");

  auto* nature = app.add_subcommand("nature", "Integrate the nature run");
  auto* assimilate = app.add_subcommand("assimilate", "Observations and LETKF analyses");
  auto* forecast = app.add_subcommand("forecast", "Deterministic and ensemble forecast datasets");
  auto* train = app.add_subcommand("train", "Hyperparameter sweeps for mean and variance nets");
  std::vector<std::string> strategies;
  std::vector<std::string> train_specs;
  std::string target;
  train->add_option("--strategy", strategies, "Variance strategies (nn-mse, nn-ext, nn-lik)");
  train->add_option("--spec", train_specs, "Lead-time specs to train (default: all)");
  train->add_option("--target", target, "Training target: analysis or truth");
  auto* evaluate = app.add_subcommand("evaluate", "Verification scores with bootstrap CIs");
  std::vector<std::string> systems;
  evaluate->add_option("--system", systems, "Systems to score (det, ens, nn-mse, nn-ext, nn-lik)");
  auto* leadtime = app.add_subcommand("leadtime-study", "Test RMSE against input lead sets");
  auto* run_all = app.add_subcommand("run-all", "nature, assimilate, forecast, train, evaluate");
  auto* print_config = app.add_subcommand("print-config", "Print the effective configuration");
  auto* verify = app.add_subcommand("verify-install", "Run the numerical oracle self-tests");

  CLI11_PARSE(app, argc, argv);
  if (seed_opt->count()) g.seed = seed;
  if (threads_opt->count()) g.threads = threads;

  try {
    if (verify->parsed()) return verify_install();
    l96uq::cfg::ExperimentConfig c = resolve(g);
    if (!strategies.empty()) {
      c.train.strategies.clear();
      for (const auto& s : strategies) c.train.strategies.push_back(l96uq::nn::strategy_from_string(s));
    }
    if (!train_specs.empty()) c.train.specs = train_specs;
    if (!target.empty()) c.train.target = l96uq::nn::target_from_string(target);
    if (!systems.empty()) c.evaluate.systems = systems;
    c.validate();

    using namespace l96uq::pipe;
    if (print_config->parsed()) {
      std::cout << l96uq::cfg::to_json(c).dump(2) << '\n';
    } else if (nature->parsed()) {
      cmd_nature(c, std::cout);
    } else if (assimilate->parsed()) {
      cmd_assimilate(c, std::cout);
    } else if (forecast->parsed()) {
      cmd_forecast(c, std::cout);
    } else if (train->parsed()) {
      cmd_train(c, std::cout);
    } else if (evaluate->parsed()) {
      cmd_evaluate(c, std::cout);
    } else if (leadtime->parsed()) {
      cmd_leadtime_study(c, std::cout);
    } else if (run_all->parsed()) {
      cmd_all(c, std::cout);
    }
  } catch (const std::exception& ex) {
    std::cerr << "l96uq: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
