#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pivotal/error.hpp"
#include "pivotal/experiments.hpp"
#include "pivotal/log.hpp"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Invocation {
  pivotal::ExperimentKind kind;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
};

int execute(const Invocation& call) {
  pivotal::ExperimentConfig config;
  try {
    config = pivotal::load_config(call.config_path, call.kind);
    if (call.seed) config.seed = *call.seed;
    if (call.out) config.output_dir = *call.out;
    pivotal::validate(config);
  } catch (const pivotal::Error& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  }

  try {
    pivotal::run_experiment(config);
  } catch (const pivotal::Error& e) {
    std::cerr << e.what() << '\n';
    if (e.code() == pivotal::ErrorCode::numerical || e.code() == pivotal::ErrorCode::non_finite) {
      return kExitNumerical;
    }
    if (e.code() == pivotal::ErrorCode::config) return kExitConfig;
    return kExitFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  pivotal::logger().info("{} finished; outputs in {}", pivotal::to_string(config.experiment),
                         config.output_dir.string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split conformal prediction with the PIT correction: experiment runner"};
  app.set_version_flag("--version", std::string(pivotal::kVersion));
  app.require_subcommand(1);

  Invocation call{};
  const std::pair<const char*, pivotal::ExperimentKind> commands[] = {
      {"toy", pivotal::ExperimentKind::toy},
      {"convergence", pivotal::ExperimentKind::convergence},
      {"illustration-ks", pivotal::ExperimentKind::illustration_ks},
      {"marginal-check", pivotal::ExperimentKind::marginal_check},
  };
  const char* descriptions[] = {
      "base vs corrected regions on the toy process",
      "L1 conditional coverage gap against training size",
      "KS distance and conditional coverage gap on the Laplace process",
      "marginal coverage of base and corrected pipelines",
  };
  for (std::size_t i = 0; i < std::size(commands); ++i) {
    auto* sub = app.add_subcommand(commands[i].first, descriptions[i]);
    sub->add_option("--config", call.config_path, "key = value file or a run manifest")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>("--seed", [&call](const std::uint64_t& s) { call.seed = s; },
                                            "overrides the configured seed");
    sub->add_option_function<std::string>("--out", [&call](const std::string& d) { call.out = d; },
                                          "overrides the output directory");
    const auto kind = commands[i].second;
    sub->callback([&call, kind] { call.kind = kind; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }
  return execute(call);
}
