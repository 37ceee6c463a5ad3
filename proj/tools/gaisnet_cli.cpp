// gaisnet run|validate|report
//
// Exit codes: 0 ok, 1 invalid config or usage, 2 infeasible plan or runtime failure.

#include <cstdio>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "gaisnet/experiment.hpp"
#include "gaisnet/planner.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

void print_diagnostics(const std::vector<std::string>& diags) {
  for (const auto& d : diags) fmt::print(stderr, "error: {}\n", d);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid federated split fine-tuning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int jobs = 0;

  auto* run = app.add_subcommand("run", "run one experiment");
  run->add_option("--config", config_path, "experiment config (YAML)")->required();
  run->add_option("--seed", seed, "run this seed only");
  run->add_option("--out", out_dir, fmt::format("output directory (default ${} or ./results)", gaisnet::kOutputEnv));
  run->add_option("--jobs", jobs, "seeds run in parallel")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "check a config and list every violation");
  validate->add_option("--config", config_path, "experiment config (YAML)")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-aggregate per-seed CSVs into summary tables");
  report->add_option("--out", report_dir, "directory holding E1..E6 outputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  if (*validate) {
    const auto diags = gaisnet::validate_config(config_path);
    if (diags.empty()) {
      fmt::print("{}: ok\n", config_path);
      return kOk;
    }
    print_diagnostics(diags);
    return kConfigError;
  }

  if (*report) {
    try {
      if (report_dir.empty()) report_dir = gaisnet::resolve_output({}).string();
      std::cout << gaisnet::build_report(report_dir);
      return kOk;
    } catch (const std::exception& e) {
      fmt::print(stderr, "error: {}\n", e.what());
      return kRuntimeError;
    }
  }

  gaisnet::ExperimentConfig config;
  try {
    config = gaisnet::load_config(config_path);
    if (seed) config.seeds = {*seed};
    if (!out_dir.empty()) config.output = out_dir;
    if (jobs > 0) config.jobs = jobs;
  } catch (const gaisnet::ConfigError& e) {
    print_diagnostics(e.diagnostics);
    return kConfigError;
  }
  try {
    const auto summary = gaisnet::run_experiment(config);
    for (const auto& f : summary.files) fmt::print("wrote {}\n", f.string());
    return kOk;
  } catch (const gaisnet::ConfigError& e) {
    print_diagnostics(e.diagnostics);
    return kConfigError;
  } catch (const gaisnet::InfeasibleError& e) {
    fmt::print(stderr, "infeasible: {}\n", e.what());
    return kRuntimeError;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kRuntimeError;
  }
}
