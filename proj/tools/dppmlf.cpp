// dppmlf: run experiments, print theory diagnostics, dump filter responses.

#include <filesystem>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "dppmlf/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"DP optimizer with per-sample momentum and low-pass filtering"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  unsigned jobs = std::max(1u, std::thread::hardware_concurrency());
  auto* run = app.add_subcommand("run", "execute every run of an experiment config");
  run->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out_dir, "output directory (default: the config's \"output\")");
  run->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);

  auto* diag = app.add_subcommand("diag", "print theory diagnostics for a config");
  diag->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::size_t horizon = 64;
  auto* impulse = app.add_subcommand("impulse", "write r,kappa,kappa_hat,c_m as CSV to stdout");
  impulse->add_option("config", config_path, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  impulse->add_option("--horizon", horizon, "last lag r")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = dppmlf::parse_config(config_path);
    if (*run) {
      return dppmlf::run_experiment(cfg, out_dir.empty() ? std::filesystem::path(cfg.output) : std::filesystem::path(out_dir), jobs);
    }
    if (*diag) {
      const auto in = dppmlf::diagnostics_inputs(cfg);
      dppmlf::print_diagnostics(in, dppmlf::compute_theory_diagnostics(in), std::cout);
      return 0;
    }
    if (*impulse) {
      std::cout << dppmlf::impulse_csv(cfg.base.filter, horizon);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "dppmlf: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
