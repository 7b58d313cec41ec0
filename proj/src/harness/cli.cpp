// SPDX-License-Identifier: Apache-2.0

#include "sag/harness.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <iostream>

namespace sag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  int parallel = 0;
  std::string report;
};

RunConfig resolve(const CLI::App& sub, const Flags& f) {
  ConfigOverrides ov;
  if (sub.count("--seed")) ov.seed = f.seed;
  if (sub.count("--out")) ov.out_dir = f.out;
  if (sub.count("--parallel")) ov.parallel = f.parallel;
  if (!f.config.empty()) return load_run_config_file(f.config, ov);
  return load_run_config(json::object(), fs::current_path(), ov);
}

void print_summary(const ExperimentReport& report, const RunConfig& config) {
  std::cout << fmt::format("{}: {} rows written to {}\n", report.kind, report.rows.size(),
                           config.out_dir.string());
  const json& sm = report.summary;
  auto line = [](const json& g, const std::string& head) {
    std::cout << fmt::format("  {:<22} loss {:.6g} +- {:.2g}  diverged {}/{}\n", head,
                             g["mean_final_loss"].is_number() ? g["mean_final_loss"].get<double>()
                                                              : std::nan(""),
                             g["stderr_final_loss"].is_number()
                                 ? g["stderr_final_loss"].get<double>()
                                 : std::nan(""),
                             g["num_diverged"].get<int>(), g["num_runs"].get<int>());
  };
  if (sm.contains("by_n")) {
    for (const auto& g : sm["by_n"]) line(g, fmt::format("n = {}", g["n"].get<int>()));
  }
  if (sm.contains("by_rho")) {
    for (const auto& g : sm["by_rho"]) line(g, fmt::format("rho = {}", g["rho"].get<double>()));
  }
  if (sm.contains("by_group")) {
    for (const auto& g : sm["by_group"]) {
      line(g, fmt::format("{} [{}, {}] r = {}", g["window"].get<std::string>(),
                          g["window_lo"].get<int>(), g["window_hi"].get<int>(),
                          g["repeats"].get<int>()));
    }
  }
  if (sm.contains("table")) {
    for (const auto& row : sm["table"]) {
      if (row["method"] == "direct_backprop") continue;
      std::cout << fmt::format("  {:<17} {:<3} d={:<2} n={:<2} max rel error {:.3e}\n",
                               row["method"].get<std::string>(), row["model"].get<std::string>(),
                               row["d"].get<int>(), row["n"].get<int>(),
                               row["max_rel_error"].get<double>());
    }
  }
  if (sm.contains("record")) {
    std::cout << fmt::format("  seed {} final loss {:.6g}, {} guided steps\n",
                             sm["record"]["seed"].get<std::uint64_t>(),
                             sm["record"]["final_loss"].get<double>(),
                             sm["record"]["steps_guided"].get<int>());
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Symplectic adjoint guidance experiments", "sag"};
  app.require_subcommand(1);
  Flags f;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
    sub->add_option("--seed", f.seed, "Base seed (overrides base_seed)");
    sub->add_option("--out", f.out, "Output directory (overrides out)");
    sub->add_option("--parallel", f.parallel, "Concurrent sweep cells (overrides parallel)")
        ->check(CLI::PositiveNumber);
  };
  struct Command {
    const char* name;
    const char* help;
    ExperimentReport (*run)(const RunConfig&);
  };
  const Command commands[] = {
      {"ablate-n", "Sweep the estimate steps n", run_ablation_n},
      {"ablate-rho", "Sweep the guidance strength rho", run_ablation_rho},
      {"study-window", "Sweep window placement and time-travel repeats",
       run_window_and_repeats_study},
      {"compare-adjoint", "Gradient error and memory of each adjoint method",
       run_adjoint_comparison},
      {"sample", "One guided sample at --seed", run_single_sample},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    subs.push_back(app.add_subcommand(c.name, c.help));
    add_common(subs.back());
  }
  CLI::App* plot = app.add_subcommand("plot", "Render SVG plots from a report.json");
  plot->add_option("--report", f.report, "report.json to render")
      ->required()
      ->check(CLI::ExistingFile);
  plot->add_option("--out", f.out, "Output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (plot->parsed()) {
      std::ifstream in(f.report);
      const auto report = ExperimentReport::from_json(json::parse(in));
      for (const auto& p : emit_plots(report, f.out)) std::cout << p.string() << "\n";
      return kExitOk;
    }
    for (std::size_t k = 0; k < subs.size(); ++k) {
      if (!subs[k]->parsed()) continue;
      const RunConfig config = resolve(*subs[k], f);
      const ExperimentReport report = commands[k].run(config);
      write_outputs(report, config);
      print_summary(report, config);
      return kExitOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace sag
