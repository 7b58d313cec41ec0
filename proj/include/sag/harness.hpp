// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "sag/guidance.hpp"
#include "sag/losses.hpp"
#include "sag/schedule.hpp"
#include "sag/score_model.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sag {

/// Named guidance window. `label` is "early", "middle", "late" or "lo-hi".
struct WindowSpec {
  std::string label;
  int lo = 0;
  int hi = 0;
};

/// Thirds of [0, T] in sampling order: early is the noisiest third.
WindowSpec window_third(const std::string& which, int num_steps);

struct SweepAxes {
  std::vector<int> n{1, 2, 4, 8};
  std::vector<double> rho{0.05, 0.5, 1.0, 5.0};
  std::vector<WindowSpec> windows;  // empty means early, middle, late
  std::vector<int> repeats{1, 2, 3};
};

struct ErrorCurveSpec {
  double t_fraction = 0.7;
  int n_ref = 256;
  int num_samples = 200;
  std::uint64_t seed = 0;
};

struct AdjointGridSpec {
  std::vector<std::string> models{"gmm", "mlp"};
  std::vector<int> dims{1, 2, 4, 8};
  std::vector<int> n{1, 2, 4, 8};
  int trials = 20;
  double t_fraction = 0.7;
  int mlp_hidden = 16;
  int mlp_layers = 2;
  std::uint64_t seed = 0;
};

/// Fully resolved experiment configuration. Built from one JSON file plus CLI
/// overrides and validated before anything runs.
struct RunConfig {
  nlohmann::json schedule_spec;
  nlohmann::json model_spec;  // resolved inline (files already read)
  nlohmann::json loss_spec;
  std::shared_ptr<const NoiseSchedule> schedule;
  std::shared_ptr<const ScoreModel> model;
  std::shared_ptr<const GuidanceLoss> loss;
  GuidanceConfig guidance;
  SweepAxes sweep;
  ErrorCurveSpec error_curve;
  AdjointGridSpec adjoint;
  int num_seeds = 50;
  std::uint64_t base_seed = 0;
  std::filesystem::path out_dir = "out";
  int parallel = 1;
  bool record_wall_time = false;
  double divergence_norm = 1e3;  // ||x0|| above this counts as diverged

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  nlohmann::json to_json() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out_dir;
  std::optional<int> parallel;
};

/// Relative paths inside the config (model weights) resolve against `base_dir`.
RunConfig load_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                          const ConfigOverrides& overrides = {});
RunConfig load_run_config_file(const std::filesystem::path& path,
                               const ConfigOverrides& overrides = {});

/// Tabular report with a fixed column list plus free-form summary data used
/// for plotting.
struct ExperimentReport {
  std::string kind;
  std::vector<std::string> columns;
  std::vector<nlohmann::json> rows;  // each an array aligned with `columns`
  nlohmann::json summary = nlohmann::json::object();

  void add_row(nlohmann::json row);
  std::string to_csv() const;
  nlohmann::json to_json() const;
  static ExperimentReport from_json(const nlohmann::json& j);
};

/// Version and numeric precision; no host or time data so reports stay reproducible.
nlohmann::json environment_fingerprint();

ExperimentReport run_ablation_n(const RunConfig& config);
ExperimentReport run_ablation_rho(const RunConfig& config);
ExperimentReport run_window_and_repeats_study(const RunConfig& config);
ExperimentReport run_adjoint_comparison(const RunConfig& config);
/// Single guided sample at `config.base_seed`; DivergenceError propagates.
ExperimentReport run_single_sample(const RunConfig& config);

struct SvgFile {
  std::string name;
  std::string content;
};

/// Pure rendering; throws std::invalid_argument on an empty report.
std::vector<SvgFile> render_plots(const ExperimentReport& report);
std::vector<std::filesystem::path> emit_plots(const ExperimentReport& report,
                                              const std::filesystem::path& out_dir);

/// Writes report.csv, report.json, config.resolved.json and the plots.
void write_outputs(const ExperimentReport& report, const RunConfig& config);

/// Entry point behind the `sag` executable. Returns the process exit code:
/// 0 success, 2 configuration error, 3 divergence in a single run, 1 otherwise.
int run_cli(const std::vector<std::string>& args);

}  // namespace sag
