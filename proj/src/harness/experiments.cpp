// SPDX-License-Identifier: Apache-2.0

#include "sag/estimator.hpp"
#include "sag/gmm_model.hpp"
#include "sag/harness.hpp"
#include "sag/mlp_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

namespace sag {

using nlohmann::json;

namespace {

/// Runs fn(0..count-1) on up to `parallel` threads. Each index writes only its
/// own output slot, so the result does not depend on scheduling.
void parallel_for(std::size_t count, int parallel, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(parallel), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct Stats {
  double mean = 0.0;
  double stderr_ = 0.0;
  int count = 0;
};

Stats summarize(const std::vector<double>& values) {
  Stats s;
  double sum = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++s.count;
    }
  }
  if (s.count == 0) return {std::nan(""), std::nan(""), 0};
  s.mean = sum / s.count;
  if (s.count > 1) {
    double sq = 0.0;
    for (double v : values) {
      if (std::isfinite(v)) sq += (v - s.mean) * (v - s.mean);
    }
    s.stderr_ = std::sqrt(sq / (s.count - 1) / s.count);
  }
  return s;
}

const std::vector<std::string> kSampleColumns{
    "seed",         "n",            "rho",           "window",
    "repeats",      "final_loss",   "dist_to_unguided", "steps_guided",
    "wall_time_ns", "ns_per_guided_step", "diverged"};

struct Cell {
  GuidanceConfig guidance;
  std::string window_label;
  int n = 1;
  int repeats = 1;
  std::uint64_t seed = 0;
};

struct CellResult {
  SampleRecord record;
  bool diverged = false;
  double dist_to_unguided = std::nan("");
};

CellResult run_cell(const RunConfig& config, const Cell& cell, const Vector* unguided) {
  CellResult out;
  try {
    out.record = sag_sample(*config.model, *config.schedule, *config.loss, cell.guidance, cell.seed);
  } catch (const DivergenceError&) {
    out.diverged = true;
    out.record.seed = cell.seed;
    out.record.final_loss = std::nan("");
    return out;
  }
  const Vector& x0 = out.record.x0;
  out.diverged = !all_finite(x0) || x0.norm() > config.divergence_norm;
  if (unguided) out.dist_to_unguided = (x0 - *unguided).norm();
  return out;
}

json sample_row(const Cell& cell, const CellResult& r) {
  const auto& rec = r.record;
  const double per_step =
      rec.steps_guided() > 0 ? static_cast<double>(rec.wall_time_ns) / rec.steps_guided() : 0.0;
  return json::array({cell.seed, cell.n, cell.guidance.rho, cell.window_label, cell.repeats,
                      rec.final_loss, r.dist_to_unguided, rec.steps_guided(), rec.wall_time_ns,
                      per_step, r.diverged});
}

Cell base_cell(const RunConfig& config, std::uint64_t seed) {
  Cell c;
  c.guidance = config.guidance;
  c.guidance.record_wall_time = config.record_wall_time;
  c.window_label = fmt::format("{}-{}", c.guidance.window_lo, c.guidance.window_hi);
  c.n = c.guidance.n_schedule.at(c.guidance.window_hi);
  c.repeats = c.guidance.repeats.at(c.guidance.window_hi);
  c.seed = seed;
  return c;
}

std::vector<CellResult> run_cells(const RunConfig& config, const std::vector<Cell>& cells,
                                  bool with_unguided) {
  std::vector<Vector> unguided;
  if (with_unguided) {
    unguided.resize(static_cast<std::size_t>(config.num_seeds));
    parallel_for(unguided.size(), config.parallel, [&](std::size_t i) {
      unguided[i] = ddim_sample(*config.model, *config.schedule, config.base_seed + i);
    });
  }
  std::vector<CellResult> results(cells.size());
  parallel_for(cells.size(), config.parallel, [&](std::size_t i) {
    const Vector* ref =
        with_unguided ? &unguided[static_cast<std::size_t>(cells[i].seed - config.base_seed)]
                      : nullptr;
    results[i] = run_cell(config, cells[i], ref);
  });
  return results;
}

ExperimentReport sample_report(const std::string& kind, const std::vector<Cell>& cells,
                               const std::vector<CellResult>& results) {
  ExperimentReport report;
  report.kind = kind;
  report.columns = kSampleColumns;
  for (std::size_t i = 0; i < cells.size(); ++i) report.add_row(sample_row(cells[i], results[i]));
  return report;
}

json group_summary(const std::vector<std::size_t>& members, const std::vector<CellResult>& results) {
  std::vector<double> losses, dists, per_step;
  int diverged = 0;
  for (std::size_t i : members) {
    const auto& r = results[i];
    if (r.diverged) {
      ++diverged;
      continue;
    }
    losses.push_back(r.record.final_loss);
    dists.push_back(r.dist_to_unguided);
    if (r.record.steps_guided() > 0) {
      per_step.push_back(static_cast<double>(r.record.wall_time_ns) / r.record.steps_guided());
    }
  }
  const Stats l = summarize(losses);
  const Stats d = summarize(dists);
  const Stats p = summarize(per_step);
  return {{"mean_final_loss", l.mean},
          {"stderr_final_loss", l.stderr_},
          {"mean_dist_to_unguided", d.mean},
          {"mean_ns_per_guided_step", p.count ? p.mean : 0.0},
          {"num_runs", members.size()},
          {"num_diverged", diverged}};
}

/// Mean guided loss at each step (first visit of the step) over non-diverged seeds.
json loss_curve(const std::vector<std::size_t>& members, const std::vector<CellResult>& results) {
  std::map<int, std::pair<double, int>, std::greater<>> by_step;
  for (std::size_t i : members) {
    if (results[i].diverged) continue;
    int last_t = -1;
    for (const auto& st : results[i].record.steps) {
      if (st.t == last_t) continue;
      last_t = st.t;
      auto& acc = by_step[st.t];
      acc.first += st.loss;
      acc.second += 1;
    }
  }
  std::vector<int> ts;
  std::vector<double> means;
  for (const auto& [t, acc] : by_step) {
    ts.push_back(t);
    means.push_back(acc.first / acc.second);
  }
  return {{"t", ts}, {"mean_loss", means}};
}

StateSampler marginal_sampler(const ScoreModel& model, double alpha) {
  if (const auto* gmm = dynamic_cast<const GmmModel*>(&model)) {
    return [gmm, alpha](Rng& rng) { return gmm->sample_marginal(alpha, rng); };
  }
  return gaussian_sampler(model.dim());
}

int step_at_fraction(const NoiseSchedule& schedule, double fraction) {
  return std::clamp(static_cast<int>(std::lround(fraction * schedule.num_steps())), 1,
                    schedule.num_steps());
}

}  // namespace

ExperimentReport run_ablation_n(const RunConfig& config) {
  config.validate();
  std::vector<Cell> cells;
  for (int n : config.sweep.n) {
    for (int s = 0; s < config.num_seeds; ++s) {
      Cell c = base_cell(config, config.base_seed + static_cast<std::uint64_t>(s));
      c.guidance.n_schedule = StepSchedule::constant(n);
      c.n = n;
      cells.push_back(std::move(c));
    }
  }
  const auto results = run_cells(config, cells, false);
  ExperimentReport report = sample_report("ablate-n", cells, results);

  json by_n = json::array();
  json curves = json::array();
  for (std::size_t k = 0; k < config.sweep.n.size(); ++k) {
    std::vector<std::size_t> members;
    for (int s = 0; s < config.num_seeds; ++s) {
      members.push_back(k * static_cast<std::size_t>(config.num_seeds) + static_cast<std::size_t>(s));
    }
    json g = group_summary(members, results);
    g["n"] = config.sweep.n[k];
    by_n.push_back(g);
    json curve = loss_curve(members, results);
    curve["n"] = config.sweep.n[k];
    curves.push_back(curve);
  }
  report.summary["by_n"] = by_n;
  report.summary["loss_curves"] = curves;

  const int t = step_at_fraction(*config.schedule, config.error_curve.t_fraction);
  const auto points = estimation_error_curve(
      *config.model, *config.schedule, t, config.sweep.n, config.error_curve.n_ref,
      config.error_curve.num_samples, config.error_curve.seed,
      marginal_sampler(*config.model, config.schedule->alpha(t)));
  json m_curve = json::array();
  for (const auto& p : points) {
    m_curve.push_back({{"n", p.n}, {"mean_error", p.mean_error}, {"stderr", p.stderr_},
                       {"num_samples", p.num_samples}});
  }
  report.summary["m_curve"] = {{"t", t}, {"n_ref", config.error_curve.n_ref}, {"points", m_curve}};
  return report;
}

ExperimentReport run_ablation_rho(const RunConfig& config) {
  config.validate();
  std::vector<Cell> cells;
  for (double rho : config.sweep.rho) {
    for (int s = 0; s < config.num_seeds; ++s) {
      Cell c = base_cell(config, config.base_seed + static_cast<std::uint64_t>(s));
      c.guidance.rho = rho;
      cells.push_back(std::move(c));
    }
  }
  const auto results = run_cells(config, cells, true);
  ExperimentReport report = sample_report("ablate-rho", cells, results);
  json by_rho = json::array();
  for (std::size_t k = 0; k < config.sweep.rho.size(); ++k) {
    std::vector<std::size_t> members;
    for (int s = 0; s < config.num_seeds; ++s) {
      members.push_back(k * static_cast<std::size_t>(config.num_seeds) + static_cast<std::size_t>(s));
    }
    json g = group_summary(members, results);
    g["rho"] = config.sweep.rho[k];
    by_rho.push_back(g);
  }
  report.summary["by_rho"] = by_rho;
  return report;
}

ExperimentReport run_window_and_repeats_study(const RunConfig& config) {
  config.validate();
  struct Group {
    std::string window;
    int lo, hi, repeats;
    bool budget;
  };
  std::vector<Group> groups;
  for (const auto& w : config.sweep.windows) {
    for (int r : config.sweep.repeats) groups.push_back({w.label, w.lo, w.hi, r, false});
  }
  // Fixed budget of guided steps: r repeats over a window r times shorter,
  // centred on the original one.
  for (const auto& w : config.sweep.windows) {
    for (int r : config.sweep.repeats) {
      if (r == 1) continue;
      const int len = w.hi - w.lo + 1;
      const int short_len = std::max(2, (len + r - 1) / r);
      const int lo = w.lo + (len - short_len) / 2;
      groups.push_back({w.label + "-budget", lo, lo + short_len - 1, r, true});
    }
  }

  std::vector<Cell> cells;
  for (const auto& g : groups) {
    for (int s = 0; s < config.num_seeds; ++s) {
      Cell c = base_cell(config, config.base_seed + static_cast<std::uint64_t>(s));
      c.guidance.window_lo = g.lo;
      c.guidance.window_hi = g.hi;
      // Time travel only where guidance is active.
      c.guidance.repeats = StepSchedule{1, {{g.lo, g.hi, g.repeats}}};
      c.guidance.validate(config.schedule->num_steps());
      c.window_label = g.budget ? fmt::format("{}:{}-{}", g.window, g.lo, g.hi) : g.window;
      c.repeats = g.repeats;
      cells.push_back(std::move(c));
    }
  }
  const auto results = run_cells(config, cells, true);
  ExperimentReport report = sample_report("study-window", cells, results);
  json by_group = json::array();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    std::vector<std::size_t> members;
    for (int s = 0; s < config.num_seeds; ++s) {
      members.push_back(k * static_cast<std::size_t>(config.num_seeds) + static_cast<std::size_t>(s));
    }
    json g = group_summary(members, results);
    g["window"] = groups[k].window;
    g["window_lo"] = groups[k].lo;
    g["window_hi"] = groups[k].hi;
    g["repeats"] = groups[k].repeats;
    g["fixed_budget"] = groups[k].budget;
    by_group.push_back(g);
  }
  report.summary["by_group"] = by_group;
  return report;
}

ExperimentReport run_adjoint_comparison(const RunConfig& config) {
  config.validate();
  const auto& grid = config.adjoint;
  const NoiseSchedule& schedule = *config.schedule;
  const int t = step_at_fraction(schedule, grid.t_fraction);

  struct Job {
    std::string model;
    int d, n;
  };
  std::vector<Job> jobs;
  for (const auto& m : grid.models) {
    for (int d : grid.dims) {
      for (int n : grid.n) jobs.push_back({m, d, n});
    }
  }

  ExperimentReport report;
  report.kind = "compare-adjoint";
  report.columns = {"method",         "model",         "d",
                    "n",              "trial",         "rel_error_vs_oracle",
                    "wall_time_ns",   "checkpoints_stored", "stored_activations",
                    "peak_extra_vectors", "model_calls"};
  std::vector<std::vector<json>> job_rows(jobs.size());

  parallel_for(jobs.size(), config.parallel, [&](std::size_t j) {
    const Job& job = jobs[j];
    const std::uint64_t seed = grid.seed + 1000003ULL * static_cast<std::uint64_t>(job.d) +
                               7919ULL * static_cast<std::uint64_t>(job.n) +
                               (job.model == "mlp" ? 17ULL : 0ULL);
    std::unique_ptr<ScoreModel> model;
    if (job.model == "gmm") {
      const Vector mu = Vector::Constant(job.d, 2.0 / std::sqrt(static_cast<double>(job.d)));
      model = std::make_unique<GmmModel>(std::vector<double>{0.5, 0.5},
                                         std::vector<Vector>{mu, Vector(-mu)});
    } else {
      std::vector<int> widths{job.d};
      for (int l = 0; l < grid.mlp_layers; ++l) widths.push_back(grid.mlp_hidden);
      widths.push_back(job.d);
      model = std::make_unique<MlpModel>(MlpModel::random(widths, seed));
    }
    const StateSampler draw = marginal_sampler(*model, schedule.alpha(t));
    Rng rng(seed);
    const ButcherTableau heun = heun_tableau();

    auto emit = [&](const char* method, int trial, double err, std::int64_t ns,
                    const AdjointStats& st) {
      job_rows[j].push_back(json::array({method, job.model, job.d, job.n, trial, err,
                                         config.record_wall_time ? ns : 0,
                                         st.checkpoints_stored, st.stored_activations,
                                         st.peak_extra_vectors, st.model_calls}));
    };
    using Clock = std::chrono::steady_clock;
    auto timed = [](auto&& f, std::int64_t& ns) {
      const auto start = Clock::now();
      Vector out = f();
      ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
      return out;
    };

    for (int trial = 0; trial < grid.trials; ++trial) {
      const Vector x = draw(rng);
      const Vector g = standard_normal(job.d, rng);
      const CheckpointTrajectory traj = estimate_clean(*model, schedule, x, t, job.n);
      AdjointStats s_oracle, s_sym, s_van, s_rk, s_rk_oracle;
      std::int64_t ns = 0;

      const Vector oracle =
          timed([&] { return direct_backprop_grad(*model, traj, g, schedule, t, &s_oracle); }, ns);
      emit("direct_backprop", trial, 0.0, ns, s_oracle);
      const Vector sym =
          timed([&] { return symplectic_euler_grad(*model, traj, g, schedule, t, &s_sym); }, ns);
      emit("symplectic_euler", trial, relative_error(sym, oracle), ns, s_sym);
      const Vector van = timed(
          [&] {
            return vanilla_adjoint_grad(*model, traj.clean_output, g, schedule, t, job.n, &s_van);
          },
          ns);
      emit("vanilla", trial, relative_error(van, oracle), ns, s_van);

      // RK2 is a different forward map, so it is checked against its own taped oracle.
      const RkCheckpointTrajectory rk = estimate_clean_rk(*model, schedule, x, t, job.n, heun);
      const Vector rk_oracle = direct_backprop_rk_grad(*model, rk, g, schedule, t, &s_rk_oracle);
      const Vector rk_sym =
          timed([&] { return symplectic_rk_grad(*model, rk, g, schedule, t, &s_rk); }, ns);
      emit("symplectic_rk2", trial, relative_error(rk_sym, rk_oracle), ns, s_rk);
    }
  });

  for (auto& rows : job_rows) {
    for (auto& row : rows) report.add_row(std::move(row));
  }

  // Per (method, model, d, n): worst and mean error plus the memory counters.
  json table = json::array();
  std::map<std::tuple<std::string, std::string, int, int>, std::vector<const json*>> groups;
  std::vector<std::tuple<std::string, std::string, int, int>> order;
  for (const auto& row : report.rows) {
    const auto key = std::make_tuple(row[0].get<std::string>(), row[1].get<std::string>(),
                                     row[2].get<int>(), row[3].get<int>());
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&row);
  }
  for (const auto& key : order) {
    const auto& rows = groups[key];
    double worst = 0.0, sum = 0.0;
    for (const json* r : rows) {
      const double e = (*r)[5].get<double>();
      worst = std::max(worst, e);
      sum += e;
    }
    const json& first = *rows.front();
    table.push_back({{"method", std::get<0>(key)},
                     {"model", std::get<1>(key)},
                     {"d", std::get<2>(key)},
                     {"n", std::get<3>(key)},
                     {"max_rel_error", worst},
                     {"mean_rel_error", sum / static_cast<double>(rows.size())},
                     {"checkpoints_stored", first[7]},
                     {"stored_activations", first[8]},
                     {"peak_extra_vectors", first[9]}});
  }
  report.summary["t"] = t;
  report.summary["table"] = table;
  return report;
}

ExperimentReport run_single_sample(const RunConfig& config) {
  config.validate();
  const Cell cell = base_cell(config, config.base_seed);
  const Vector unguided = ddim_sample(*config.model, *config.schedule, config.base_seed);
  CellResult r;
  r.record = sag_sample(*config.model, *config.schedule, *config.loss, cell.guidance, cell.seed);
  r.dist_to_unguided = (r.record.x0 - unguided).norm();
  if (r.record.x0.norm() > config.divergence_norm) {
    throw DivergenceError(fmt::format("sample norm {} exceeds divergence_norm {} (seed {})",
                                      r.record.x0.norm(), config.divergence_norm, cell.seed));
  }
  ExperimentReport report = sample_report("sample", {cell}, {r});
  report.summary["record"] = r.record.to_json();
  json curve = loss_curve({0}, {r});
  curve["n"] = cell.n;
  report.summary["loss_curves"] = json::array({curve});
  return report;
}

}  // namespace sag
