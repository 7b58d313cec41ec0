// SPDX-License-Identifier: Apache-2.0

#include "sag/gmm_model.hpp"
#include "sag/harness.hpp"
#include "sag/mlp_model.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace sag {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

NoiseSchedule build_schedule(json& spec, const fs::path& base_dir) {
  if (spec.contains("path")) {
    const fs::path p = base_dir / spec.at("path").get<std::string>();
    spec = read_json_file(p);
    spec["type"] = "explicit";
  }
  const std::string type = spec.value("type", "linear");
  if (type == "linear") {
    spec["type"] = "linear";
    spec["T"] = spec.value("T", 50);
    spec["beta_min"] = spec.value("beta_min", 0.002);
    spec["beta_max"] = spec.value("beta_max", 0.4);
    return build_linear_schedule(spec["T"].get<int>(), spec["beta_min"].get<double>(),
                                 spec["beta_max"].get<double>());
  }
  if (type == "explicit") {
    auto alpha = spec.at("alpha").get<std::vector<double>>();
    spec["T"] = static_cast<int>(alpha.size()) - 1;
    return NoiseSchedule(std::move(alpha));
  }
  throw ConfigError(fmt::format("unknown schedule type \"{}\"", type));
}

std::shared_ptr<const ScoreModel> build_model(json& spec, const fs::path& base_dir) {
  const std::string type = spec.value("type", "gmm");
  if (spec.contains("path")) {
    const fs::path p = base_dir / spec.at("path").get<std::string>();
    if (!fs::exists(p)) throw ConfigError(fmt::format("model file {} does not exist", p.string()));
    json loaded = read_json_file(p);
    loaded["type"] = type;
    spec = std::move(loaded);
  }
  if (type == "gmm") {
    if (spec.contains("preset")) {
      if (spec.at("preset") != "two_mode") {
        throw ConfigError(fmt::format("unknown GMM preset {}", spec.at("preset").dump()));
      }
      const int dim = spec.value("dim", 2);
      const double spread = spec.value("spread", 2.0);
      if (dim < 1 || !(spread > 0.0)) throw ConfigError("two_mode preset needs dim >= 1, spread > 0");
      const Vector mu = Vector::Constant(dim, spread / std::sqrt(static_cast<double>(dim)));
      spec = GmmModel({0.5, 0.5}, {mu, Vector(-mu)}).to_json();
    }
    auto model = std::make_shared<GmmModel>(GmmModel::from_json(spec));
    spec = model->to_json();
    spec["type"] = "gmm";
    return model;
  }
  if (type == "mlp") {
    std::shared_ptr<MlpModel> model;
    if (spec.contains("layers")) {
      model = std::make_shared<MlpModel>(MlpModel::from_json(spec));
    } else {
      model = std::make_shared<MlpModel>(MlpModel::random(
          spec.at("widths").get<std::vector<int>>(), spec.value("seed", std::uint64_t{0})));
    }
    spec = model->to_json();
    spec["type"] = "mlp";
    return model;
  }
  throw ConfigError(fmt::format("unknown model type \"{}\"", type));
}

std::shared_ptr<const GuidanceLoss> build_loss(json& spec, const ScoreModel& model) {
  if (spec.value("type", "l2") == "l2" && spec.contains("target_component")) {
    const auto* gmm = dynamic_cast<const GmmModel*>(&model);
    if (!gmm) throw ConfigError("loss.target_component needs a GMM model");
    const int k = spec.at("target_component").get<int>();
    if (k < 0 || k >= static_cast<int>(gmm->means().size())) {
      throw ConfigError(fmt::format("loss.target_component {} out of range", k));
    }
    spec = L2TargetLoss(gmm->means()[static_cast<std::size_t>(k)]).to_json();
  }
  if (!spec.contains("type")) spec["type"] = "l2";
  std::shared_ptr<const GuidanceLoss> loss = loss_from_json(spec);
  spec = loss->to_json();
  return loss;
}

WindowSpec parse_window(const json& w, int num_steps) {
  if (w.is_string()) return window_third(w.get<std::string>(), num_steps);
  const auto pair = w.get<std::vector<int>>();
  if (pair.size() != 2) throw ConfigError("window entries are a name or two step indices");
  const int lo = std::min(pair[0], pair[1]);
  const int hi = std::max(pair[0], pair[1]);
  return {fmt::format("{}-{}", lo, hi), lo, hi};
}

template <typename T>
void require_nonempty(const std::vector<T>& v, const char* key) {
  if (v.empty()) throw ConfigError(fmt::format("{} must be a non-empty list", key));
}

}  // namespace

WindowSpec window_third(const std::string& which, int num_steps) {
  const int third = num_steps / 3;
  if (third < 2) throw ConfigError("window thirds need T >= 6");
  if (which == "late") return {which, 1, third};
  if (which == "middle") return {which, third + 1, 2 * third};
  if (which == "early") return {which, 2 * third + 1, num_steps - 1};
  throw ConfigError(fmt::format("unknown window \"{}\" (early, middle, late)", which));
}

RunConfig load_run_config(const json& j, const fs::path& base_dir,
                          const ConfigOverrides& overrides) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "schedule", "model",  "loss",     "guidance",         "sweep",          "num_seeds",
      "base_seed", "out",   "parallel", "record_wall_time", "divergence_norm", "error_curve",
      "adjoint"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError(fmt::format("unknown config key \"{}\"", key));
  }

  RunConfig cfg;
  try {
    cfg.schedule_spec = j.value("schedule", json::object());
    cfg.schedule = std::make_shared<NoiseSchedule>(build_schedule(cfg.schedule_spec, base_dir));
    const int steps = cfg.schedule->num_steps();

    cfg.model_spec = j.value("model", json{{"type", "gmm"}, {"preset", "two_mode"}});
    cfg.model = build_model(cfg.model_spec, base_dir);
    cfg.loss_spec = j.value("loss", json{{"type", "l2"}, {"target_component", 0}});
    cfg.loss = build_loss(cfg.loss_spec, *cfg.model);

    cfg.guidance = GuidanceConfig::from_json(
        j.value("guidance", json{{"window", {15, 35}}, {"rho", 0.05}, {"n", 4}}));

    const json sweep = j.value("sweep", json::object());
    if (sweep.contains("n")) cfg.sweep.n = sweep.at("n").get<std::vector<int>>();
    if (sweep.contains("rho")) cfg.sweep.rho = sweep.at("rho").get<std::vector<double>>();
    if (sweep.contains("repeats")) cfg.sweep.repeats = sweep.at("repeats").get<std::vector<int>>();
    const json windows = sweep.value("windows", json{"early", "middle", "late"});
    for (const auto& w : windows) cfg.sweep.windows.push_back(parse_window(w, steps));

    const json ec = j.value("error_curve", json::object());
    cfg.error_curve.t_fraction = ec.value("t_fraction", cfg.error_curve.t_fraction);
    cfg.error_curve.n_ref = ec.value("n_ref", cfg.error_curve.n_ref);
    cfg.error_curve.num_samples = ec.value("num_samples", cfg.error_curve.num_samples);
    cfg.error_curve.seed = ec.value("seed", cfg.error_curve.seed);

    const json adj = j.value("adjoint", json::object());
    auto& a = cfg.adjoint;
    if (adj.contains("models")) a.models = adj.at("models").get<std::vector<std::string>>();
    if (adj.contains("dims")) a.dims = adj.at("dims").get<std::vector<int>>();
    if (adj.contains("n")) a.n = adj.at("n").get<std::vector<int>>();
    a.trials = adj.value("trials", a.trials);
    a.t_fraction = adj.value("t_fraction", a.t_fraction);
    a.mlp_hidden = adj.value("mlp_hidden", a.mlp_hidden);
    a.mlp_layers = adj.value("mlp_layers", a.mlp_layers);
    a.seed = adj.value("seed", a.seed);

    cfg.num_seeds = j.value("num_seeds", cfg.num_seeds);
    cfg.base_seed = j.value("base_seed", cfg.base_seed);
    cfg.out_dir = j.value("out", cfg.out_dir.string());
    cfg.parallel = j.value("parallel", cfg.parallel);
    cfg.record_wall_time = j.value("record_wall_time", cfg.guidance.record_wall_time);
    cfg.divergence_norm = j.value("divergence_norm", cfg.divergence_norm);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config: {}", e.what()));
  } catch (const std::invalid_argument& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(fmt::format("config: {}", e.what()));
  }

  if (overrides.seed) cfg.base_seed = *overrides.seed;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  if (overrides.parallel) cfg.parallel = *overrides.parallel;
  cfg.guidance.record_wall_time = cfg.record_wall_time;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config_file(const fs::path& path, const ConfigOverrides& overrides) {
  if (!fs::exists(path)) throw ConfigError(fmt::format("config file {} does not exist", path.string()));
  return load_run_config(read_json_file(path), path.parent_path(), overrides);
}

void RunConfig::validate() const {
  if (!schedule || !model || !loss) throw ConfigError("config is not resolved");
  const int steps = schedule->num_steps();
  guidance.validate(steps);
  try {
    loss->evaluate(Vector::Zero(model->dim()));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(fmt::format("loss does not fit a {}-dimensional model: {}", model->dim(),
                                  e.what()));
  }
  require_nonempty(sweep.n, "sweep.n");
  require_nonempty(sweep.rho, "sweep.rho");
  require_nonempty(sweep.windows, "sweep.windows");
  require_nonempty(sweep.repeats, "sweep.repeats");
  for (int n : sweep.n) {
    if (n < 1) throw ConfigError("sweep.n entries must be >= 1");
  }
  for (double r : sweep.rho) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw ConfigError("sweep.rho entries must be finite and >= 0");
  }
  for (int r : sweep.repeats) {
    if (r < 1) throw ConfigError("sweep.repeats entries must be >= 1");
  }
  for (const auto& w : sweep.windows) {
    if (!(0 < w.lo && w.lo < w.hi && w.hi < steps)) {
      throw ConfigError(fmt::format("window {} must satisfy 0 < lo < hi < T", w.label));
    }
  }
  if (!(error_curve.t_fraction > 0.0 && error_curve.t_fraction <= 1.0)) {
    throw ConfigError("error_curve.t_fraction must lie in (0, 1]");
  }
  if (error_curve.num_samples < 50) throw ConfigError("error_curve.num_samples must be >= 50");
  const int n_max = *std::max_element(sweep.n.begin(), sweep.n.end());
  if (error_curve.n_ref < 8 * n_max) {
    throw ConfigError("error_curve.n_ref must be at least 8 times the largest swept n");
  }
  require_nonempty(adjoint.models, "adjoint.models");
  require_nonempty(adjoint.dims, "adjoint.dims");
  require_nonempty(adjoint.n, "adjoint.n");
  for (const auto& m : adjoint.models) {
    if (m != "gmm" && m != "mlp") throw ConfigError(fmt::format("adjoint model \"{}\" unknown", m));
  }
  for (int d : adjoint.dims) {
    if (d < 1) throw ConfigError("adjoint.dims entries must be >= 1");
  }
  for (int n : adjoint.n) {
    if (n < 1) throw ConfigError("adjoint.n entries must be >= 1");
  }
  if (adjoint.trials < 1) throw ConfigError("adjoint.trials must be >= 1");
  if (!(adjoint.t_fraction > 0.0 && adjoint.t_fraction <= 1.0)) {
    throw ConfigError("adjoint.t_fraction must lie in (0, 1]");
  }
  if (adjoint.mlp_hidden < 1 || adjoint.mlp_layers < 1) {
    throw ConfigError("adjoint MLP needs hidden >= 1 and layers >= 1");
  }
  if (num_seeds < 1) throw ConfigError("num_seeds must be >= 1");
  if (parallel < 1) throw ConfigError("parallel must be >= 1");
  if (!(divergence_norm > 0.0)) throw ConfigError("divergence_norm must be positive");
  if (out_dir.empty()) throw ConfigError("out must name a directory");
}

json RunConfig::to_json() const {
  json windows = json::array();
  for (const auto& w : sweep.windows) {
    if (w.label == "early" || w.label == "middle" || w.label == "late") {
      windows.push_back(w.label);
    } else {
      windows.push_back({w.lo, w.hi});
    }
  }
  return {{"schedule", schedule_spec},
          {"model", model_spec},
          {"loss", loss_spec},
          {"guidance", guidance.to_json()},
          {"sweep", {{"n", sweep.n}, {"rho", sweep.rho}, {"windows", windows},
                     {"repeats", sweep.repeats}}},
          {"error_curve", {{"t_fraction", error_curve.t_fraction},
                           {"n_ref", error_curve.n_ref},
                           {"num_samples", error_curve.num_samples},
                           {"seed", error_curve.seed}}},
          {"adjoint", {{"models", adjoint.models},
                       {"dims", adjoint.dims},
                       {"n", adjoint.n},
                       {"trials", adjoint.trials},
                       {"t_fraction", adjoint.t_fraction},
                       {"mlp_hidden", adjoint.mlp_hidden},
                       {"mlp_layers", adjoint.mlp_layers},
                       {"seed", adjoint.seed}}},
          {"num_seeds", num_seeds},
          {"base_seed", base_seed},
          {"out", out_dir.string()},
          {"parallel", parallel},
          {"record_wall_time", record_wall_time},
          {"divergence_norm", divergence_norm}};
}

}  // namespace sag
