#pragma once

// JSON experiment configuration. Unknown keys are rejected so that typos
// surface as errors instead of silently falling back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "trajdist/harness.hpp"

namespace trajdist {

inline constexpr int kConfigSchemaVersion = 1;

/// Every accepted key, dotted by section.
inline const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = {
      "schema_version", "system", "dt", "horizon", "parameters", "x0", "initial_guess", "output_dir",
      "goal.x_goal", "goal.Q", "goal.R", "goal.Q_T", "goal.u_ref", "goal.Q_track", "goal.obstacles",
      "goal.obstacles.center", "goal.obstacles.radius", "goal.obstacles.weight",
      "goal.task", "goal.task.point", "goal.task.weight", "goal.task.terminal_weight",
      "ilqr.max_iterations", "ilqr.cost_tol_rel", "ilqr.grad_tol", "ilqr.reg_init", "ilqr.reg_min", "ilqr.reg_max",
      "ilqr.reg_scale", "ilqr.max_transition_growth",
      "tracking.short_horizon", "tracking.warm_start", "tracking.inner_max_iterations", "tracking.inner_cost_tol_rel",
      "tracking.inner_grad_tol", "tracking.precision_floor", "tracking.terminal_goal", "tracking.divergence_threshold",
      "disturbance.impulse_levels", "disturbance.time_varying_levels", "disturbance.impulse_steps",
      "disturbance.onset_min", "disturbance.end_margin", "disturbance.window_start", "disturbance.window_end",
      "disturbance.smoothing",
      "bench.replications", "bench.seed", "bench.controllers", "bench.jobs",
  };
  return keys;
}

struct ExperimentConfig {
  ExperimentSpec spec;
  std::string output_dir = "results";
  std::vector<std::string> warnings;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& section) {
  if (!obj.is_object()) fail(ErrorKind::kConfig, section.empty() ? "config" : section, " must be an object");
  std::set<std::string> known;
  const std::string prefix = section.empty() ? "" : section + ".";
  for (const auto& k : config_keys()) {
    if (k.rfind(prefix, 0) != 0) continue;
    const auto rest = k.substr(prefix.size());
    known.insert(rest.substr(0, rest.find('.')));
  }
  for (const auto& [key, _] : obj.items())
    if (!known.contains(key)) fail(ErrorKind::kConfig, "unknown config key '", prefix + key, "'");
}

template <typename T>
T get_as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    fail(ErrorKind::kConfig, "config key '", where, "' has the wrong type");
  }
}

inline Vector vector_value(const json& j, const std::string& where) {
  if (!j.is_array()) fail(ErrorKind::kConfig, "config key '", where, "' must be an array of numbers");
  const auto v = get_as<std::vector<double>>(j, where);
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

/// A number (times identity), a diagonal, a row-major flat array or an
/// array of rows.
inline Matrix matrix_value(const json& j, int n, const std::string& where) {
  if (j.is_number()) return get_as<double>(j, where) * Matrix::Identity(n, n);
  if (j.is_array() && !j.empty() && j.front().is_array()) {
    Matrix m(n, n);
    if (static_cast<int>(j.size()) != n) fail(ErrorKind::kConfig, "config key '", where, "' needs ", n, " rows");
    for (int r = 0; r < n; ++r) {
      const Vector row = vector_value(j[static_cast<std::size_t>(r)], where);
      if (row.size() != n) fail(ErrorKind::kConfig, "config key '", where, "' needs ", n, " columns");
      m.row(r) = row.transpose();
    }
    return m;
  }
  const Vector v = vector_value(j, where);
  try {
    return matrix_from_values(std::vector<double>(v.data(), v.data() + v.size()), n);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, "config key '", where, "': ", e.message());
  }
}

inline std::array<double, 3> levels_value(const json& j, const std::string& where) {
  const Vector v = vector_value(j, where);
  if (v.size() != 3) fail(ErrorKind::kConfig, "config key '", where, "' needs 3 values (small, medium, large)");
  if (!(v.array() > 0.0).all()) fail(ErrorKind::kConfig, "config key '", where, "' must be positive");
  return {v(0), v(1), v(2)};
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& j) {
  using detail::get_as;
  detail::check_keys(j, "");
  if (!j.contains("schema_version")) fail(ErrorKind::kConfig, "config is missing schema_version");
  if (get_as<int>(j.at("schema_version"), "schema_version") != kConfigSchemaVersion)
    fail(ErrorKind::kConfig, "unsupported schema_version ", j.at("schema_version").dump(), " (expected ",
         kConfigSchemaVersion, ")");
  for (const char* k : {"system", "x0", "goal"})
    if (!j.contains(k)) fail(ErrorKind::kConfig, "config is missing '", k, "'");

  ExperimentConfig cfg;
  auto& s = cfg.spec;
  s.system = get_as<std::string>(j.at("system"), "system");
  if (j.contains("dt")) s.dt = get_as<double>(j.at("dt"), "dt");
  if (j.contains("horizon")) s.horizon = get_as<int>(j.at("horizon"), "horizon");
  TimeGrid{s.horizon, s.dt}.validate();
  if (j.contains("parameters")) {
    if (!j.at("parameters").is_object()) fail(ErrorKind::kConfig, "parameters must be an object");
    for (const auto& [k, v] : j.at("parameters").items()) s.parameters[k] = get_as<double>(v, "parameters." + k);
  }
  if (j.contains("output_dir")) cfg.output_dir = get_as<std::string>(j.at("output_dir"), "output_dir");

  const auto model = s.model();
  const int nx = model->nx();
  const int nu = model->nu();
  s.x0 = detail::vector_value(j.at("x0"), "x0");
  if (s.x0.size() != nx) fail(ErrorKind::kConfig, "x0 has ", s.x0.size(), " entries, ", s.system, " has nx = ", nx);
  if (j.contains("initial_guess")) {
    const auto g = get_as<std::string>(j.at("initial_guess"), "initial_guess");
    if (g != "zero" && g != "rest") fail(ErrorKind::kConfig, "initial_guess must be 'zero' or 'rest'");
    s.rest_initial_guess = g == "rest";
  }

  const auto& g = j.at("goal");
  detail::check_keys(g, "goal");
  for (const char* k : {"x_goal", "Q", "R", "Q_T"})
    if (!g.contains(k)) fail(ErrorKind::kConfig, "goal is missing '", k, "'");
  s.goal.x_goal = detail::vector_value(g.at("x_goal"), "goal.x_goal");
  if (s.goal.x_goal.size() != nx) fail(ErrorKind::kConfig, "goal.x_goal has the wrong size");
  s.goal.Q = detail::matrix_value(g.at("Q"), nx, "goal.Q");
  s.goal.R = detail::matrix_value(g.at("R"), nu, "goal.R");
  s.goal.Q_T = detail::matrix_value(g.at("Q_T"), nx, "goal.Q_T");
  if (g.contains("Q_track")) s.goal.Q_track = detail::matrix_value(g.at("Q_track"), nx, "goal.Q_track");
  if (g.contains("u_ref")) {
    if (g.at("u_ref").is_string()) {
      if (g.at("u_ref").get<std::string>() != "rest") fail(ErrorKind::kConfig, "goal.u_ref must be an array or 'rest'");
      s.goal.u_ref = model->rest_control();
    } else {
      s.goal.u_ref = detail::vector_value(g.at("u_ref"), "goal.u_ref");
      if (s.goal.u_ref.size() != nu) fail(ErrorKind::kConfig, "goal.u_ref has the wrong size");
    }
  }
  const int wd = model->workspace_dim();
  if (g.contains("obstacles")) {
    if (!g.at("obstacles").is_array()) fail(ErrorKind::kConfig, "goal.obstacles must be an array");
    for (const auto& o : g.at("obstacles")) {
      detail::check_keys(o, "goal.obstacles");
      Obstacle ob;
      ob.center = detail::vector_value(o.at("center"), "goal.obstacles.center");
      ob.radius = get_as<double>(o.at("radius"), "goal.obstacles.radius");
      ob.weight = get_as<double>(o.at("weight"), "goal.obstacles.weight");
      s.goal.obstacles.push_back(ob);
    }
  }
  if (g.contains("task")) {
    const auto& t = g.at("task");
    detail::check_keys(t, "goal.task");
    TaskTarget task;
    task.point = detail::vector_value(t.at("point"), "goal.task.point");
    task.weight = detail::matrix_value(t.at("weight"), wd, "goal.task.weight");
    task.terminal_weight = detail::matrix_value(t.at("terminal_weight"), wd, "goal.task.terminal_weight");
    s.goal.task = task;
  }
  try {
    s.goal.validate(*model);
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, "goal: ", e.message());
  }
  cfg.warnings = s.goal.lint();

  if (j.contains("ilqr")) {
    const auto& o = j.at("ilqr");
    detail::check_keys(o, "ilqr");
    auto& il = s.ilqr;
    if (o.contains("max_iterations")) il.max_iterations = get_as<int>(o.at("max_iterations"), "ilqr.max_iterations");
    if (o.contains("cost_tol_rel")) il.cost_tol_rel = get_as<double>(o.at("cost_tol_rel"), "ilqr.cost_tol_rel");
    if (o.contains("grad_tol")) il.grad_tol = get_as<double>(o.at("grad_tol"), "ilqr.grad_tol");
    if (o.contains("reg_init")) il.reg_init = get_as<double>(o.at("reg_init"), "ilqr.reg_init");
    if (o.contains("reg_min")) il.reg_min = get_as<double>(o.at("reg_min"), "ilqr.reg_min");
    if (o.contains("reg_max")) il.reg_max = get_as<double>(o.at("reg_max"), "ilqr.reg_max");
    if (o.contains("reg_scale")) il.reg_scale = get_as<double>(o.at("reg_scale"), "ilqr.reg_scale");
    if (o.contains("max_transition_growth"))
      s.extraction.max_transition_growth = get_as<double>(o.at("max_transition_growth"), "ilqr.max_transition_growth");
  }
  s.ilqr.validate();

  if (j.contains("tracking")) {
    const auto& o = j.at("tracking");
    detail::check_keys(o, "tracking");
    auto& tr = s.tracker;
    if (o.contains("short_horizon")) tr.short_horizon = get_as<int>(o.at("short_horizon"), "tracking.short_horizon");
    if (o.contains("warm_start")) tr.warm_start = get_as<bool>(o.at("warm_start"), "tracking.warm_start");
    if (o.contains("inner_max_iterations"))
      tr.inner.max_iterations = get_as<int>(o.at("inner_max_iterations"), "tracking.inner_max_iterations");
    if (o.contains("inner_cost_tol_rel"))
      tr.inner.cost_tol_rel = get_as<double>(o.at("inner_cost_tol_rel"), "tracking.inner_cost_tol_rel");
    if (o.contains("inner_grad_tol")) tr.inner.grad_tol = get_as<double>(o.at("inner_grad_tol"), "tracking.inner_grad_tol");
    if (o.contains("precision_floor"))
      tr.precision_floor = get_as<double>(o.at("precision_floor"), "tracking.precision_floor");
    if (o.contains("terminal_goal")) tr.terminal_goal = get_as<bool>(o.at("terminal_goal"), "tracking.terminal_goal");
    if (o.contains("divergence_threshold"))
      tr.divergence_threshold = get_as<double>(o.at("divergence_threshold"), "tracking.divergence_threshold");
  }
  if (s.tracker.short_horizon < 1 || s.tracker.short_horizon > s.horizon)
    fail(ErrorKind::kConfig, "tracking.short_horizon must lie in [1, horizon]");
  if (!(s.tracker.precision_floor > 0.0)) fail(ErrorKind::kConfig, "tracking.precision_floor must be positive");
  if (!(s.tracker.divergence_threshold > 0.0)) fail(ErrorKind::kConfig, "tracking.divergence_threshold must be positive");
  s.tracker.inner.validate();

  if (j.contains("disturbance")) {
    const auto& o = j.at("disturbance");
    detail::check_keys(o, "disturbance");
    if (o.contains("impulse_levels")) s.levels.impulse = detail::levels_value(o.at("impulse_levels"), "disturbance.impulse_levels");
    if (o.contains("time_varying_levels"))
      s.levels.time_varying = detail::levels_value(o.at("time_varying_levels"), "disturbance.time_varying_levels");
    auto& sh = s.shape;
    if (o.contains("impulse_steps")) sh.impulse_steps = get_as<int>(o.at("impulse_steps"), "disturbance.impulse_steps");
    if (o.contains("onset_min")) sh.onset_min = get_as<int>(o.at("onset_min"), "disturbance.onset_min");
    if (o.contains("end_margin")) sh.end_margin = get_as<int>(o.at("end_margin"), "disturbance.end_margin");
    if (o.contains("window_start")) sh.window_start = get_as<int>(o.at("window_start"), "disturbance.window_start");
    if (o.contains("window_end")) sh.window_end = get_as<int>(o.at("window_end"), "disturbance.window_end");
    if (o.contains("smoothing")) sh.smoothing = get_as<double>(o.at("smoothing"), "disturbance.smoothing");
  }

  if (j.contains("bench")) {
    const auto& o = j.at("bench");
    detail::check_keys(o, "bench");
    if (o.contains("replications")) s.replications = get_as<int>(o.at("replications"), "bench.replications");
    if (o.contains("seed")) s.seed = get_as<std::uint64_t>(o.at("seed"), "bench.seed");
    if (o.contains("jobs")) s.jobs = get_as<int>(o.at("jobs"), "bench.jobs");
    if (o.contains("controllers")) {
      s.controllers.clear();
      for (const auto& c : get_as<std::vector<std::string>>(o.at("controllers"), "bench.controllers"))
        s.controllers.push_back(parse_controller(c));
    }
  }
  if (s.replications < 1) fail(ErrorKind::kConfig, "bench.replications must be >= 1");
  if (s.jobs < 1) fail(ErrorKind::kConfig, "bench.jobs must be >= 1");
  if (s.controllers.empty()) fail(ErrorKind::kConfig, "bench.controllers must not be empty");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open config ", path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::kConfig, path.string(), ": malformed JSON: ", e.what());
  }
  try {
    return parse_config(j);
  } catch (const Error& e) {
    throw Error(e.kind(), detail::concat(path.string(), ": ", e.message()));
  }
}

}  // namespace trajdist
