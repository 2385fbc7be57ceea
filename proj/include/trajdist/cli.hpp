#pragma once

// Command-line front end: plan, sample, track, bench, check.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trajdist/config.hpp"
#include "trajdist/harness.hpp"
#include "trajdist/selfcheck.hpp"

namespace trajdist {

/// Flags accepted by at least one subcommand.
inline const std::vector<std::string>& cli_flags() {
  static const std::vector<std::string> flags = {"--config", "--seed",    "--out",     "--controller", "--level",
                                                 "--kind",   "--jobs",    "--samples", "--replications"};
  return flags;
}

struct CliOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> controllers;
  std::vector<std::string> levels;
  std::vector<std::string> kinds;
  std::optional<int> jobs;
  int samples = 20;
  std::optional<int> replications;
};

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::kIo, "cannot create directory ", path.parent_path().string(), ": ", ec.message());
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open ", path.string(), " for writing");
  f << text;
  if (!f) fail(ErrorKind::kIo, "write to ", path.string(), " failed");
}

inline std::string row(std::initializer_list<const Vector*> parts, std::string lead) {
  for (const Vector* v : parts)
    for (int i = 0; i < v->size(); ++i) lead += " " + format_double((*v)(i));
  lead += '\n';
  return lead;
}

inline std::string dump_header(const SystemModel& m, int T) {
  return concat("# system ", m.name(), "\n# nx ", m.nx(), "\n# nu ", m.nu(), "\n# T ", T, "\n# dt ",
                format_double(m.dt()), "\n");
}

}  // namespace detail

/// Plan dump: header, then one row per step t = 0..T of
/// `t x... u... std...` (controls are nan at t = T).
inline std::string plan_dump(const Plan& plan) {
  const auto& m = *plan.model;
  const int T = plan.horizon();
  std::string out = detail::dump_header(m, T);
  out += "# columns t x[" + std::to_string(m.nx()) + "] u[" + std::to_string(m.nu()) + "] std[" +
         std::to_string(m.nx()) + "]\n";
  const TrajDist dist = plan.state_distribution();
  const Vector no_control = Vector::Constant(m.nu(), std::numeric_limits<double>::quiet_NaN());
  for (int t = 0; t <= T; ++t) {
    const Vector sd = marginal(dist, t).cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    const Vector& u = t < T ? plan.control(t) : no_control;
    out += detail::row({&plan.state(t), &u, &sd}, std::to_string(t));
  }
  return out;
}

/// Trajectory samples u ~ N(u*, Sigma_u) mapped through the linearization:
/// x = x* + Su (u - u*). Rows `sample t x...`.
inline std::string sample_dump(const Plan& plan, int count, std::uint64_t seed) {
  const auto& d = plan.distribution;
  const auto draws = sample({d.mean_u, d.cov_u}, count, seed);
  const int nx = d.nx;
  std::string out = detail::dump_header(*plan.model, d.horizon);
  out += "# columns sample t x[" + std::to_string(nx) + "]\n";
  for (int i = 0; i < count; ++i) {
    const Vector x = d.mean_x + d.state_map * (draws[static_cast<std::size_t>(i)] - d.mean_u);
    for (int t = 0; t <= d.horizon; ++t) {
      const Vector xt = x.segment(nx * t, nx);
      out += detail::row({&xt}, std::to_string(i) + " " + std::to_string(t));
    }
  }
  return out;
}

inline std::string trajectory_dump(const SystemModel& m, const Trajectory& traj, int planned_horizon) {
  std::string out = detail::dump_header(m, planned_horizon);
  out += "# columns t x[" + std::to_string(m.nx()) + "] u[" + std::to_string(m.nu()) + "]\n";
  const Vector no_control = Vector::Constant(m.nu(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    const Vector& u = t < traj.controls.size() ? traj.controls[t] : no_control;
    out += detail::row({&traj.states[t], &u}, std::to_string(t));
  }
  return out;
}

inline nlohmann::json telemetry_json(const TelemetryRecord& r) {
  auto vec = [](const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"tau", r.tau},           {"x", vec(r.x)},
          {"u", vec(r.u)},          {"reference", vec(r.reference)},
          {"q_min_eig", r.q_min_eig}, {"q_max_eig", r.q_max_eig},
          {"inner_iterations", r.inner_iterations}};
}

inline std::string format_tables(const SummaryTables& tables) {
  std::ostringstream os;
  for (const auto& [kind, systems] : tables)
    for (const auto& [system, controllers] : systems) {
      os << system << " / " << kind << "\n";
      os << std::left << std::setw(12) << "controller";
      for (auto l : kAllLevels) os << std::setw(24) << to_string(l);
      os << "\n";
      for (const auto& [controller, levels] : controllers) {
        os << std::setw(12) << controller;
        for (auto l : kAllLevels) {
          auto it = levels.find(std::string(to_string(l)));
          std::string cell = "-";
          if (it != levels.end()) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.3f +- %.3f (x%d)", it->second.mean, it->second.std, it->second.n_excluded);
            cell = buf;
          }
          os << std::setw(24) << cell;
        }
        os << "\n";
      }
    }
  return os.str();
}

namespace detail {

inline ExperimentConfig load_with_overrides(const CliOptions& o) {
  auto cfg = load_config(o.config);
  if (o.seed) cfg.spec.seed = *o.seed;
  if (o.jobs) {
    if (*o.jobs < 1) fail(ErrorKind::kConfig, "--jobs must be >= 1");
    cfg.spec.jobs = *o.jobs;
  }
  if (o.replications) {
    if (*o.replications < 1) fail(ErrorKind::kConfig, "--replications must be >= 1");
    cfg.spec.replications = *o.replications;
  }
  if (!o.controllers.empty()) {
    cfg.spec.controllers.clear();
    for (const auto& c : o.controllers) cfg.spec.controllers.push_back(parse_controller(c));
  }
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

inline std::shared_ptr<const Plan> plan_with_trace(const ExperimentSpec& spec, std::string* trace) {
  return make_plan(spec, [trace](const IterationRecord& r) {
    if (!trace) return;
    *trace += nlohmann::json{{"iteration", r.iteration}, {"cost", r.cost}, {"alpha", r.alpha}, {"reg", r.reg}}.dump();
    *trace += '\n';
  });
}

inline void print_warnings(const ExperimentConfig& cfg, std::ostream& err) {
  for (const auto& w : cfg.warnings) err << "warning: " << w << "\n";
}

inline int cmd_plan(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_with_overrides(o);
  print_warnings(cfg, err);
  std::string trace;
  const auto plan = plan_with_trace(cfg.spec, &trace);
  const std::filesystem::path dir = cfg.output_dir;
  write_file(dir / "plan.txt", plan_dump(*plan));
  write_file(dir / "trace.jsonl", trace);
  for (const auto& w : plan->distribution.warnings) err << "warning: " << w << "\n";
  out << "system " << cfg.spec.system << ": cost " << plan->solution.initial_cost << " -> " << plan->cost() << " in "
      << plan->solution.iterations << " iterations, converged " << (plan->solution.converged ? "yes" : "no")
      << ", step norm " << plan->solution.step_norm << "\n";
  out << "wrote " << (dir / "plan.txt").string() << " and " << (dir / "trace.jsonl").string() << "\n";
  return 0;
}

inline int cmd_sample(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_with_overrides(o);
  print_warnings(cfg, err);
  if (o.samples < 1) fail(ErrorKind::kConfig, "--samples must be >= 1");
  const auto plan = plan_with_trace(cfg.spec, nullptr);
  const std::filesystem::path dir = cfg.output_dir;
  write_file(dir / "plan.txt", plan_dump(*plan));
  write_file(dir / "samples.txt", sample_dump(*plan, o.samples, cfg.spec.seed));
  out << "wrote " << o.samples << " samples to " << (dir / "samples.txt").string() << "\n";
  return 0;
}

inline int cmd_track(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_with_overrides(o);
  print_warnings(cfg, err);
  if (o.controllers.size() != 1) fail(ErrorKind::kConfig, "track needs exactly one --controller");
  if (o.kinds.size() > 1 || o.levels.size() > 1) fail(ErrorKind::kConfig, "track takes at most one --kind and --level");
  const auto kind = parse_controller(o.controllers.front());
  const auto plan = plan_with_trace(cfg.spec, nullptr);
  std::vector<Vector> disturbance;
  std::string label = "none";
  if (!o.levels.empty()) {
    const auto dk = o.kinds.empty() ? DisturbanceKind::kImpulse : parse_kind(o.kinds.front());
    const auto lvl = parse_level(o.levels.front());
    disturbance = make_disturbance(*plan->model, plan->horizon(), dk, cfg.spec.levels.magnitude(dk, lvl),
                                   derive_seed(cfg.spec.seed, 0), cfg.spec.shape);
    label = concat(to_string(dk), "/", to_string(lvl));
  }
  const auto res = run_closed_loop(plan, kind, *plan->model, disturbance, cfg.spec.tracker);
  const std::filesystem::path dir = cfg.output_dir;
  write_file(dir / "track.txt", trajectory_dump(*plan->model, res.trajectory, plan->horizon()));
  std::string tele;
  for (const auto& r : res.telemetry) tele += telemetry_json(r).dump() + "\n";
  write_file(dir / "telemetry.jsonl", tele);
  out << to_string(kind) << " disturbance " << label << ": ";
  if (res.diverged) {
    out << "diverged (" << res.failure << ")\n";
  } else {
    out << "cost " << res.cost << " (plan " << plan->cost() << ", ratio " << res.cost / plan->cost() << ")\n";
  }
  return 0;
}

inline int cmd_bench(const CliOptions& o, std::ostream& out, std::ostream& err) {
  const auto cfg = load_with_overrides(o);
  print_warnings(cfg, err);
  std::vector<DisturbanceKind> kinds;
  for (const auto& k : o.kinds) kinds.push_back(parse_kind(k));
  if (kinds.empty()) kinds.assign(kAllKinds.begin(), kAllKinds.end());
  std::vector<Level> levels;
  for (const auto& l : o.levels) levels.push_back(parse_level(l));
  if (levels.empty()) levels.assign(kAllLevels.begin(), kAllLevels.end());

  const auto t0 = std::chrono::steady_clock::now();
  const auto plan = plan_with_trace(cfg.spec, nullptr);
  if (!plan->solution.converged) err << "warning: long-horizon plan did not converge\n";
  const auto result = run_bench(cfg.spec, plan, kinds, levels);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::filesystem::path dir = cfg.output_dir;
  write_file(dir / "results.csv", to_csv(result.records));
  write_file(dir / "results.json", to_json(result.tables).dump(2) + "\n");
  out << format_tables(result.tables);
  out << "wrote " << result.records.size() << " runs to " << (dir / "results.csv").string() << " in "
      << std::fixed << std::setprecision(1) << seconds << " s\n";
  return 0;
}

inline int cmd_check(const CliOptions& o, std::ostream& out, std::ostream&) {
  const auto results = run_self_checks(o.seed.value_or(1));
  bool ok = true;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

inline void error_record(std::ostream& err, std::string_view kind, std::string_view message, int code) {
  err << nlohmann::json{{"error", {{"kind", kind}, {"message", message}, {"exit_code", code}}}}.dump() << "\n";
}

}  // namespace detail

/// Builds the parser; `opts` receives parsed values. Exposed for tests.
inline void build_cli(CLI::App& app, CliOptions& opts) {
  app.require_subcommand(1);
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", opts.config, "experiment config (JSON)")->required(); };
  auto add_common = [&](CLI::App* sub) {
    add_config(sub);
    sub->add_option("--seed", opts.seed, "master seed override");
    sub->add_option("--out", opts.out, "output directory override");
  };

  auto* plan = app.add_subcommand("plan", "solve the long-horizon problem and dump plan + distribution");
  add_common(plan);

  auto* sample = app.add_subcommand("sample", "draw trajectory samples from the plan distribution");
  add_common(sample);
  sample->add_option("--samples", opts.samples, "number of samples")->capture_default_str();

  auto* track = app.add_subcommand("track", "one closed-loop run with one controller");
  add_common(track);
  track->add_option("--controller", opts.controllers, "ilqr_feed | mpc_mean | mpc_marg | mpc_cond")->required();
  track->add_option("--kind", opts.kinds, "impulse | time_varying (default impulse)");
  track->add_option("--level", opts.levels, "small | medium | large (default: no disturbance)");

  auto* bench = app.add_subcommand("bench", "disturbance benchmark sweep");
  add_common(bench);
  bench->add_option("--controller", opts.controllers, "restrict to these controllers");
  bench->add_option("--kind", opts.kinds, "restrict to these disturbance kinds");
  bench->add_option("--level", opts.levels, "restrict to these levels");
  bench->add_option("--jobs", opts.jobs, "worker threads");
  bench->add_option("--replications", opts.replications, "seeds per cell");

  auto* check = app.add_subcommand("check", "derivative and equivalence self-tests");
  check->add_option("--seed", opts.seed, "seed for the random instances");
}

inline int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"trajectory optimization with Gaussian trajectory distributions", "trajdist"};
  CliOptions opts;
  build_cli(app, opts);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    detail::error_record(err, "usage", e.what(), 2);
    return 2;
  }
  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "plan") return detail::cmd_plan(opts, out, err);
    if (cmd == "sample") return detail::cmd_sample(opts, out, err);
    if (cmd == "track") return detail::cmd_track(opts, out, err);
    if (cmd == "bench") return detail::cmd_bench(opts, out, err);
    return detail::cmd_check(opts, out, err);
  } catch (const Error& e) {
    const int code = e.kind() == ErrorKind::kConfig ? 2 : 1;
    detail::error_record(err, to_string(e.kind()), e.message(), code);
    return code;
  } catch (const std::exception& e) {
    detail::error_record(err, "internal", e.what(), 1);
    return 1;
  }
}

}  // namespace trajdist
