#pragma once

// Disturbance benchmark: seeded replications of closed-loop runs for every
// controller under identical disturbances, normalized per seed by the best
// non-diverged controller.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "trajdist/tracking.hpp"

namespace trajdist {

enum class DisturbanceKind { kImpulse, kTimeVarying };
enum class Level { kSmall, kMedium, kLarge };

inline constexpr std::array<DisturbanceKind, 2> kAllKinds = {DisturbanceKind::kImpulse, DisturbanceKind::kTimeVarying};
inline constexpr std::array<Level, 3> kAllLevels = {Level::kSmall, Level::kMedium, Level::kLarge};

inline std::string_view to_string(DisturbanceKind k) {
  return k == DisturbanceKind::kImpulse ? "impulse" : "time_varying";
}

inline std::string_view to_string(Level l) {
  switch (l) {
    case Level::kSmall: return "small";
    case Level::kMedium: return "medium";
    case Level::kLarge: return "large";
  }
  return "unknown";
}

inline DisturbanceKind parse_kind(std::string_view s) {
  for (auto k : kAllKinds)
    if (to_string(k) == s) return k;
  fail(ErrorKind::kConfig, "unknown disturbance kind '", std::string(s), "'");
}

inline Level parse_level(std::string_view s) {
  for (auto l : kAllLevels)
    if (to_string(l) == s) return l;
  fail(ErrorKind::kConfig, "unknown disturbance level '", std::string(s), "'");
}

/// Magnitudes (velocity units) per kind and level.
struct DisturbanceLevels {
  std::array<double, 3> impulse{0.2, 0.7, 1.5};
  std::array<double, 3> time_varying{0.07, 0.2, 0.4};

  double magnitude(DisturbanceKind k, Level l) const {
    const auto i = static_cast<std::size_t>(l);
    return k == DisturbanceKind::kImpulse ? impulse[i] : time_varying[i];
  }
};

struct DisturbanceShape {
  int impulse_steps = 2;
  int onset_min = 10;      // impulse onset is uniform in [onset_min, T - end_margin]
  int end_margin = 20;
  int window_start = 30;   // time-varying disturbance acts on steps [start, end)
  int window_end = 100;
  double smoothing = 0.9;  // AR(1) coefficient of the time-varying direction
};

/// Full-state additive sequence (one entry per plant step) acting on the
/// model's velocity coordinates only.
inline std::vector<Vector> make_disturbance(const SystemModel& model, int horizon, DisturbanceKind kind,
                                            double magnitude, std::uint64_t seed, const DisturbanceShape& shape = {}) {
  const auto vel = model.velocity_indices();
  std::vector<Vector> d(static_cast<std::size_t>(horizon), Vector::Zero(model.nx()));
  if (vel.empty() || magnitude == 0.0) return d;
  const int nv = static_cast<int>(vel.size());
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto direction = [&] {
    Vector v(nv);
    do {
      for (int i = 0; i < nv; ++i) v(i) = normal(rng);
    } while (v.norm() < 1e-12);
    return Vector(v.normalized());
  };
  auto scatter = [&](int t, const Vector& v) {
    for (int i = 0; i < nv; ++i) d[static_cast<std::size_t>(t)](vel[static_cast<std::size_t>(i)]) = magnitude * v(i);
  };

  if (kind == DisturbanceKind::kImpulse) {
    const int last = horizon - shape.end_margin;
    if (shape.impulse_steps < 1 || last < shape.onset_min || last + shape.impulse_steps > horizon)
      fail(ErrorKind::kConfig, "horizon ", horizon, " is too short for the impulse disturbance window");
    const int onset = std::uniform_int_distribution<int>(shape.onset_min, last)(rng);
    const Vector v = direction();
    for (int s = 0; s < shape.impulse_steps; ++s) scatter(onset + s, v);
  } else {
    if (shape.window_start < 0 || shape.window_end <= shape.window_start || shape.window_end > horizon)
      fail(ErrorKind::kConfig, "time-varying window [", shape.window_start, ", ", shape.window_end,
           ") does not fit in horizon ", horizon);
    if (!(shape.smoothing >= 0.0 && shape.smoothing < 1.0)) fail(ErrorKind::kConfig, "smoothing must lie in [0, 1)");
    const double a = shape.smoothing;
    const double b = std::sqrt(1.0 - a * a);
    Vector n = direction();
    for (int t = shape.window_start; t < shape.window_end; ++t) {
      Vector z(nv);
      for (int i = 0; i < nv; ++i) z(i) = normal(rng);
      n = a * n + b * z;
      if (n.norm() < 1e-12) n = direction();
      scatter(t, n.normalized());
    }
  }
  return d;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return splitmix64(splitmix64(master) ^ index);
}

/// Everything needed to plan and benchmark one system.
struct ExperimentSpec {
  std::string system;
  double dt = 0.05;
  int horizon = 150;
  Parameters parameters;
  Vector x0;
  GoalCostSpec goal;
  bool rest_initial_guess = false;  // start iLQR from the model's rest control instead of zeros
  ILQRSettings ilqr;
  ExtractionSettings extraction;
  TrackerSettings tracker;
  DisturbanceLevels levels;
  DisturbanceShape shape;
  int replications = 50;
  std::uint64_t seed = 1;
  std::vector<ControllerKind> controllers{kAllControllers.begin(), kAllControllers.end()};
  int jobs = 1;

  std::shared_ptr<const SystemModel> model() const { return make_model(system, dt, parameters); }
};

inline std::shared_ptr<const Plan> make_plan(const ExperimentSpec& spec, const IterationCallback& on_iteration = {}) {
  auto model = spec.model();
  std::vector<Vector> init;
  if (spec.rest_initial_guess) init.assign(static_cast<std::size_t>(spec.horizon), model->rest_control());
  return make_plan(model, spec.goal, spec.x0, spec.horizon, spec.ilqr, std::move(init), on_iteration, spec.extraction);
}

struct RunRecord {
  std::string system;
  ControllerKind controller = ControllerKind::kIlqrFeed;
  DisturbanceKind kind = DisturbanceKind::kImpulse;
  Level level = Level::kSmall;
  std::uint64_t seed = 0;
  double raw_cost = std::numeric_limits<double>::quiet_NaN();
  double normalized_cost = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  bool excluded = false;  // diverged, or every controller diverged on this seed
  std::string failure;
};

struct CellSummary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();  // population standard deviation
  int n = 0;
  int n_excluded = 0;
};

/// tables[kind][system][controller][level]
using SummaryTables =
    std::map<std::string, std::map<std::string, std::map<std::string, std::map<std::string, CellSummary>>>>;

/// Run fn(i) for i in [0, count) on `jobs` threads.
template <typename Fn>
void parallel_for(int count, int jobs, Fn&& fn) {
  jobs = std::max(1, std::min(jobs, count));
  if (jobs == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (int i = next++; i < count; i = next++) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

/// Per-seed normalization: divide by the smallest non-diverged cost.
inline void normalize_by_seed(std::vector<RunRecord>& records) {
  std::map<std::uint64_t, double> best;
  for (const auto& r : records) {
    if (r.diverged) continue;
    auto [it, inserted] = best.try_emplace(r.seed, r.raw_cost);
    if (!inserted) it->second = std::min(it->second, r.raw_cost);
  }
  for (auto& r : records) {
    r.excluded = r.diverged || !best.contains(r.seed);
    r.normalized_cost = r.excluded ? std::numeric_limits<double>::quiet_NaN() : r.raw_cost / best.at(r.seed);
  }
}

/// N seeded replications of every configured controller under one
/// disturbance kind and level. Records are ordered by seed index, then
/// controller.
inline std::vector<RunRecord> run_replications(const ExperimentSpec& spec, std::shared_ptr<const Plan> plan,
                                               DisturbanceKind kind, Level level) {
  if (spec.replications < 1) fail(ErrorKind::kConfig, "replications must be >= 1");
  if (spec.controllers.empty()) fail(ErrorKind::kConfig, "no controllers configured");
  const auto& model = *plan->model;
  const int nc = static_cast<int>(spec.controllers.size());
  const double magnitude = spec.levels.magnitude(kind, level);
  std::vector<RunRecord> records(static_cast<std::size_t>(spec.replications * nc));
  std::vector<std::vector<Vector>> disturbances(static_cast<std::size_t>(spec.replications));
  for (int i = 0; i < spec.replications; ++i) {
    const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    disturbances[static_cast<std::size_t>(i)] = make_disturbance(model, plan->horizon(), kind, magnitude, seed, spec.shape);
    for (int c = 0; c < nc; ++c) {
      auto& r = records[static_cast<std::size_t>(i * nc + c)];
      r.system = spec.system;
      r.controller = spec.controllers[static_cast<std::size_t>(c)];
      r.kind = kind;
      r.level = level;
      r.seed = seed;
    }
  }
  parallel_for(static_cast<int>(records.size()), spec.jobs, [&](int j) {
    auto& r = records[static_cast<std::size_t>(j)];
    const auto res = run_closed_loop(plan, r.controller, model, disturbances[static_cast<std::size_t>(j / nc)], spec.tracker);
    r.diverged = res.diverged;
    r.failure = res.failure;
    r.raw_cost = res.diverged ? std::numeric_limits<double>::quiet_NaN() : res.cost;
  });
  normalize_by_seed(records);
  return records;
}

inline CellSummary summarize(const std::vector<RunRecord>& records, ControllerKind controller) {
  CellSummary s;
  std::vector<double> v;
  for (const auto& r : records) {
    if (r.controller != controller) continue;
    if (r.excluded) {
      ++s.n_excluded;
    } else {
      v.push_back(r.normalized_cost);
    }
  }
  s.n = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

struct BenchResult {
  std::vector<RunRecord> records;
  SummaryTables tables;
};

inline void add_to_tables(SummaryTables& tables, const ExperimentSpec& spec, const std::vector<RunRecord>& records,
                          DisturbanceKind kind, Level level) {
  for (auto c : spec.controllers) {
    tables[std::string(to_string(kind))][spec.system][std::string(to_string(c))][std::string(to_string(level))] =
        summarize(records, c);
  }
}

/// Sweep of the given kinds and levels sharing one plan.
inline BenchResult run_bench(const ExperimentSpec& spec, std::shared_ptr<const Plan> plan,
                             const std::vector<DisturbanceKind>& kinds, const std::vector<Level>& levels) {
  BenchResult out;
  for (auto k : kinds) {
    for (auto l : levels) {
      auto recs = run_replications(spec, plan, k, l);
      add_to_tables(out.tables, spec, recs, k, l);
      out.records.insert(out.records.end(), recs.begin(), recs.end());
    }
  }
  return out;
}

namespace detail {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline constexpr const char* kCsvHeader = "system,controller,disturbance_kind,level,seed,raw_cost,normalized_cost,diverged";

inline std::string to_csv(const std::vector<RunRecord>& records) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : records) {
    out += detail::concat(r.system, ',', to_string(r.controller), ',', to_string(r.kind), ',', to_string(r.level), ',',
                          r.seed, ',', detail::format_double(r.raw_cost), ',',
                          detail::format_double(r.normalized_cost), ',', r.diverged ? "true" : "false");
    out += '\n';
  }
  return out;
}

inline constexpr int kResultsSchemaVersion = 1;

inline nlohmann::json to_json(const SummaryTables& tables) {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [kind, systems] : tables)
    for (const auto& [system, controllers] : systems)
      for (const auto& [controller, levels] : controllers)
        for (const auto& [level, s] : levels) {
          auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
          t[kind][system][controller][level] = {{"mean", num(s.mean)}, {"std", num(s.std)}, {"n", s.n}, {"n_excluded", s.n_excluded}};
        }
  return {{"schema_version", kResultsSchemaVersion}, {"tables", t}};
}

inline SummaryTables tables_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema_version") || !j.contains("tables"))
    fail(ErrorKind::kIo, "results JSON needs schema_version and tables");
  if (j.at("schema_version").get<int>() != kResultsSchemaVersion)
    fail(ErrorKind::kIo, "unsupported results schema_version ", j.at("schema_version").dump());
  SummaryTables out;
  auto num = [](const nlohmann::json& v) {
    return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
  };
  for (const auto& [kind, systems] : j.at("tables").items())
    for (const auto& [system, controllers] : systems.items())
      for (const auto& [controller, levels] : controllers.items())
        for (const auto& [level, s] : levels.items()) {
          CellSummary c;
          c.mean = num(s.at("mean"));
          c.std = num(s.at("std"));
          c.n = s.at("n").get<int>();
          c.n_excluded = s.at("n_excluded").get<int>();
          out[kind][system][controller][level] = c;
        }
  return out;
}

}  // namespace trajdist
