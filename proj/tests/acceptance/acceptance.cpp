// Acceptance gate: runs every criterion at its stated tolerance and prints
// one PASS/FAIL line per criterion. Exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajdist/config.hpp"
#include "trajdist/harness.hpp"
#include "trajdist/selfcheck.hpp"
#include "trajdist/trajdist.hpp"

namespace {

using namespace trajdist;

struct Verdict {
  bool passed = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ExperimentSpec preset(const std::string& name) {
  return load_config(std::string(TRAJDIST_CONFIG_DIR) + "/" + name + ".json").spec;
}

// Reduced cost by direct simulation, independent of the batch matrices.
double reduced_cost(const LQRProblem& p, const Vector& u) {
  const int nu = p.nu();
  Vector x = p.x0;
  double c = 0.0;
  for (int t = 0; t < p.horizon(); ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Vector ut = u.segment(nu * t, nu);
    c += 0.5 * x.dot(p.Q[i] * x) + 0.5 * ut.dot(p.R[i] * ut) + p.q[i].dot(x) + p.r[i].dot(ut);
    x = p.A[i] * x + p.B[i] * ut;
  }
  return c + 0.5 * x.dot(p.Q.back() * x) + p.q.back().dot(x);
}

Verdict batch_riccati() {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const int nx = std::uniform_int_distribution<int>(1, 4)(rng);
    const int nu = std::uniform_int_distribution<int>(1, std::min(nx, 2))(rng);
    const int T = std::uniform_int_distribution<int>(1, 20)(rng);
    const auto p = random_ltv_problem(rng, nx, nu, T);
    const Vector gap = solve_batch(p).mu_u - rollout_policy(p, solve_riccati(p));
    worst = std::max(worst, gap.cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-8, fmt("max |mu_u - riccati| = %.3g over 50 problems (tol 1e-8)", worst)};
}

Verdict covariance_inverse_hessian() {
  std::mt19937_64 rng(202);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int nx = 1 + i % 3;
    const int nu = 1 + i % 2;
    const int T = 2 + i % 5;
    const auto p = random_ltv_problem(rng, nx, nu, T);
    const Matrix sigma = solve_batch(p).Sigma_u;
    const int n = nu * T;
    const Vector u0 = random_vector(rng, n);
    const double h = 1e-3;
    Matrix H(n, n);
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        Vector pp = u0, pm = u0, mp = u0, mm = u0;
        pp(a) += h, pp(b) += h;
        pm(a) += h, pm(b) -= h;
        mp(a) -= h, mp(b) += h;
        mm(a) -= h, mm(b) -= h;
        H(a, b) = (reduced_cost(p, pp) - reduced_cost(p, pm) - reduced_cost(p, mp) + reduced_cost(p, mm)) / (4 * h * h);
      }
    }
    const Matrix fd = symmetrized(H).inverse();
    worst = std::max(worst, (fd - sigma).norm() / sigma.norm());
  }
  return {worst <= 1e-4, fmt("max relative error %.3g over 20 instances (tol 1e-4)", worst)};
}

Verdict conditioning_oracle() {
  // Hand-computable 2-block cases: mean2 + s12/s11 (a - mean1), s22 - s12^2/s11.
  struct Case {
    double m1, m2, s11, s12, s22, a;
  };
  double hand = 0.0;
  for (const Case& c : {Case{0, 0, 1, 0.5, 1, 1}, Case{1, -1, 2, 1, 2, 3}, Case{0.5, 2, 4, 0, 1, -7},
                        Case{-2, 3, 0.25, -0.2, 1, -1.5}}) {
    const GaussianDist joint{Eigen::Vector2d(c.m1, c.m2), (Matrix(2, 2) << c.s11, c.s12, c.s12, c.s22).finished()};
    const auto g = condition_leading(joint, Vector::Constant(1, c.a));
    hand = std::max(hand, std::abs(g.mean(0) - (c.m2 + c.s12 / c.s11 * (c.a - c.m1))));
    hand = std::max(hand, std::abs(g.cov(0, 0) - (c.s22 - c.s12 * c.s12 / c.s11)));
  }

  // Monte Carlo on 3-block toys: keep draws whose first block falls in a
  // narrow window around the observed value until 1e5 are accepted.
  std::mt19937_64 rng(303);
  double mc = 0.0;
  for (int toy = 0; toy < 3; ++toy) {
    const GaussianDist joint{random_vector(rng, 3), random_spd(rng, 3, 0.3)};
    const double sd1 = std::sqrt(joint.cov(0, 0));
    const double a = joint.mean(0) + 0.5 * sd1;
    const double window = 0.01 * sd1;
    const auto g = condition_leading(joint, Vector::Constant(1, a));
    const Matrix L = joint.cov.llt().matrixL();
    std::normal_distribution<double> n;
    Eigen::Vector2d sum = Eigen::Vector2d::Zero();
    Eigen::Matrix2d sq = Eigen::Matrix2d::Zero();
    int accepted = 0;
    while (accepted < 100000) {
      const Vector x = joint.mean + L * Eigen::Vector3d(n(rng), n(rng), n(rng));
      if (std::abs(x(0) - a) > window) continue;
      sum += x.tail(2);
      sq += x.tail(2) * x.tail(2).transpose();
      ++accepted;
    }
    const Eigen::Vector2d mean = sum / accepted;
    const Eigen::Matrix2d cov = sq / accepted - mean * mean.transpose();
    const double scale = std::sqrt(g.cov.diagonal().maxCoeff());
    mc = std::max(mc, (mean - g.mean).cwiseAbs().maxCoeff() / scale);
    mc = std::max(mc, (cov - g.cov).cwiseAbs().maxCoeff() / g.cov.diagonal().maxCoeff());
  }
  return {hand <= 1e-10 && mc <= 0.05,
          fmt("hand-computed max error %.3g (tol 1e-10); Monte Carlo max relative error %.3g (tol 0.05)", hand, mc)};
}

Verdict ilqr_convergence() {
  std::string detail;
  bool ok = true;
  for (const char* name : {"pendulum", "quadcopter"}) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> costs;
    const auto plan = make_plan(preset(name), [&](const IterationRecord& r) { costs.push_back(r.cost); });
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool decreasing = costs.size() >= 2;
    for (std::size_t i = 1; i < costs.size(); ++i) decreasing = decreasing && costs[i] < costs[i - 1];
    const bool pass = decreasing && plan->solution.converged && plan->solution.step_norm < 1e-6 && secs < 60.0;
    ok = ok && pass;
    detail += fmt("%s: %d iterations, strictly decreasing %s, step norm %.2g, %.1f s; ", name, plan->solution.iterations,
                  decreasing ? "yes" : "no", plan->solution.step_norm, secs);
  }
  return {ok, detail};
}

Verdict variance_profile() {
  std::string detail;
  bool ok = true;
  for (const char* name : {"point_mass", "unicycle", "bicopter"}) {
    const auto spec = preset(name);
    const auto plan = make_plan(spec);
    const auto& d = plan->distribution;
    const int T = d.horizon;
    const int nx = d.nx;
    const int wd = plan->model->workspace_dim();
    auto pos_std = [&](int t) { return std::sqrt(d.cov_x.block(nx * t, nx * t, wd, wd).trace()); };
    double mid = 0.0;
    for (int t = T / 4; t <= 3 * T / 4; ++t) mid = std::max(mid, pos_std(t));
    const double ratio = pos_std(T) / mid;
    ok = ok && ratio < 0.3;
    detail += fmt("%s %.3f; ", name, ratio);
  }
  return {ok, "terminal / max mid-trajectory position std: " + detail + "(tol < 0.3)"};
}

struct Sweep {
  std::vector<RunRecord> records;
  SummaryTables tables;
};

Sweep quadcopter_sweep() {
  const auto spec = preset("quadcopter");
  const auto plan = make_plan(spec);
  Sweep s;
  for (auto [kind, level] : {std::pair{DisturbanceKind::kImpulse, Level::kMedium},
                             std::pair{DisturbanceKind::kTimeVarying, Level::kMedium},
                             std::pair{DisturbanceKind::kImpulse, Level::kLarge}}) {
    auto recs = run_replications(spec, plan, kind, level);
    add_to_tables(s.tables, spec, recs, kind, level);
    s.records.insert(s.records.end(), recs.begin(), recs.end());
  }
  return s;
}

const CellSummary& cell(const SummaryTables& t, const char* kind, const char* system, const char* controller,
                        const char* level) {
  return t.at(kind).at(system).at(controller).at(level);
}

Verdict table_ordering(const Sweep& s, double seconds) {
  bool ok = seconds < 20 * 60;
  std::string detail;
  for (const char* kind : {"impulse", "time_varying"}) {
    const auto& c = cell(s.tables, kind, "quadcopter", "mpc_cond", "medium");
    const auto& m = cell(s.tables, kind, "quadcopter", "mpc_marg", "medium");
    const auto& e = cell(s.tables, kind, "quadcopter", "mpc_mean", "medium");
    ok = ok && c.mean < m.mean && m.mean < e.mean && c.mean <= 1.3;
    detail += fmt("%s: cond %.3f < marg %.3f < mean %.3f; ", kind, c.mean, m.mean, e.mean);
  }
  return {ok, detail + fmt("sweep %.1f s", seconds)};
}

Verdict feed_fragility(const Sweep& s) {
  const auto& f = cell(s.tables, "impulse", "quadcopter", "ilqr_feed", "large");
  const auto& m = cell(s.tables, "impulse", "quadcopter", "mpc_marg", "large");
  int diverged = 0;
  for (const auto& r : s.records)
    if (r.kind == DisturbanceKind::kImpulse && r.level == Level::kLarge && r.controller == ControllerKind::kIlqrFeed &&
        r.diverged)
      ++diverged;
  return {diverged >= 1 || f.std >= 3.0 * m.std,
          fmt("ilqr_feed %d diverged, std %.3f vs mpc_marg std %.3f (ratio %.1f, need >= 3)", diverged, f.std, m.std,
              f.std / m.std)};
}

Verdict manipulator_parity() {
  const auto spec = preset("manipulator");
  const auto t0 = std::chrono::steady_clock::now();
  const auto plan = make_plan(spec);
  const auto recs = run_replications(spec, plan, DisturbanceKind::kImpulse, Level::kSmall);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  bool ok = secs < 600;
  std::string detail;
  for (auto c : kAllControllers) {
    const auto s = summarize(recs, c);
    ok = ok && s.n_excluded == 0 && s.mean >= 1.0 && s.mean <= 1.10;
    detail += fmt("%s %.3f (%d excluded); ", std::string(to_string(c)).c_str(), s.mean, s.n_excluded);
  }
  return {ok, detail + fmt("%.1f s", secs)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const std::function<Verdict()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!v.passed) ++failures;
    std::cout << (v.passed ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << v.detail
              << fmt(" [%.1f s]", secs) << std::endl;
  };

  report(1, "batch/Riccati equivalence", [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto v = batch_riccati();
    v.passed = v.passed && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 10;
    return v;
  });
  report(2, "covariance is the inverse Hessian", [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto v = covariance_inverse_hessian();
    v.passed = v.passed && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 30;
    return v;
  });
  report(3, "Gaussian conditioning oracle", [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto v = conditioning_oracle();
    v.passed = v.passed && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 60;
    return v;
  });
  report(4, "iLQR descent and convergence", ilqr_convergence);
  report(5, "variance narrows at the goal", [] {
    const auto t0 = std::chrono::steady_clock::now();
    auto v = variance_profile();
    v.passed = v.passed && std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() < 120;
    return v;
  });

  Sweep first;
  double sweep_seconds = 0.0;
  std::string sweep_error;
  {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      first = quadcopter_sweep();
    } catch (const std::exception& e) {
      sweep_error = e.what();
    }
    sweep_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  auto need_sweep = [&] {
    if (!sweep_error.empty()) throw std::runtime_error("quadcopter sweep failed: " + sweep_error);
  };
  report(6, "quadcopter controller ordering", [&] {
    need_sweep();
    return table_ordering(first, sweep_seconds);
  });
  report(7, "ilqr_feed fragility", [&] {
    need_sweep();
    return feed_fragility(first);
  });
  report(8, "manipulator nominal parity", manipulator_parity);
  report(9, "determinism", [&] {
    need_sweep();
    const auto again = quadcopter_sweep();
    const std::string a = to_csv(first.records), b = to_csv(again.records);
    return Verdict{a == b, fmt("repeat sweep CSV %s (%zu bytes)", a == b ? "identical" : "differs", a.size())};
  });

  std::cout << (failures == 0 ? "all criteria passed" : fmt("%d criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
