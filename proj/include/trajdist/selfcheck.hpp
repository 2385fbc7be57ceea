#pragma once

// Randomized consistency checks shared by the `check` subcommand and the
// acceptance gate: batch/Riccati equivalence and finite-difference checks of
// dynamics and cost derivatives.

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "trajdist/costs.hpp"
#include "trajdist/lqr.hpp"
#include "trajdist/systems.hpp"

namespace trajdist {

struct CheckOutcome {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline Matrix random_matrix(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, int size, double scale = 1.0) {
  return random_matrix(rng, size, 1, scale);
}

/// M M' + floor I, symmetric positive definite.
inline Matrix random_spd(std::mt19937_64& rng, int n, double floor) {
  const Matrix M = random_matrix(rng, n, n, 1.0 / std::sqrt(static_cast<double>(n)));
  return symmetrized(M * M.transpose() + floor * Matrix::Identity(n, n));
}

/// Random well-conditioned LTV problem: A_t near identity, PSD Q, PD R,
/// optional linear terms.
inline LQRProblem random_ltv_problem(std::mt19937_64& rng, int nx, int nu, int horizon, bool linear_terms = true) {
  LQRProblem p;
  for (int t = 0; t < horizon; ++t) {
    p.A.push_back(Matrix::Identity(nx, nx) + random_matrix(rng, nx, nx, 0.1));
    p.B.push_back(random_matrix(rng, nx, nu, 0.5));
    p.R.push_back(random_spd(rng, nu, 0.5));
  }
  for (int t = 0; t <= horizon; ++t) p.Q.push_back(random_spd(rng, nx, 0.0));
  if (linear_terms) {
    for (int t = 0; t <= horizon; ++t) p.q.push_back(random_vector(rng, nx, 0.3));
    for (int t = 0; t < horizon; ++t) p.r.push_back(random_vector(rng, nu, 0.3));
  }
  p.x0 = random_vector(rng, nx);
  return p;
}

/// Largest |batch mean - Riccati rollout| over `count` random problems.
inline double batch_riccati_gap(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 5), steps(1, 30);
  double worst = 0.0;
  for (int i = 0; i < count; ++i) {
    const int nx = dim(rng);
    const int nu = std::uniform_int_distribution<int>(1, nx)(rng);
    const auto prob = random_ltv_problem(rng, nx, nu, steps(rng));
    const Vector batch = solve_batch(prob).mu_u;
    const Vector riccati = rollout_policy(prob, solve_riccati(prob));
    worst = std::max(worst, (batch - riccati).cwiseAbs().maxCoeff());
  }
  return worst;
}

/// Central-difference Jacobian of f at z.
inline Matrix numeric_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z, double h = 1e-6) {
  const Vector f0 = f(z);
  Matrix J(f0.size(), z.size());
  Vector zp = z, zm = z;
  for (int i = 0; i < z.size(); ++i) {
    zp(i) = z(i) + h;
    zm(i) = z(i) - h;
    J.col(i) = (f(zp) - f(zm)) / (2.0 * h);
    zp(i) = zm(i) = z(i);
  }
  return J;
}

/// Largest relative error of the analytic (A, B) against central
/// differences of step() at random states near the model's rest point.
inline double dynamics_jacobian_error(const SystemModel& model, std::uint64_t seed, int points) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const Vector x = random_vector(rng, model.nx(), 0.5);
    const Vector u = model.rest_control() + random_vector(rng, model.nu(), 0.5);
    const auto J = model.linearize(x, u);
    const Matrix A = numeric_jacobian([&](const Vector& z) { return model.step(z, u); }, x);
    const Matrix B = numeric_jacobian([&](const Vector& z) { return model.step(x, z); }, u);
    worst = std::max(worst, (A - J.A).cwiseAbs().maxCoeff() / std::max(1.0, A.cwiseAbs().maxCoeff()));
    worst = std::max(worst, (B - J.B).cwiseAbs().maxCoeff() / std::max(1.0, B.cwiseAbs().maxCoeff()));
  }
  return worst;
}

/// Largest relative error of the cost gradient (cx, cu) against central
/// differences of the stage value at random points.
template <StageCostFunction Cost>
double cost_gradient_error(const Cost& cost, int nx, int nu, std::uint64_t seed, int points) {
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const int t = std::uniform_int_distribution<int>(0, cost.horizon())(rng);
    const Vector x = random_vector(rng, nx, 0.7);
    const Vector u = random_vector(rng, nu, 0.7);
    const auto d = cost.quadratize(x, u, t);
    auto vx = [&](const Vector& z) { return Vector::Constant(1, cost.value(z, u, t)); };
    const Vector gx = numeric_jacobian(vx, x).transpose();
    worst = std::max(worst, (gx - d.cx).cwiseAbs().maxCoeff() / std::max(1.0, gx.cwiseAbs().maxCoeff()));
    if (t < cost.horizon()) {
      auto vu = [&](const Vector& z) { return Vector::Constant(1, cost.value(x, z, t)); };
      const Vector gu = numeric_jacobian(vu, u).transpose();
      worst = std::max(worst, (gu - d.cu).cwiseAbs().maxCoeff() / std::max(1.0, gu.cwiseAbs().maxCoeff()));
    }
  }
  return worst;
}

/// The built-in self-test suite run by `trajdist check`.
inline std::vector<CheckOutcome> run_self_checks(std::uint64_t seed) {
  std::vector<CheckOutcome> out;
  auto record = [&](std::string name, double err, double tol) {
    out.push_back({std::move(name), err <= tol, detail::concat("max error ", err, " (tolerance ", tol, ")")});
  };
  auto guarded = [&](const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const Error& e) {
      out.push_back({name, false, e.what()});
    }
  };

  guarded("batch_riccati_equivalence", [&] { record("batch_riccati_equivalence", batch_riccati_gap(seed, 20), 1e-8); });
  for (const auto& name : model_names()) {
    guarded("dynamics_jacobian/" + name, [&] {
      const auto model = make_model(name, 0.05);
      record("dynamics_jacobian/" + name, dynamics_jacobian_error(*model, seed, 10), 1e-5);
    });
    guarded("cost_gradient/" + name, [&] {
      const auto model = make_model(name, 0.05);
      std::mt19937_64 rng(seed);
      const int nx = model->nx();
      const int nu = model->nu();
      const int wd = model->workspace_dim();
      GoalCostSpec spec;
      spec.x_goal = random_vector(rng, nx);
      spec.Q = random_spd(rng, nx, 0.1);
      spec.R = random_spd(rng, nu, 0.5);
      spec.Q_T = random_spd(rng, nx, 1.0);
      spec.obstacles.push_back({random_vector(rng, wd, 0.3), 0.8, 5.0});
      spec.task = TaskTarget{random_vector(rng, wd), Matrix::Identity(wd, wd), 2.0 * Matrix::Identity(wd, wd)};
      const GoalCost cost(model, spec, 5);
      record("cost_gradient/" + name, cost_gradient_error(cost, nx, nu, seed, 20), 1e-5);
    });
  }
  return out;
}

}  // namespace trajdist
