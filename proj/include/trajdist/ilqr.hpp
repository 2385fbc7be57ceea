#pragma once

// Iterative LQR and extraction of the Gaussian trajectory distribution
// around its converged solution.

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "trajdist/core.hpp"
#include "trajdist/costs.hpp"
#include "trajdist/lqr.hpp"
#include "trajdist/systems.hpp"

namespace trajdist {

struct ILQRSettings {
  int max_iterations = 100;
  double cost_tol_rel = 1e-6;
  double grad_tol = 1e-6;
  std::vector<double> line_search_alphas = default_alphas();
  double reg_init = 1e-6;
  double reg_min = 1e-9;  // regularization below this snaps back to zero
  double reg_max = 1e6;
  double reg_scale = 10.0;

  static std::vector<double> default_alphas() {
    std::vector<double> a;
    for (int i = 0; i <= 10; ++i) a.push_back(std::ldexp(1.0, -i));
    return a;
  }

  void validate() const {
    if (max_iterations < 1) fail(ErrorKind::kConfig, "ilqr: max_iterations must be >= 1");
    if (!(cost_tol_rel > 0.0) || !(grad_tol > 0.0)) fail(ErrorKind::kConfig, "ilqr: tolerances must be positive");
    if (line_search_alphas.empty() || line_search_alphas.front() != 1.0)
      fail(ErrorKind::kConfig, "ilqr: line search must start at alpha = 1");
    for (std::size_t i = 0; i < line_search_alphas.size(); ++i) {
      const double a = line_search_alphas[i];
      if (!(a > 0.0 && a <= 1.0)) fail(ErrorKind::kConfig, "ilqr: line search alphas must lie in (0, 1]");
      if (i > 0 && !(a < line_search_alphas[i - 1])) fail(ErrorKind::kConfig, "ilqr: line search alphas must descend");
    }
    if (!(reg_init > 0.0) || !(reg_max >= reg_init) || !(reg_scale > 1.0) || reg_min < 0.0)
      fail(ErrorKind::kConfig, "ilqr: invalid regularization schedule");
  }
};

/// One accepted (or final) iterate: the cost after the step, the step
/// length taken and the regularization in effect.
struct IterationRecord {
  int iteration = 0;
  double cost = 0.0;
  double alpha = 0.0;
  double reg = 0.0;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

struct ILQRSolution {
  Trajectory trajectory;
  FeedbackPolicy policy;  // gains of the LQR subproblem at the returned trajectory
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double step_norm = 0.0;  // max-norm of the last subproblem's delta-u
  bool converged = false;
  std::vector<IterationRecord> trace;
};

namespace detail {

/// The LQR subproblem in deviation coordinates around a trajectory.
template <StageCostFunction Cost>
LQRProblem local_subproblem(const SystemModel& model, const Cost& cost, const Trajectory& traj) {
  const int T = traj.horizon();
  LQRProblem prob;
  prob.A.reserve(static_cast<std::size_t>(T));
  prob.B.reserve(static_cast<std::size_t>(T));
  prob.Q.reserve(static_cast<std::size_t>(T + 1));
  prob.R.reserve(static_cast<std::size_t>(T));
  prob.q.reserve(static_cast<std::size_t>(T + 1));
  prob.r.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    auto J = model.linearize(traj.states[i], traj.controls[i]);
    auto d = cost.quadratize(traj.states[i], traj.controls[i], t);
    prob.A.push_back(std::move(J.A));
    prob.B.push_back(std::move(J.B));
    prob.Q.push_back(std::move(d.cxx));
    prob.R.push_back(std::move(d.cuu));
    prob.q.push_back(std::move(d.cx));
    prob.r.push_back(std::move(d.cu));
  }
  auto d = cost.quadratize(traj.states.back(), Vector(), T);
  prob.Q.push_back(std::move(d.cxx));
  prob.q.push_back(std::move(d.cx));
  prob.x0 = Vector::Zero(model.nx());
  return prob;
}

inline double max_abs(const Vector& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Closed-loop forward pass on the true dynamics:
///   u_t = u_t^k + alpha k_t + K_t (x_t - x_t^k).
/// Returns false if the rollout leaves the finite range.
inline bool forward_pass(const SystemModel& model, const Trajectory& nominal, const FeedbackPolicy& policy,
                         double alpha, Trajectory& out) {
  const int T = nominal.horizon();
  out.states.resize(static_cast<std::size_t>(T + 1));
  out.controls.resize(static_cast<std::size_t>(T));
  out.states[0] = nominal.states[0];
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    out.controls[i] = nominal.controls[i] + alpha * policy.k[i] + policy.K[i] * (out.states[i] - nominal.states[i]);
    if (!out.controls[i].allFinite()) return false;
    try {
      out.states[i + 1] = model.step(out.states[i], out.controls[i]);
    } catch (const Error&) {
      return false;
    }
    if (!out.states[i + 1].allFinite()) return false;
  }
  return true;
}

}  // namespace detail

/// Minimize cost over controls from x0 with iterative LQR. Each accepted
/// iterate strictly lowers the true cost; the returned policy holds the
/// gains of the subproblem at the returned trajectory.
template <StageCostFunction Cost>
ILQRSolution ilqr_solve(const SystemModel& model, const Cost& cost, const Vector& x0, std::vector<Vector> u_init,
                        const ILQRSettings& settings = {}, const IterationCallback& on_iteration = {}) {
  settings.validate();
  const int T = cost.horizon();
  if (u_init.empty()) u_init.assign(static_cast<std::size_t>(T), Vector::Zero(model.nu()));
  require_dims(static_cast<int>(u_init.size()) == T,
               detail::concat("initial guess has ", u_init.size(), " controls, expected ", T));
  for (const auto& u : u_init)
    if (!u.allFinite()) fail(ErrorKind::kNumeric, "initial guess has non-finite controls");

  ILQRSolution sol;
  Trajectory traj;
  try {
    traj = rollout(model, x0, u_init);
  } catch (const Error& e) {
    fail(ErrorKind::kNumeric, "iteration 0: ", e.message());
  }
  double J = total_cost(cost, traj);
  if (!std::isfinite(J)) fail(ErrorKind::kNumeric, "iteration 0: initial cost is not finite");
  sol.initial_cost = J;

  auto emit = [&](const IterationRecord& rec) {
    sol.trace.push_back(rec);
    if (on_iteration) on_iteration(rec);
  };
  emit({0, J, 0.0, 0.0});

  double reg = 0.0;
  auto bump_reg = [&] { reg = std::max(reg * settings.reg_scale, settings.reg_init); };

  // Solve the subproblem at `traj`, raising regularization until the
  // backward pass succeeds.
  LQRProblem sub;
  auto backward = [&](int iteration) {
    sub = detail::local_subproblem(model, cost, traj);
    while (true) {
      if (auto p = try_solve_riccati(sub, reg)) return *p;
      bump_reg();
      if (reg > settings.reg_max)
        fail(ErrorKind::kSolverFailure, "iteration ", iteration, ": backward pass failed with regularization ", reg);
    }
  };

  Trajectory candidate;
  bool have_policy = false;
  for (int iter = 1; iter <= settings.max_iterations; ++iter) {
    sol.iterations = iter;
    FeedbackPolicy policy = backward(iter);
    sol.step_norm = detail::max_abs(rollout_policy(sub, policy));
    sol.policy = std::move(policy);
    have_policy = true;
    if (sol.step_norm < settings.grad_tol) {
      sol.converged = true;
      break;
    }

    bool accepted = false;
    double alpha_taken = 0.0;
    double J_new = J;
    for (double alpha : settings.line_search_alphas) {
      if (!detail::forward_pass(model, traj, sol.policy, alpha, candidate)) continue;
      const double Jc = total_cost(cost, candidate);
      if (std::isfinite(Jc) && Jc < J) {
        accepted = true;
        alpha_taken = alpha;
        J_new = Jc;
        break;
      }
    }

    if (!accepted) {
      bump_reg();
      if (reg > settings.reg_max) break;
      continue;
    }

    const double rel = (J - J_new) / std::max(std::abs(J), 1e-300);
    std::swap(traj, candidate);
    J = J_new;
    have_policy = false;
    emit({iter, J, alpha_taken, reg});
    reg /= settings.reg_scale;
    if (reg < settings.reg_min) reg = 0.0;
    if (rel < settings.cost_tol_rel) break;
  }

  if (!have_policy) {
    // Final subproblem at the returned trajectory: gains for feedback and
    // the convergence check.
    FeedbackPolicy policy = backward(sol.iterations);
    sol.step_norm = detail::max_abs(rollout_policy(sub, policy));
    sol.policy = std::move(policy);
    sol.converged = sol.step_norm < settings.grad_tol;
  }
  sol.trajectory = std::move(traj);
  sol.final_cost = J;
  return sol;
}

/// Gaussian over the optimal trajectory: x ~ N(x*, Sigma_x), u ~ N(u*, Sigma_u).
struct ILQRDistribution {
  int nx = 0;
  int nu = 0;
  int horizon = 0;
  Vector mean_x;     // stacked x*, time-major
  Matrix cov_x;      // Su Sigma_u Su'
  Vector mean_u;     // stacked u*
  Matrix cov_u;      // inverse Hessian of the final subproblem
  Matrix state_map;  // Su of the final subproblem
  std::vector<std::string> warnings;

  /// Cov(u, x) = Sigma_u Su'.
  Matrix cross_cov_ux() const { return cov_u * state_map.transpose(); }
};

struct ExtractionSettings {
  /// Largest tolerated spectral radius of prod_t A_t; above it Su loses
  /// all precision and extraction fails with a diagnostic.
  double max_transition_growth = 1e10;
};

template <StageCostFunction Cost>
ILQRDistribution extract_distribution(const ILQRSolution& solution, const SystemModel& model, const Cost& cost,
                                      const ExtractionSettings& settings = {}) {
  const Trajectory& traj = solution.trajectory;
  traj.validate();
  const int T = traj.horizon();
  const int nx = model.nx();
  const int nu = model.nu();

  ILQRDistribution dist;
  dist.nx = nx;
  dist.nu = nu;
  dist.horizon = T;
  if (!solution.converged) {
    dist.warnings.push_back(detail::concat("extracting a distribution from an unconverged solution (step norm ",
                                           solution.step_norm, ")"));
  }

  const LQRProblem sub = detail::local_subproblem(model, cost, traj);
  for (int t = 0; t < T; ++t) {
    if (!is_positive_definite(sub.R[static_cast<std::size_t>(t)]))
      fail(ErrorKind::kDistributionFailure, "control Hessian c_uu at step ", t, " is not positive definite");
  }

  Matrix product = Matrix::Identity(nx, nx);
  for (int t = 0; t < T; ++t) {
    product = sub.A[static_cast<std::size_t>(t)] * product;
    if (!product.allFinite())
      fail(ErrorKind::kDistributionFailure, "product of dynamics Jacobians overflows at step ", t);
  }
  const double radius = Eigen::EigenSolver<Matrix>(product, false).eigenvalues().cwiseAbs().maxCoeff();
  if (radius > settings.max_transition_growth) {
    fail(ErrorKind::kDistributionFailure, "spectral radius of the product of dynamics Jacobians is ", radius,
         " (limit ", settings.max_transition_growth, "); the linearized dynamics are too unstable");
  }

  const BatchMatrices batch = batch_matrices(sub);
  const Matrix H = batch_hessian(sub, batch);
  std::optional<SymmetricFactor> factor;
  try {
    factor.emplace(H);
  } catch (const Error& e) {
    fail(ErrorKind::kDistributionFailure, "subproblem Hessian: ", e.message());
  }

  dist.mean_x = traj.stacked_states();
  dist.mean_u = traj.stacked_controls();
  dist.cov_u = factor->inverse();
  dist.cov_x.noalias() = batch.Su * dist.cov_u * batch.Su.transpose();
  dist.cov_x = symmetrized(dist.cov_x);
  dist.cov_x.topRows(nx).setZero();
  dist.cov_x.leftCols(nx).setZero();
  dist.state_map = batch.Su;
  return dist;
}

}  // namespace trajdist
