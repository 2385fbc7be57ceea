#pragma once

// Goal-reaching cost (long horizon), reference-tracking cost (short horizon)
// and the obstacle potential field, with first and second derivatives.
//
// Every quadratic term carries a factor 1/2, so the Hessian of a cost is
// exactly its weight matrix and the inverse Hessian is a covariance.

#include <concepts>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trajdist/core.hpp"
#include "trajdist/systems.hpp"

namespace trajdist {

struct Obstacle {
  Vector center;
  double radius = 0.0;
  double weight = 0.0;
};

/// Quadratic target on the model's workspace point (end effector).
struct TaskTarget {
  Vector point;
  Matrix weight;           // stage weight
  Matrix terminal_weight;  // weight at t = T
};

struct GoalCostSpec {
  Vector x_goal;
  Matrix Q;
  Matrix R;
  Matrix Q_T;
  Vector u_ref;  // control offset; empty means zero
  std::vector<Obstacle> obstacles;
  std::optional<TaskTarget> task;
  Matrix Q_track;  // high-gain weight used when tracking the mean; empty means Q_T

  Vector control_reference(int nu) const { return u_ref.size() == 0 ? Vector::Zero(nu) : u_ref; }
  const Matrix& mean_tracking_weight() const { return Q_track.size() == 0 ? Q_T : Q_track; }

  void validate(const SystemModel& model) const;

  /// Non-fatal configuration remarks (e.g. Q not much smaller than Q_T).
  std::vector<std::string> lint() const;
};

struct TrackingReference {
  Vector x_ref;
  Matrix Q;
};

/// Short-horizon tracking cost. refs has one entry per step 0..Ts (the entry
/// for step 0 is the current state, whose weight is irrelevant); u_refs has
/// Ts entries. When `terminal` is set the last step uses the goal's
/// terminal cost instead of refs.back().
struct TrackingCostSpec {
  std::vector<TrackingReference> refs;
  std::vector<Vector> u_refs;
  Matrix R;
  std::vector<Obstacle> obstacles;
  std::optional<GoalCostSpec> terminal;

  int horizon() const { return static_cast<int>(refs.size()) - 1; }
};

struct StageCostDerivatives {
  double value = 0.0;
  Vector cx;
  Vector cu;
  Matrix cxx;
  Matrix cuu;
};

/// Anything ilqr_solve can minimize: stage t in [0, horizon()) and the
/// terminal stage t == horizon() (whose control argument is ignored).
template <typename C>
concept StageCostFunction = requires(const C& c, const Vector& x, const Vector& u, int t) {
  { c.horizon() } -> std::convertible_to<int>;
  { c.value(x, u, t) } -> std::convertible_to<double>;
  { c.quadratize(x, u, t) } -> std::same_as<StageCostDerivatives>;
};

/// l(p) = sum_k w_k max(0, r_k - |p - c_k|)^2 on a workspace point p.
inline double eval_obstacle_cost(std::span<const Obstacle> obstacles, const Vector& point) {
  double total = 0.0;
  for (const auto& ob : obstacles) {
    if (!(ob.radius > 0.0)) fail(ErrorKind::kContract, "obstacle radius must be positive");
    require_dims(ob.center.size() == point.size(), "obstacle center and workspace point differ in dimension");
    const double pen = ob.radius - (point - ob.center).norm();
    if (pen > 0.0) total += ob.weight * pen * pen;
  }
  return total;
}

namespace detail {

/// Adds 1/2 * l(p(x)) with its gradient and Gauss-Newton Hessian.
inline void add_obstacle_terms(const SystemModel& model, std::span<const Obstacle> obstacles, const Vector& x,
                               StageCostDerivatives& d) {
  if (obstacles.empty()) return;
  const Vector p = model.workspace_point(x);
  bool any = false;
  Vector grad_p = Vector::Zero(p.size());
  Matrix hess_p = Matrix::Zero(p.size(), p.size());
  for (const auto& ob : obstacles) {
    const Vector diff = p - ob.center;
    const double dist = diff.norm();
    const double pen = ob.radius - dist;
    if (pen <= 0.0) continue;
    any = true;
    d.value += 0.5 * ob.weight * pen * pen;
    if (dist > 1e-12) {
      const Vector n = diff / dist;
      grad_p -= ob.weight * pen * n;
      hess_p += ob.weight * n * n.transpose();
    }
  }
  if (!any) return;
  const Matrix J = model.workspace_jacobian(x);
  d.cx += J.transpose() * grad_p;
  d.cxx += J.transpose() * hess_p * J;
}

inline void add_task_terms(const SystemModel& model, const TaskTarget& task, const Matrix& weight, const Vector& x,
                           StageCostDerivatives& d) {
  const Vector e = model.workspace_point(x) - task.point;
  const Matrix J = model.workspace_jacobian(x);
  const Vector We = weight * e;
  d.value += 0.5 * e.dot(We);
  d.cx += J.transpose() * We;
  d.cxx += J.transpose() * weight * J;
}

inline void add_state_quadratic(const Vector& x, const Vector& ref, const Matrix& W, StageCostDerivatives& d) {
  const Vector e = x - ref;
  const Vector We = W * e;
  d.value += 0.5 * e.dot(We);
  d.cx += We;
  d.cxx += W;
}

inline void add_control_quadratic(const Vector& u, const Vector& ref, const Matrix& R, StageCostDerivatives& d) {
  const Vector e = u - ref;
  const Vector Re = R * e;
  d.value += 0.5 * e.dot(Re);
  d.cu += Re;
  d.cuu += R;
}

inline StageCostDerivatives zero_derivatives(int nx, int nu) {
  return {0.0, Vector::Zero(nx), Vector::Zero(nu), Matrix::Zero(nx, nx), Matrix::Zero(nu, nu)};
}

inline void check_square(const Matrix& m, int n, const char* what) {
  require_dims(m.rows() == n && m.cols() == n,
               detail::concat(what, " is ", m.rows(), "x", m.cols(), ", expected ", n, "x", n));
  if (!m.allFinite()) fail(ErrorKind::kNumeric, what, " has non-finite entries");
  if (relative_asymmetry(m) > 1e-9) fail(ErrorKind::kContract, what, " is not symmetric");
}

/// Terminal goal term: 1/2 (x-xg)' Q_T (x-xg) plus the terminal task term.
inline void add_goal_terminal(const SystemModel& model, const GoalCostSpec& spec, const Vector& x,
                              StageCostDerivatives& d) {
  add_state_quadratic(x, spec.x_goal, spec.Q_T, d);
  if (spec.task) add_task_terms(model, *spec.task, spec.task->terminal_weight, x, d);
}

}  // namespace detail

inline void GoalCostSpec::validate(const SystemModel& model) const {
  const int nx = model.nx();
  const int nu = model.nu();
  require_dims(x_goal.size() == nx, detail::concat("x_goal has size ", x_goal.size(), ", expected ", nx));
  detail::check_square(Q, nx, "Q");
  detail::check_square(Q_T, nx, "Q_T");
  detail::check_square(R, nu, "R");
  if (!is_psd(Q)) fail(ErrorKind::kContract, "Q must be positive semidefinite");
  if (!is_psd(Q_T)) fail(ErrorKind::kContract, "Q_T must be positive semidefinite");
  if (!is_positive_definite(R)) fail(ErrorKind::kContract, "R must be positive definite");
  if (u_ref.size() != 0) require_dims(u_ref.size() == nu, "u_ref has the wrong size");
  if (Q_track.size() != 0) {
    detail::check_square(Q_track, nx, "Q_track");
    if (!is_psd(Q_track)) fail(ErrorKind::kContract, "Q_track must be positive semidefinite");
  }
  const int wd = model.workspace_dim();
  for (const auto& ob : obstacles) {
    require_dims(ob.center.size() == wd, "obstacle center does not match the workspace dimension");
    if (!(ob.radius > 0.0)) fail(ErrorKind::kContract, "obstacle radius must be positive");
    if (ob.weight < 0.0) fail(ErrorKind::kContract, "obstacle weight must be non-negative");
  }
  if (task) {
    require_dims(task->point.size() == wd, "task target does not match the workspace dimension");
    detail::check_square(task->weight, wd, "task weight");
    detail::check_square(task->terminal_weight, wd, "task terminal weight");
  }
}

inline std::vector<std::string> GoalCostSpec::lint() const {
  std::vector<std::string> notes;
  const double q = Q.size() ? Q.diagonal().maxCoeff() : 0.0;
  const double qt = Q_T.size() ? Q_T.diagonal().maxCoeff() : 0.0;
  if (qt > 0.0 && q > 0.1 * qt) {
    notes.push_back(detail::concat("running weight Q (max ", q, ") is not much smaller than Q_T (max ", qt,
                                   "); the trajectory distribution will be narrow everywhere"));
  }
  return notes;
}

/// The long-horizon objective
///   1/2 sum_{t<T} [ |x_t - x_goal|_Q^2 + |u_t - u_ref|_R^2 + l(x_t) ] + 1/2 |x_T - x_goal|_{Q_T}^2
/// (plus the optional task-space terms).
class GoalCost {
 public:
  GoalCost(std::shared_ptr<const SystemModel> model, GoalCostSpec spec, int horizon)
      : model_(std::move(model)), spec_(std::move(spec)), horizon_(horizon) {
    if (horizon_ < 1) fail(ErrorKind::kContract, "cost horizon must be >= 1");
    spec_.validate(*model_);
    u_ref_ = spec_.control_reference(model_->nu());
  }

  int horizon() const { return horizon_; }
  const GoalCostSpec& spec() const { return spec_; }
  const SystemModel& model() const { return *model_; }

  double value(const Vector& x, const Vector& u, int t) const { return quadratize(x, u, t).value; }

  StageCostDerivatives quadratize(const Vector& x, const Vector& u, int t) const {
    if (t < 0 || t > horizon_) fail(ErrorKind::kContract, "stage index ", t, " outside [0, ", horizon_, "]");
    require_dims(x.size() == model_->nx(), "state size does not match the cost");
    auto d = detail::zero_derivatives(model_->nx(), model_->nu());
    if (t == horizon_) {
      detail::add_goal_terminal(*model_, spec_, x, d);
      return d;
    }
    require_dims(u.size() == model_->nu(), "control size does not match the cost");
    detail::add_state_quadratic(x, spec_.x_goal, spec_.Q, d);
    detail::add_control_quadratic(u, u_ref_, spec_.R, d);
    detail::add_obstacle_terms(*model_, spec_.obstacles, x, d);
    if (spec_.task) detail::add_task_terms(*model_, *spec_.task, spec_.task->weight, x, d);
    return d;
  }

 private:
  std::shared_ptr<const SystemModel> model_;
  GoalCostSpec spec_;
  int horizon_;
  Vector u_ref_;
};

/// Short-horizon tracking objective
///   1/2 sum_{t<Ts} [ |x_t - xbar_t|_{Q_t}^2 + |u_t - ubar_t|_R^2 + l(x_t) ] + 1/2 |x_Ts - xbar_Ts|_{Q_Ts}^2.
class TrackingCost {
 public:
  TrackingCost(std::shared_ptr<const SystemModel> model, TrackingCostSpec spec)
      : model_(std::move(model)), spec_(std::move(spec)) {
    const int nx = model_->nx();
    const int nu = model_->nu();
    if (spec_.refs.size() < 2) fail(ErrorKind::kContract, "tracking cost needs at least one step");
    require_dims(spec_.u_refs.size() == spec_.refs.size() - 1, "tracking cost needs one control reference per step");
    detail::check_square(spec_.R, nu, "R");
    for (const auto& ref : spec_.refs) {
      require_dims(ref.x_ref.size() == nx, "tracking reference has the wrong size");
      detail::check_square(ref.Q, nx, "Q_t");
    }
    for (const auto& u : spec_.u_refs) require_dims(u.size() == nu, "control reference has the wrong size");
  }

  int horizon() const { return spec_.horizon(); }
  const TrackingCostSpec& spec() const { return spec_; }

  double value(const Vector& x, const Vector& u, int t) const { return quadratize(x, u, t).value; }

  StageCostDerivatives quadratize(const Vector& x, const Vector& u, int t) const {
    const int T = horizon();
    if (t < 0 || t > T) fail(ErrorKind::kContract, "stage index ", t, " outside [0, ", T, "]");
    auto d = detail::zero_derivatives(model_->nx(), model_->nu());
    const auto& ref = spec_.refs[static_cast<std::size_t>(t)];
    if (t == T) {
      if (spec_.terminal) {
        detail::add_goal_terminal(*model_, *spec_.terminal, x, d);
      } else {
        detail::add_state_quadratic(x, ref.x_ref, ref.Q, d);
      }
      return d;
    }
    detail::add_state_quadratic(x, ref.x_ref, ref.Q, d);
    detail::add_control_quadratic(u, spec_.u_refs[static_cast<std::size_t>(t)], spec_.R, d);
    detail::add_obstacle_terms(*model_, spec_.obstacles, x, d);
    return d;
  }

 private:
  std::shared_ptr<const SystemModel> model_;
  TrackingCostSpec spec_;
};

template <StageCostFunction Cost>
double total_cost(const Cost& cost, const Trajectory& traj) {
  const int T = cost.horizon();
  require_dims(traj.horizon() == T,
               detail::concat("trajectory horizon ", traj.horizon(), " does not match cost horizon ", T));
  double total = 0.0;
  for (int t = 0; t < T; ++t) total += cost.value(traj.states[static_cast<std::size_t>(t)], traj.controls[static_cast<std::size_t>(t)], t);
  total += cost.value(traj.states.back(), Vector(), T);
  return total;
}

inline double eval_goal_cost(std::shared_ptr<const SystemModel> model, const GoalCostSpec& spec,
                             const Trajectory& traj) {
  traj.validate();
  GoalCost cost(std::move(model), spec, traj.horizon());
  return total_cost(cost, traj);
}

}  // namespace trajdist
