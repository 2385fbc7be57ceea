#pragma once

// Tracking controllers for a long-horizon plan and its distribution:
//   ilqr_feed  u = u*_t + K_t (x - x*_t)
//   mpc_mean   short-horizon MPC on x*_t with the fixed high-gain weight
//   mpc_marg   short-horizon MPC weighted by the per-step marginal precision
//   mpc_cond   short-horizon MPC on the distribution conditioned on x_tau

#include <array>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "trajdist/costs.hpp"
#include "trajdist/gaussian.hpp"
#include "trajdist/ilqr.hpp"
#include "trajdist/systems.hpp"

namespace trajdist {

enum class ControllerKind { kIlqrFeed, kMpcMean, kMpcMarg, kMpcCond };

inline constexpr std::array<ControllerKind, 4> kAllControllers = {ControllerKind::kIlqrFeed, ControllerKind::kMpcMean,
                                                                  ControllerKind::kMpcMarg, ControllerKind::kMpcCond};

inline std::string_view to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::kIlqrFeed: return "ilqr_feed";
    case ControllerKind::kMpcMean: return "mpc_mean";
    case ControllerKind::kMpcMarg: return "mpc_marg";
    case ControllerKind::kMpcCond: return "mpc_cond";
  }
  return "unknown";
}

inline ControllerKind parse_controller(std::string_view name) {
  for (auto k : kAllControllers)
    if (to_string(k) == name) return k;
  fail(ErrorKind::kConfig, "unknown controller '", std::string(name), "'");
}

/// A solved long-horizon problem with its trajectory distribution.
struct Plan {
  std::shared_ptr<const SystemModel> model;
  GoalCostSpec goal;
  Vector x0;
  ILQRSolution solution;
  ILQRDistribution distribution;
  Matrix cross_cov_ux;  // Cov(u, x), cached for conditioning

  int horizon() const { return solution.trajectory.horizon(); }
  int nx() const { return model->nx(); }
  int nu() const { return model->nu(); }
  const Vector& state(int t) const { return solution.trajectory.states[static_cast<std::size_t>(t)]; }
  const Vector& control(int t) const { return solution.trajectory.controls[static_cast<std::size_t>(t)]; }
  TrajDist state_distribution() const {
    return TrajDist({distribution.mean_x, distribution.cov_x}, distribution.nx, distribution.horizon);
  }
  double cost() const { return solution.final_cost; }
};

/// Solve the long-horizon problem and extract its distribution.
inline std::shared_ptr<const Plan> make_plan(std::shared_ptr<const SystemModel> model, GoalCostSpec goal,
                                             const Vector& x0, int horizon, const ILQRSettings& settings = {},
                                             std::vector<Vector> u_init = {}, const IterationCallback& on_iteration = {},
                                             const ExtractionSettings& extraction = {}) {
  auto plan = std::make_shared<Plan>();
  plan->model = model;
  plan->goal = goal;
  plan->x0 = x0;
  const GoalCost cost(model, std::move(goal), horizon);
  plan->solution = ilqr_solve(*model, cost, x0, std::move(u_init), settings, on_iteration);
  plan->distribution = extract_distribution(plan->solution, *model, cost, extraction);
  plan->cross_cov_ux = plan->distribution.cross_cov_ux();
  return plan;
}

struct TrackerSettings {
  int short_horizon = 30;
  bool warm_start = true;
  ILQRSettings inner = default_inner();
  double precision_floor = 1e-6;
  /// Use the goal's terminal cost at the last reference step once the
  /// window reaches the end of the plan.
  bool terminal_goal = true;
  double divergence_threshold = 1e3;

  static ILQRSettings default_inner() {
    ILQRSettings s;
    s.max_iterations = 20;
    s.cost_tol_rel = 1e-6;
    s.grad_tol = 1e-6;
    return s;
  }
};

struct TelemetryRecord {
  int tau = 0;
  Vector x;
  Vector u;
  Vector reference;  // reference state for step tau+1
  double q_min_eig = 0.0;
  double q_max_eig = 0.0;
  int inner_iterations = 0;
};

class Tracker {
 public:
  Tracker(std::shared_ptr<const Plan> plan, ControllerKind kind, TrackerSettings settings = {})
      : plan_(std::move(plan)), kind_(kind), settings_(std::move(settings)) {
    if (settings_.short_horizon < 1) fail(ErrorKind::kConfig, "short horizon must be >= 1");
    if (settings_.short_horizon > plan_->horizon())
      fail(ErrorKind::kConfig, "short horizon ", settings_.short_horizon, " exceeds the plan horizon ", plan_->horizon());
    settings_.inner.validate();
    if (kind_ == ControllerKind::kMpcMarg) {
      const TrajDist dist = plan_->state_distribution();
      marginal_precision_.reserve(static_cast<std::size_t>(plan_->horizon() + 1));
      for (int t = 0; t <= plan_->horizon(); ++t)
        marginal_precision_.push_back(precision_from_covariance(marginal(dist, t).cov, settings_.precision_floor));
    }
  }

  ControllerKind kind() const { return kind_; }
  int step_index() const { return tau_; }
  const Plan& plan() const { return *plan_; }
  const std::vector<TelemetryRecord>& telemetry() const { return telemetry_; }

  /// Control for the current tick; advances the tick counter.
  Vector control(const Vector& x) {
    if (tau_ >= plan_->horizon()) fail(ErrorKind::kContract, "tracker is past the end of the plan");
    TelemetryRecord rec;
    rec.tau = tau_;
    rec.x = x;
    if (kind_ == ControllerKind::kIlqrFeed) {
      rec.u = control_feedback(x);
      rec.reference = plan_->state(tau_ + 1);
    } else {
      rec.u = control_mpc(x);
      rec.reference = last_reference_;
      rec.inner_iterations = last_inner_iterations_;
      rec.q_min_eig = last_q_range_[0];
      rec.q_max_eig = last_q_range_[1];
    }
    telemetry_.push_back(rec);
    ++tau_;
    return rec.u;
  }

  Vector control_feedback(const Vector& x) const {
    if (tau_ >= plan_->horizon()) fail(ErrorKind::kContract, "feedback control requested at tau ", tau_, " >= T");
    require_dims(x.size() == plan_->nx(), "feedback control: state has the wrong size");
    const auto& policy = plan_->solution.policy;
    return plan_->control(tau_) + policy.K[static_cast<std::size_t>(tau_)] * (x - plan_->state(tau_));
  }

  /// Build the short-horizon cost for the current tick and observed state.
  TrackingCostSpec reference_cost(const Vector& x) const {
    if (kind_ == ControllerKind::kIlqrFeed) fail(ErrorKind::kContract, "ilqr_feed has no tracking cost");
    require_dims(x.size() == plan_->nx(), "tracking: state has the wrong size");
    const int T = plan_->horizon();
    const int end = std::min(tau_ + settings_.short_horizon, T);
    const int h = end - tau_;

    TrackingCostSpec spec;
    spec.R = plan_->goal.R;
    spec.obstacles = plan_->goal.obstacles;
    spec.refs.reserve(static_cast<std::size_t>(h + 1));
    spec.u_refs.reserve(static_cast<std::size_t>(h));
    spec.refs.push_back({x, Matrix::Zero(plan_->nx(), plan_->nx())});

    switch (kind_) {
      case ControllerKind::kMpcMean: {
        const Matrix& W = plan_->goal.mean_tracking_weight();
        for (int t = tau_ + 1; t <= end; ++t) spec.refs.push_back({plan_->state(t), W});
        for (int t = tau_; t < end; ++t) spec.u_refs.push_back(plan_->control(t));
        break;
      }
      case ControllerKind::kMpcMarg: {
        for (int t = tau_ + 1; t <= end; ++t)
          spec.refs.push_back({plan_->state(t), marginal_precision_[static_cast<std::size_t>(t)]});
        for (int t = tau_; t < end; ++t) spec.u_refs.push_back(plan_->control(t));
        break;
      }
      case ControllerKind::kMpcCond: {
        const auto cond = conditional_window(x, end);
        const int nx = plan_->nx();
        const int nu = plan_->nu();
        for (int s = 0; s < h; ++s) {
          spec.refs.push_back({cond.mean.segment(nx * s, nx),
                               precision_from_covariance(cond.cov.block(nx * s, nx * s, nx, nx), settings_.precision_floor)});
        }
        for (int s = 0; s < h; ++s) spec.u_refs.push_back(cond.mean.segment(nx * h + nu * s, nu));
        break;
      }
      case ControllerKind::kIlqrFeed: break;
    }
    if (end == T && settings_.terminal_goal) spec.terminal = plan_->goal;
    return spec;
  }

  Vector control_mpc(const Vector& x) {
    if (kind_ == ControllerKind::kIlqrFeed) fail(ErrorKind::kContract, "ilqr_feed is not an MPC controller");
    if (tau_ >= plan_->horizon()) fail(ErrorKind::kContract, "MPC control requested at tau ", tau_, " >= T");
    TrackingCostSpec spec = reference_cost(x);
    const int h = spec.horizon();

    last_reference_ = spec.refs[1].x_ref;
    last_q_range_ = {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (int s = 1; s <= h; ++s) {
      if (s == h && spec.terminal) break;
      Eigen::SelfAdjointEigenSolver<Matrix> es(spec.refs[static_cast<std::size_t>(s)].Q, Eigen::EigenvaluesOnly);
      last_q_range_[0] = std::min(last_q_range_[0], es.eigenvalues().minCoeff());
      last_q_range_[1] = std::max(last_q_range_[1], es.eigenvalues().maxCoeff());
    }

    std::vector<Vector> init;
    if (settings_.warm_start && warm_tau_ == tau_ - 1 && !warm_.empty()) {
      init.assign(warm_.begin() + 1, warm_.end());
      while (static_cast<int>(init.size()) < h) init.push_back(spec.u_refs[init.size()]);
      init.resize(static_cast<std::size_t>(h));
    } else {
      init = spec.u_refs;
    }

    const TrackingCost cost(plan_->model, std::move(spec));
    ILQRSolution sol;
    try {
      sol = ilqr_solve(*plan_->model, cost, x, std::move(init), settings_.inner);
    } catch (const Error& e) {
      throw Error(e.kind(), detail::concat(to_string(kind_), " at tau ", tau_, ": ", e.message()));
    }
    last_inner_iterations_ = sol.iterations;
    warm_ = sol.trajectory.controls;
    warm_tau_ = tau_;
    return warm_.front();
  }

 private:
  /// Joint of (x_tau, x_{tau+1..end}, u_{tau..end-1}) conditioned on x_tau.
  GaussianDist conditional_window(const Vector& x, int end) const {
    const auto& dist = plan_->distribution;
    const int nx = plan_->nx();
    const int nu = plan_->nu();
    const int h = end - tau_;
    const int ns = nx * (h + 1);
    const int nc = nu * h;
    GaussianDist joint;
    joint.mean.resize(ns + nc);
    joint.mean.head(ns) = dist.mean_x.segment(nx * tau_, ns);
    joint.mean.tail(nc) = dist.mean_u.segment(nu * tau_, nc);
    joint.cov.resize(ns + nc, ns + nc);
    joint.cov.topLeftCorner(ns, ns) = dist.cov_x.block(nx * tau_, nx * tau_, ns, ns);
    joint.cov.bottomRightCorner(nc, nc) = dist.cov_u.block(nu * tau_, nu * tau_, nc, nc);
    joint.cov.bottomLeftCorner(nc, ns) = plan_->cross_cov_ux.block(nu * tau_, nx * tau_, nc, ns);
    joint.cov.topRightCorner(ns, nc) = joint.cov.bottomLeftCorner(nc, ns).transpose();
    return condition_leading(joint, x);
  }

  std::shared_ptr<const Plan> plan_;
  ControllerKind kind_;
  TrackerSettings settings_;
  int tau_ = 0;
  std::vector<Matrix> marginal_precision_;
  std::vector<Vector> warm_;
  int warm_tau_ = -2;
  Vector last_reference_;
  std::array<double, 2> last_q_range_{0.0, 0.0};
  int last_inner_iterations_ = 0;
  std::vector<TelemetryRecord> telemetry_;
};

struct ClosedLoopResult {
  Trajectory trajectory;  // truncated at the divergence point when diverged
  bool diverged = false;
  std::string failure;
  double cost = std::numeric_limits<double>::infinity();
  int plant_steps = 0;
  std::vector<TelemetryRecord> telemetry;
};

/// Simulate `plant` for T ticks under the controller. disturbance[t] (full
/// state size, zero outside velocity entries) is added after plant step t.
inline ClosedLoopResult run_closed_loop(std::shared_ptr<const Plan> plan, ControllerKind kind,
                                        const SystemModel& plant, const std::vector<Vector>& disturbance,
                                        const TrackerSettings& settings = {}) {
  const int T = plan->horizon();
  require_dims(disturbance.empty() || static_cast<int>(disturbance.size()) == T,
               "disturbance sequence must be empty or have one entry per step");
  Tracker tracker(plan, kind, settings);
  ClosedLoopResult out;
  Vector x = plan->x0;
  out.trajectory.states.push_back(x);
  for (int t = 0; t < T; ++t) {
    Vector u;
    try {
      u = tracker.control(x);
      x = plant.step(x, u);
    } catch (const Error& e) {
      out.diverged = true;
      out.failure = e.what();
      break;
    }
    ++out.plant_steps;
    if (!disturbance.empty()) x += disturbance[static_cast<std::size_t>(t)];
    out.trajectory.controls.push_back(u);
    out.trajectory.states.push_back(x);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > settings.divergence_threshold) {
      out.diverged = true;
      out.failure = detail::concat("state left the divergence bound at step ", t + 1);
      break;
    }
  }
  out.telemetry = tracker.telemetry();
  if (!out.diverged) out.cost = eval_goal_cost(plan->model, plan->goal, out.trajectory);
  return out;
}

}  // namespace trajdist
