#pragma once

// Discrete-time plant models x_{t+1} = f(x_t, u_t), explicit Euler.
//
// Nonlinear plants write their dynamics once as a template over the scalar
// type; Jacobians come from forward-mode automatic differentiation of that
// same template, so step() and linearize() can never disagree.

#include <unsupported/Eigen/AutoDiff>

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trajdist/core.hpp"

namespace trajdist {

using Parameters = std::map<std::string, double>;

struct Jacobians {
  Matrix A;
  Matrix B;
};

class SystemModel {
 public:
  SystemModel(std::string name, int nx, int nu, double dt, Parameters params)
      : name_(std::move(name)), nx_(nx), nu_(nu), dt_(dt), params_(std::move(params)) {
    if (nx_ < 1 || nu_ < 1) fail(ErrorKind::kContract, name_, ": state and control dimensions must be positive");
    if (!(dt_ > 0.0) || !std::isfinite(dt_)) fail(ErrorKind::kContract, name_, ": dt must be positive");
  }
  virtual ~SystemModel() = default;

  const std::string& name() const { return name_; }
  int nx() const { return nx_; }
  int nu() const { return nu_; }
  double dt() const { return dt_; }
  const Parameters& parameters() const { return params_; }

  double parameter(const std::string& key) const {
    auto it = params_.find(key);
    if (it == params_.end()) fail(ErrorKind::kConfig, name_, ": missing parameter '", key, "'");
    return it->second;
  }

  Vector step(const Vector& x, const Vector& u) const {
    check_inputs(x, u);
    return do_step(x, u);
  }

  Jacobians linearize(const Vector& x, const Vector& u) const {
    check_inputs(x, u);
    return do_linearize(x, u);
  }

  /// Point used by obstacle and task-space costs (end effector, body center).
  virtual int workspace_dim() const = 0;
  virtual Vector workspace_point(const Vector& x) const = 0;
  virtual Matrix workspace_jacobian(const Vector& x) const = 0;

  /// State indices that receive external velocity disturbances.
  virtual std::vector<int> velocity_indices() const = 0;

  /// Control that holds the plant at rest (gravity compensation); zero if none.
  virtual Vector rest_control() const { return Vector::Zero(nu_); }

 protected:
  virtual Vector do_step(const Vector& x, const Vector& u) const = 0;
  virtual Jacobians do_linearize(const Vector& x, const Vector& u) const = 0;

  void require_positive(std::initializer_list<const char*> keys) const {
    for (const char* key : keys) {
      const double v = parameter(key);
      if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::kConfig, name_, ": parameter '", key, "' must be positive");
    }
  }

 private:
  void check_inputs(const Vector& x, const Vector& u) const {
    require_dims(x.size() == nx_, detail::concat(name_, ": state has size ", x.size(), ", expected ", nx_));
    require_dims(u.size() == nu_, detail::concat(name_, ": control has size ", u.size(), ", expected ", nu_));
    if (!x.allFinite()) fail(ErrorKind::kNumeric, name_, ": non-finite state");
    if (!u.allFinite()) fail(ErrorKind::kNumeric, name_, ": non-finite control");
  }

  std::string name_;
  int nx_;
  int nu_;
  double dt_;
  Parameters params_;
};

/// x_{t+1} = A x_t + B u_t with constant matrices.
class LinearModel : public SystemModel {
 public:
  LinearModel(Matrix A, Matrix B, double dt = 1.0, std::vector<int> velocity_idx = {})
      : SystemModel("linear", static_cast<int>(A.rows()), static_cast<int>(B.cols()), dt, {}),
        A_(std::move(A)),
        B_(std::move(B)),
        velocity_idx_(std::move(velocity_idx)) {
    require_dims(A_.rows() == A_.cols(), "linear model: A must be square");
    require_dims(B_.rows() == A_.rows(), "linear model: B rows must match A");
  }

  int workspace_dim() const override { return nx(); }
  Vector workspace_point(const Vector& x) const override { return x; }
  Matrix workspace_jacobian(const Vector&) const override { return Matrix::Identity(nx(), nx()); }
  std::vector<int> velocity_indices() const override { return velocity_idx_; }

 protected:
  Vector do_step(const Vector& x, const Vector& u) const override { return A_ * x + B_ * u; }
  Jacobians do_linearize(const Vector&, const Vector&) const override { return {A_, B_}; }

 private:
  Matrix A_;
  Matrix B_;
  std::vector<int> velocity_idx_;
};

/// Point mass in `dim` dimensions: state (position, velocity), control force.
class PointMass : public SystemModel {
 public:
  explicit PointMass(double dt, Parameters params = {{"dim", 2.0}, {"mass", 1.0}})
      : SystemModel("point_mass", 2 * dim_of(params), dim_of(params), dt, params) {
    require_positive({"mass"});
    const int d = nu();
    const double m = parameter("mass");
    A_ = Matrix::Identity(2 * d, 2 * d);
    A_.topRightCorner(d, d) = dt * Matrix::Identity(d, d);
    B_ = Matrix::Zero(2 * d, d);
    B_.bottomRows(d) = (dt / m) * Matrix::Identity(d, d);
  }

  int workspace_dim() const override { return nu(); }
  Vector workspace_point(const Vector& x) const override { return x.head(nu()); }
  Matrix workspace_jacobian(const Vector&) const override {
    Matrix J = Matrix::Zero(nu(), nx());
    J.leftCols(nu()).setIdentity();
    return J;
  }
  std::vector<int> velocity_indices() const override {
    std::vector<int> idx;
    for (int i = nu(); i < nx(); ++i) idx.push_back(i);
    return idx;
  }

 protected:
  Vector do_step(const Vector& x, const Vector& u) const override { return A_ * x + B_ * u; }
  Jacobians do_linearize(const Vector&, const Vector&) const override { return {A_, B_}; }

 private:
  static int dim_of(const Parameters& p) {
    auto it = p.find("dim");
    const int d = it == p.end() ? 2 : static_cast<int>(it->second);
    if (d < 1 || d > 3) fail(ErrorKind::kConfig, "point_mass: dim must be 1, 2 or 3");
    return d;
  }

  Matrix A_;
  Matrix B_;
};

/// Planar serial arm with `links` revolute joints under kinematic
/// (joint-acceleration) control: a linear double integrator per joint. The
/// workspace point is the end effector given by forward kinematics.
class PlanarManipulator : public SystemModel {
 public:
  explicit PlanarManipulator(double dt, Parameters params = {{"links", 7.0}, {"link_length", 0.15}})
      : SystemModel("manipulator", 2 * links_of(params), links_of(params), dt, params) {
    require_positive({"link_length"});
    const int n = nu();
    lengths_.assign(static_cast<std::size_t>(n), parameter("link_length"));
    A_ = Matrix::Identity(2 * n, 2 * n);
    A_.topRightCorner(n, n) = dt * Matrix::Identity(n, n);
    B_ = Matrix::Zero(2 * n, n);
    B_.bottomRows(n) = dt * Matrix::Identity(n, n);
  }

  int workspace_dim() const override { return 2; }

  Vector workspace_point(const Vector& x) const override {
    Vector p = Vector::Zero(2);
    double angle = 0.0;
    for (int i = 0; i < nu(); ++i) {
      angle += x(i);
      p(0) += lengths_[static_cast<std::size_t>(i)] * std::cos(angle);
      p(1) += lengths_[static_cast<std::size_t>(i)] * std::sin(angle);
    }
    return p;
  }

  Matrix workspace_jacobian(const Vector& x) const override {
    const int n = nu();
    Matrix J = Matrix::Zero(2, nx());
    // d p / d q_j sums the contributions of links j..n-1.
    std::vector<double> cum(static_cast<std::size_t>(n));
    double angle = 0.0;
    for (int i = 0; i < n; ++i) {
      angle += x(i);
      cum[static_cast<std::size_t>(i)] = angle;
    }
    double sx = 0.0;
    double sy = 0.0;
    for (int j = n - 1; j >= 0; --j) {
      const double l = lengths_[static_cast<std::size_t>(j)];
      sx += -l * std::sin(cum[static_cast<std::size_t>(j)]);
      sy += l * std::cos(cum[static_cast<std::size_t>(j)]);
      J(0, j) = sx;
      J(1, j) = sy;
    }
    return J;
  }

  std::vector<int> velocity_indices() const override {
    std::vector<int> idx;
    for (int i = nu(); i < nx(); ++i) idx.push_back(i);
    return idx;
  }

 protected:
  Vector do_step(const Vector& x, const Vector& u) const override { return A_ * x + B_ * u; }
  Jacobians do_linearize(const Vector&, const Vector&) const override { return {A_, B_}; }

 private:
  static int links_of(const Parameters& p) {
    auto it = p.find("links");
    const int n = it == p.end() ? 7 : static_cast<int>(it->second);
    if (n < 1) fail(ErrorKind::kConfig, "manipulator: links must be >= 1");
    return n;
  }

  std::vector<double> lengths_;
  Matrix A_;
  Matrix B_;
};

/// CRTP base for nonlinear plants. Derived provides
///   template <typename S> Eigen::Matrix<S, NX, 1> dynamics(x, u) const;
/// returning x_{t+1}.
template <typename Derived, int NX, int NU>
class AutoDiffModel : public SystemModel {
 public:
  using SystemModel::SystemModel;

 protected:
  using Gradient = Eigen::Matrix<double, NX + NU, 1>;
  using Dual = Eigen::AutoDiffScalar<Gradient>;

  Vector do_step(const Vector& x, const Vector& u) const override {
    const Eigen::Matrix<double, NX, 1> xs = x;
    const Eigen::Matrix<double, NU, 1> us = u;
    return derived().template dynamics<double>(xs, us);
  }

  Jacobians do_linearize(const Vector& x, const Vector& u) const override {
    Eigen::Matrix<Dual, NX, 1> xd;
    Eigen::Matrix<Dual, NU, 1> ud;
    for (int i = 0; i < NX; ++i) xd(i) = Dual(x(i), NX + NU, i);
    for (int i = 0; i < NU; ++i) ud(i) = Dual(u(i), NX + NU, NX + i);
    const Eigen::Matrix<Dual, NX, 1> y = derived().template dynamics<Dual>(xd, ud);
    Jacobians J{Matrix(NX, NX), Matrix(NX, NU)};
    for (int i = 0; i < NX; ++i) {
      const Gradient& g = y(i).derivatives();
      J.A.row(i) = g.template head<NX>().transpose();
      J.B.row(i) = g.template tail<NU>().transpose();
    }
    return J;
  }

 private:
  const Derived& derived() const { return static_cast<const Derived&>(*this); }
};

/// Inverted pendulum; theta = 0 is upright, theta = pi hangs down.
/// State (theta, omega), control joint torque.
class Pendulum : public AutoDiffModel<Pendulum, 2, 1> {
 public:
  explicit Pendulum(double dt, Parameters params = {{"mass", 1.0}, {"length", 1.0}, {"gravity", 9.81}})
      : AutoDiffModel(std::string("pendulum"), 2, 1, dt, std::move(params)) {
    require_positive({"mass", "length", "gravity"});
    m_ = parameter("mass");
    l_ = parameter("length");
    g_ = parameter("gravity");
  }

  template <typename S>
  Eigen::Matrix<S, 2, 1> dynamics(const Eigen::Matrix<S, 2, 1>& x, const Eigen::Matrix<S, 1, 1>& u) const {
    using std::sin;
    const double h = dt();
    Eigen::Matrix<S, 2, 1> next;
    next(0) = x(0) + h * x(1);
    next(1) = x(1) + h * ((g_ / l_) * sin(x(0)) + u(0) / (m_ * l_ * l_));
    return next;
  }

  int workspace_dim() const override { return 2; }
  Vector workspace_point(const Vector& x) const override {
    return (Vector(2) << l_ * std::sin(x(0)), l_ * std::cos(x(0))).finished();
  }
  Matrix workspace_jacobian(const Vector& x) const override {
    Matrix J = Matrix::Zero(2, 2);
    J(0, 0) = l_ * std::cos(x(0));
    J(1, 0) = -l_ * std::sin(x(0));
    return J;
  }
  std::vector<int> velocity_indices() const override { return {1}; }

 private:
  double m_ = 1.0;
  double l_ = 1.0;
  double g_ = 9.81;
};

/// Kinematic unicycle: state (x, y, heading), control (forward speed, turn rate).
class Unicycle : public AutoDiffModel<Unicycle, 3, 2> {
 public:
  explicit Unicycle(double dt, Parameters params = {})
      : AutoDiffModel(std::string("unicycle"), 3, 2, dt, std::move(params)) {}

  template <typename S>
  Eigen::Matrix<S, 3, 1> dynamics(const Eigen::Matrix<S, 3, 1>& x, const Eigen::Matrix<S, 2, 1>& u) const {
    using std::cos;
    using std::sin;
    const double h = dt();
    Eigen::Matrix<S, 3, 1> next;
    next(0) = x(0) + h * u(0) * cos(x(2));
    next(1) = x(1) + h * u(0) * sin(x(2));
    next(2) = x(2) + h * u(1);
    return next;
  }

  int workspace_dim() const override { return 2; }
  Vector workspace_point(const Vector& x) const override { return x.head(2); }
  Matrix workspace_jacobian(const Vector&) const override {
    Matrix J = Matrix::Zero(2, 3);
    J(0, 0) = 1.0;
    J(1, 1) = 1.0;
    return J;
  }
  std::vector<int> velocity_indices() const override { return {}; }
};

/// Planar quadrotor ("bicopter"): state (px, pz, theta, vx, vz, omega),
/// control (left thrust, right thrust).
class Bicopter : public AutoDiffModel<Bicopter, 6, 2> {
 public:
  explicit Bicopter(double dt,
                    Parameters params = {{"mass", 1.0}, {"arm_length", 0.25}, {"inertia", 0.05}, {"gravity", 9.81}})
      : AutoDiffModel(std::string("bicopter"), 6, 2, dt, std::move(params)) {
    require_positive({"mass", "arm_length", "inertia", "gravity"});
    m_ = parameter("mass");
    l_ = parameter("arm_length");
    I_ = parameter("inertia");
    g_ = parameter("gravity");
  }

  template <typename S>
  Eigen::Matrix<S, 6, 1> dynamics(const Eigen::Matrix<S, 6, 1>& x, const Eigen::Matrix<S, 2, 1>& u) const {
    using std::cos;
    using std::sin;
    const double h = dt();
    const S thrust = u(0) + u(1);
    Eigen::Matrix<S, 6, 1> next;
    next(0) = x(0) + h * x(3);
    next(1) = x(1) + h * x(4);
    next(2) = x(2) + h * x(5);
    next(3) = x(3) + h * (-thrust * sin(x(2)) / m_);
    next(4) = x(4) + h * (thrust * cos(x(2)) / m_ - g_);
    next(5) = x(5) + h * (l_ * (u(1) - u(0)) / I_);
    return next;
  }

  int workspace_dim() const override { return 2; }
  Vector workspace_point(const Vector& x) const override { return x.head(2); }
  Matrix workspace_jacobian(const Vector&) const override {
    Matrix J = Matrix::Zero(2, 6);
    J(0, 0) = 1.0;
    J(1, 1) = 1.0;
    return J;
  }
  std::vector<int> velocity_indices() const override { return {3, 4, 5}; }
  Vector rest_control() const override { return Vector::Constant(2, 0.5 * m_ * g_); }

 private:
  double m_ = 1.0;
  double l_ = 0.25;
  double I_ = 0.05;
  double g_ = 9.81;
};

/// Quadcopter, 12 states: position (3), roll/pitch/yaw (3), world-frame
/// linear velocity (3), body-frame angular velocity (3). Controls are the
/// four rotor thrusts in a plus configuration: rotor 1 on +x, 2 on +y,
/// 3 on -x, 4 on -y; rotors 1 and 3 spin opposite to 2 and 4.
class Quadcopter : public AutoDiffModel<Quadcopter, 12, 4> {
 public:
  explicit Quadcopter(double dt, Parameters params = default_parameters())
      : AutoDiffModel(std::string("quadcopter"), 12, 4, dt, std::move(params)) {
    require_positive({"mass", "arm_length", "inertia_xx", "inertia_yy", "inertia_zz", "yaw_coefficient", "gravity"});
    m_ = parameter("mass");
    l_ = parameter("arm_length");
    inertia_ = Eigen::Vector3d(parameter("inertia_xx"), parameter("inertia_yy"), parameter("inertia_zz"));
    k_ = parameter("yaw_coefficient");
    g_ = parameter("gravity");
  }

  static Parameters default_parameters() {
    return {{"mass", 1.0},       {"arm_length", 0.2},       {"inertia_xx", 0.01}, {"inertia_yy", 0.01},
            {"inertia_zz", 0.02}, {"yaw_coefficient", 0.01}, {"gravity", 9.81}};
  }

  template <typename S>
  Eigen::Matrix<S, 12, 1> dynamics(const Eigen::Matrix<S, 12, 1>& x, const Eigen::Matrix<S, 4, 1>& u) const {
    using std::cos;
    using std::sin;
    using std::tan;
    const double h = dt();
    const S& phi = x(3);
    const S& theta = x(4);
    const S& psi = x(5);
    const S cphi = cos(phi), sphi = sin(phi);
    const S cth = cos(theta), sth = sin(theta);
    const S cpsi = cos(psi), spsi = sin(psi);
    const S p = x(9), q = x(10), r = x(11);

    // Body z axis in world frame (third column of R = Rz Ry Rx).
    const S thrust = u(0) + u(1) + u(2) + u(3);
    const S ax = thrust / m_ * (cpsi * sth * cphi + spsi * sphi);
    const S ay = thrust / m_ * (spsi * sth * cphi - cpsi * sphi);
    const S az = thrust / m_ * (cth * cphi) - g_;

    const S tau_x = l_ * (u(1) - u(3));
    const S tau_y = l_ * (u(2) - u(0));
    const S tau_z = k_ * (u(0) - u(1) + u(2) - u(3));
    const double Ix = inertia_(0), Iy = inertia_(1), Iz = inertia_(2);

    Eigen::Matrix<S, 12, 1> next;
    next(0) = x(0) + h * x(6);
    next(1) = x(1) + h * x(7);
    next(2) = x(2) + h * x(8);
    next(3) = phi + h * (p + sphi * tan(theta) * q + cphi * tan(theta) * r);
    next(4) = theta + h * (cphi * q - sphi * r);
    next(5) = psi + h * ((sphi * q + cphi * r) / cth);
    next(6) = x(6) + h * ax;
    next(7) = x(7) + h * ay;
    next(8) = x(8) + h * az;
    next(9) = p + h * ((tau_x - (Iz - Iy) * q * r) / Ix);
    next(10) = q + h * ((tau_y - (Ix - Iz) * r * p) / Iy);
    next(11) = r + h * ((tau_z - (Iy - Ix) * p * q) / Iz);
    return next;
  }

  int workspace_dim() const override { return 3; }
  Vector workspace_point(const Vector& x) const override { return x.head(3); }
  Matrix workspace_jacobian(const Vector&) const override {
    Matrix J = Matrix::Zero(3, 12);
    J.leftCols(3).setIdentity();
    return J;
  }
  std::vector<int> velocity_indices() const override { return {6, 7, 8, 9, 10, 11}; }
  Vector rest_control() const override { return Vector::Constant(4, 0.25 * m_ * g_); }

 private:
  double m_ = 1.0;
  double l_ = 0.2;
  Eigen::Vector3d inertia_ = Eigen::Vector3d(0.01, 0.01, 0.02);
  double k_ = 0.01;
  double g_ = 9.81;
};

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"point_mass", "pendulum",   "unicycle",
                                                 "bicopter",   "quadcopter", "manipulator"};
  return names;
}

inline Parameters default_parameters(const std::string& name) {
  if (name == "point_mass") return {{"dim", 2.0}, {"mass", 1.0}};
  if (name == "pendulum") return {{"mass", 1.0}, {"length", 1.0}, {"gravity", 9.81}};
  if (name == "unicycle") return {};
  if (name == "bicopter") return {{"mass", 1.0}, {"arm_length", 0.25}, {"inertia", 0.05}, {"gravity", 9.81}};
  if (name == "quadcopter") return Quadcopter::default_parameters();
  if (name == "manipulator") return {{"links", 7.0}, {"link_length", 0.15}};
  fail(ErrorKind::kConfig, "unknown system '", name, "'");
}

/// Catalog factory; `overrides` replace entries of the documented defaults.
inline std::shared_ptr<const SystemModel> make_model(const std::string& name, double dt,
                                                     const Parameters& overrides = {}) {
  Parameters p = default_parameters(name);
  for (const auto& [key, value] : overrides) {
    if (!p.contains(key)) fail(ErrorKind::kConfig, name, ": unknown parameter '", key, "'");
    p[key] = value;
  }
  if (name == "point_mass") return std::make_shared<PointMass>(dt, p);
  if (name == "pendulum") return std::make_shared<Pendulum>(dt, p);
  if (name == "unicycle") return std::make_shared<Unicycle>(dt, p);
  if (name == "bicopter") return std::make_shared<Bicopter>(dt, p);
  if (name == "quadcopter") return std::make_shared<Quadcopter>(dt, p);
  return std::make_shared<PlanarManipulator>(dt, p);
}

inline Trajectory rollout(const SystemModel& model, const Vector& x0, const std::vector<Vector>& controls) {
  require_dims(!controls.empty(), "rollout needs at least one control");
  Trajectory traj;
  traj.states.reserve(controls.size() + 1);
  traj.controls = controls;
  traj.states.push_back(x0);
  for (std::size_t t = 0; t < controls.size(); ++t) {
    try {
      traj.states.push_back(model.step(traj.states.back(), controls[t]));
    } catch (const Error& e) {
      throw Error(e.kind(), detail::concat(e.message(), " (rollout step ", t, ")"));
    }
  }
  return traj;
}

}  // namespace trajdist
