#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "trajdist/core.hpp"
#include "trajdist/systems.hpp"

namespace trajdist {
namespace {

// Central differences with h = 1e-6 on step().
Jacobians finite_difference(const SystemModel& m, const Vector& x, const Vector& u, double h = 1e-6) {
  Jacobians J{Matrix(m.nx(), m.nx()), Matrix(m.nx(), m.nu())};
  for (int i = 0; i < m.nx(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    J.A.col(i) = (m.step(xp, u) - m.step(xm, u)) / (2 * h);
  }
  for (int i = 0; i < m.nu(); ++i) {
    Vector up = u, um = u;
    up(i) += h;
    um(i) -= h;
    J.B.col(i) = (m.step(x, up) - m.step(x, um)) / (2 * h);
  }
  return J;
}

TEST(Systems, DoubleIntegratorEquilibriumAndEulerStep) {
  const auto m = make_model("point_mass", 0.1, {{"dim", 1}});
  EXPECT_EQ(m->step(Vector::Zero(2), Vector::Zero(1)), Vector::Zero(2));
  const Vector next = m->step(Eigen::Vector2d(0, 1), Vector::Zero(1));
  EXPECT_NEAR(next(0), 0.1, 1e-15);
  EXPECT_NEAR(next(1), 1.0, 1e-15);
}

TEST(Systems, QuadcopterHoverBalance) {
  const auto m = make_model("quadcopter", 0.05);
  const double mass = m->parameter("mass");
  const double g = m->parameter("gravity");
  Vector x = Vector::Zero(12);
  x.head(3) << 1.0, -2.0, 3.0;
  const Vector u = Vector::Constant(4, mass * g / 4.0);
  for (int t = 0; t < 100; ++t) x = m->step(x, u);
  EXPECT_LT(x.tail(6).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT((x.head(3) - Eigen::Vector3d(1.0, -2.0, 3.0)).norm(), 1e-9);
}

TEST(Systems, QuadcopterThrustAndTorqueDirections) {
  const auto m = make_model("quadcopter", 0.05);
  const double hover = m->parameter("mass") * m->parameter("gravity") / 4.0;
  const Vector x = Vector::Zero(12);
  // Extra collective thrust accelerates straight up by dT/m.
  const Vector up = m->step(x, Vector::Constant(4, hover + 0.25));
  EXPECT_NEAR(up(8), 0.05 * 1.0 / m->parameter("mass"), 1e-12);
  EXPECT_NEAR(up(6), 0.0, 1e-15);
  // Rotor 2 (+y) above rotor 4 (-y) rolls positively.
  Vector u = Vector::Constant(4, hover);
  u(1) += 0.1;
  u(3) -= 0.1;
  const Vector roll = m->step(x, u);
  EXPECT_GT(roll(9), 0.0);
  EXPECT_NEAR(roll(10), 0.0, 1e-15);
}

TEST(Systems, LinearPlantLinearizationIsExact) {
  const Matrix A = (Matrix(2, 2) << 1, 0.5, -0.2, 0.9).finished();
  const Matrix B = (Matrix(2, 1) << 0, 1).finished();
  LinearModel m(A, B);
  const auto J = m.linearize(Vector::Random(2), Vector::Random(1));
  EXPECT_EQ(J.A, A);
  EXPECT_EQ(J.B, B);
}

TEST(Systems, PendulumUprightCoupling) {
  const auto m = make_model("pendulum", 0.05);
  const auto J = m->linearize(Vector::Zero(2), Vector::Zero(1));
  const double g = m->parameter("gravity");
  const double l = m->parameter("length");
  EXPECT_NEAR(J.A(1, 0), 0.05 * g / l, 1e-12);
  EXPECT_NEAR(J.A(0, 1), 0.05, 1e-15);
  EXPECT_NEAR(J.B(1, 0), 0.05 / (m->parameter("mass") * l * l), 1e-15);
}

TEST(Systems, JacobiansMatchFiniteDifferencesForEveryModel) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.6);
  for (const auto& name : model_names()) {
    const auto m = make_model(name, 0.05);
    for (int trial = 0; trial < 100; ++trial) {
      Vector x(m->nx()), u(m->nu());
      for (int i = 0; i < x.size(); ++i) x(i) = n(rng);
      for (int i = 0; i < u.size(); ++i) u(i) = m->rest_control()(i) + n(rng);
      const auto J = m->linearize(x, u);
      const auto F = finite_difference(*m, x, u);
      EXPECT_LT((J.A - F.A).cwiseAbs().maxCoeff(), 1e-5) << name;
      EXPECT_LT((J.B - F.B).cwiseAbs().maxCoeff(), 1e-5) << name;
    }
  }
}

TEST(Systems, RolloutFromEquilibriumIsConstant) {
  for (const char* name : {"point_mass", "manipulator", "bicopter", "quadcopter"}) {
    const auto m = make_model(name, 0.05);
    const Vector x0 = Vector::Zero(m->nx());
    const auto traj = rollout(*m, x0, std::vector<Vector>(20, m->rest_control()));
    for (const auto& x : traj.states) EXPECT_LT(x.cwiseAbs().maxCoeff(), 1e-12) << name;
  }
}

TEST(Systems, LinearRolloutMatchesBatchPrediction) {
  const auto m = make_model("manipulator", 0.05, {{"links", 3}});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<Vector> controls;
  Vector stacked(3 * 25);
  for (int t = 0; t < 25; ++t) {
    Vector u(3);
    for (int i = 0; i < 3; ++i) u(i) = n(rng);
    controls.push_back(u);
    stacked.segment(3 * t, 3) = u;
  }
  const Vector x0 = Vector::LinSpaced(6, -0.5, 0.5);
  const auto traj = rollout(*m, x0, controls);
  const auto J = m->linearize(x0, controls[0]);
  const std::vector<Matrix> A(25, J.A), B(25, J.B);
  const Vector predicted = build_batch_matrices(A, B).predict(x0, stacked);
  EXPECT_LT((predicted - traj.stacked_states()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Systems, UnicycleStraightLine) {
  const auto m = make_model("unicycle", 0.05);
  const double v = 1.3;
  const int T = 40;
  const auto traj = rollout(*m, Vector::Zero(3), std::vector<Vector>(T, Eigen::Vector2d(v, 0.0)));
  EXPECT_NEAR(traj.states.back()(0), v * T * 0.05, 1e-12);
  EXPECT_NEAR(traj.states.back()(1), 0.0, 1e-15);
}

TEST(Systems, ManipulatorForwardKinematics) {
  const auto m = make_model("manipulator", 0.05, {{"links", 2}, {"link_length", 0.5}});
  Vector x = Vector::Zero(4);
  x(0) = std::numbers::pi / 2;
  x(1) = -std::numbers::pi / 2;
  // First link straight up, second link back to horizontal.
  const Vector p = m->workspace_point(x);
  EXPECT_NEAR(p(0), 0.5, 1e-12);
  EXPECT_NEAR(p(1), 0.5, 1e-12);
}

TEST(Systems, WorkspaceJacobiansMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.8);
  for (const auto& name : model_names()) {
    const auto m = make_model(name, 0.05);
    Vector x(m->nx());
    for (int i = 0; i < x.size(); ++i) x(i) = n(rng);
    const Matrix J = m->workspace_jacobian(x);
    ASSERT_EQ(J.rows(), m->workspace_dim());
    for (int i = 0; i < m->nx(); ++i) {
      Vector xp = x, xm = x;
      xp(i) += 1e-6;
      xm(i) -= 1e-6;
      const Vector col = (m->workspace_point(xp) - m->workspace_point(xm)) / 2e-6;
      EXPECT_LT((col - J.col(i)).cwiseAbs().maxCoeff(), 1e-6) << name << " column " << i;
    }
  }
}

TEST(Systems, ErrorsAreStructured) {
  const auto m = make_model("pendulum", 0.05);
  try {
    m->step(Vector::Zero(3), Vector::Zero(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
  try {
    m->step(Vector::Constant(2, std::nan("")), Vector::Zero(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
  EXPECT_THROW(make_model("blimp", 0.05), Error);
  EXPECT_THROW(make_model("pendulum", 0.05, {{"stiffness", 1.0}}), Error);
  EXPECT_THROW(make_model("pendulum", 0.05, {{"mass", -1.0}}), Error);
}

TEST(Systems, RolloutErrorCarriesStepIndex) {
  const auto m = make_model("point_mass", 0.05);
  std::vector<Vector> controls(5, Vector::Zero(2));
  controls[3](0) = std::numeric_limits<double>::infinity();
  try {
    rollout(*m, Vector::Zero(4), controls);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace trajdist
