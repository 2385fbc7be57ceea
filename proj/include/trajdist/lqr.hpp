#pragma once

// Finite-horizon time-varying LQR, solved two ways:
//  - batch least squares over the stacked controls, which also yields the
//    Gaussian distribution of the solution (mean = optimum, covariance =
//    inverse Hessian);
//  - backward Riccati recursion, which yields time-varying feedback gains.
//
// Cost convention: 1/2 sum_t (x'Q_t x + u'R_t u) + sum_t (q_t'x + r_t'u).

#include <optional>
#include <vector>

#include "trajdist/core.hpp"

namespace trajdist {

struct LQRProblem {
  std::vector<Matrix> A;  // T entries
  std::vector<Matrix> B;  // T entries
  std::vector<Matrix> Q;  // T+1 entries
  std::vector<Matrix> R;  // T entries
  std::vector<Vector> q;  // empty or T+1 entries
  std::vector<Vector> r;  // empty or T entries
  Vector x0;

  int horizon() const { return static_cast<int>(A.size()); }
  int nx() const { return A.empty() ? 0 : static_cast<int>(A.front().rows()); }
  int nu() const { return B.empty() ? 0 : static_cast<int>(B.front().cols()); }
  bool has_linear_terms() const { return !q.empty() || !r.empty(); }

  void validate() const {
    const auto T = A.size();
    require_dims(T >= 1, "LQR problem needs at least one step");
    require_dims(B.size() == T, "LQR problem: B count must equal T");
    require_dims(Q.size() == T + 1, "LQR problem: Q count must equal T+1");
    require_dims(R.size() == T, "LQR problem: R count must equal T");
    require_dims(q.empty() || q.size() == T + 1, "LQR problem: q count must equal T+1");
    require_dims(r.empty() || r.size() == T, "LQR problem: r count must equal T");
    const auto n = nx();
    const auto m = nu();
    require_dims(x0.size() == n, "LQR problem: x0 has the wrong size");
    for (std::size_t t = 0; t < T; ++t) {
      require_dims(A[t].rows() == n && A[t].cols() == n, detail::concat("A_", t, " has the wrong shape"));
      require_dims(B[t].rows() == n && B[t].cols() == m, detail::concat("B_", t, " has the wrong shape"));
      require_dims(R[t].rows() == m && R[t].cols() == m, detail::concat("R_", t, " has the wrong shape"));
    }
    for (std::size_t t = 0; t <= T; ++t)
      require_dims(Q[t].rows() == n && Q[t].cols() == n, detail::concat("Q_", t, " has the wrong shape"));
    for (const auto& v : q) require_dims(v.size() == n, "q_t has the wrong size");
    for (const auto& v : r) require_dims(v.size() == m, "r_t has the wrong size");
  }
};

struct ControlDistribution {
  Vector mu_u;
  Matrix Sigma_u;
};

struct StateDistribution {
  Vector mean;
  Matrix cov;
};

/// u_t = K_t x_t + k_t.
struct FeedbackPolicy {
  std::vector<Matrix> K;
  std::vector<Vector> k;
};

/// Hessian of the reduced cost u -> C(Sx x0 + Su u, u): Su' Qs Su + Rs.
inline Matrix batch_hessian(const LQRProblem& prob, const BatchMatrices& batch) {
  const int T = prob.horizon();
  const int nx = prob.nx();
  const int nu = prob.nu();
  // Qs Su, exploiting the block-diagonal Qs and the zero upper blocks of Su.
  Matrix QsSu = Matrix::Zero(batch.Su.rows(), batch.Su.cols());
  for (int t = 1; t <= T; ++t) {
    QsSu.block(nx * t, 0, nx, nu * t).noalias() = prob.Q[static_cast<std::size_t>(t)] * batch.Su.block(nx * t, 0, nx, nu * t);
  }
  Matrix H(nu * T, nu * T);
  H.noalias() = batch.Su.transpose() * QsSu;
  for (int t = 0; t < T; ++t) H.block(nu * t, nu * t, nu, nu) += prob.R[static_cast<std::size_t>(t)];
  return symmetrized(H);
}

/// Gradient of the reduced cost at u = 0: Su' Qs Sx x0 + Su' q + r.
inline Vector batch_gradient(const LQRProblem& prob, const BatchMatrices& batch) {
  const int T = prob.horizon();
  const int nx = prob.nx();
  const int nu = prob.nu();
  Vector weighted = Vector::Zero(nx * (T + 1));
  const Vector free_response = batch.Sx * prob.x0;
  for (int t = 0; t <= T; ++t) {
    weighted.segment(nx * t, nx) = prob.Q[static_cast<std::size_t>(t)] * free_response.segment(nx * t, nx);
    if (!prob.q.empty()) weighted.segment(nx * t, nx) += prob.q[static_cast<std::size_t>(t)];
  }
  Vector g = batch.Su.transpose() * weighted;
  if (!prob.r.empty()) {
    for (int t = 0; t < T; ++t) g.segment(nu * t, nu) += prob.r[static_cast<std::size_t>(t)];
  }
  return g;
}

inline BatchMatrices batch_matrices(const LQRProblem& prob) { return build_batch_matrices(prob.A, prob.B); }

/// Batch least-squares solution and its Gaussian:
///   mu_u = -H^{-1} g,  Sigma_u = H^{-1},  H = Su' Qs Su + Rs.
inline ControlDistribution solve_batch(const LQRProblem& prob, const BatchMatrices& batch) {
  const Matrix H = batch_hessian(prob, batch);
  const Vector g = batch_gradient(prob, batch);
  std::optional<SymmetricFactor> factor;
  try {
    factor.emplace(H);
  } catch (const Error& e) {
    fail(ErrorKind::kSolverFailure, "batch LQR Hessian is not positive definite: ", e.message());
  }
  ControlDistribution out;
  out.mu_u = -factor->solve(g);
  out.Sigma_u = factor->inverse();
  return out;
}

inline ControlDistribution solve_batch(const LQRProblem& prob) {
  prob.validate();
  return solve_batch(prob, batch_matrices(prob));
}

/// p(x) = N(Sx x0 + Su mu_u, Su Sigma_u Su').
inline StateDistribution state_distribution(const BatchMatrices& batch, const Vector& x0,
                                            const ControlDistribution& ctrl) {
  require_dims(ctrl.mu_u.size() == batch.Su.cols(), "control distribution does not match the batch matrices");
  require_dims(ctrl.Sigma_u.rows() == batch.Su.cols() && ctrl.Sigma_u.cols() == batch.Su.cols(),
               "control covariance does not match the batch matrices");
  StateDistribution out;
  out.mean = batch.Sx * x0 + batch.Su * ctrl.mu_u;
  const Matrix SuSigma = batch.Su * ctrl.Sigma_u;
  out.cov.noalias() = SuSigma * batch.Su.transpose();
  out.cov = symmetrized(out.cov);
  out.cov.topRows(batch.nx).setZero();
  out.cov.leftCols(batch.nx).setZero();
  return out;
}

inline StateDistribution state_distribution(const LQRProblem& prob, const ControlDistribution& ctrl) {
  prob.validate();
  return state_distribution(batch_matrices(prob), prob.x0, ctrl);
}

/// Backward Riccati pass with `reg` added to every control Hessian block.
/// Returns nullopt when a block is not numerically positive definite.
inline std::optional<FeedbackPolicy> try_solve_riccati(const LQRProblem& prob, double reg = 0.0) {
  const int T = prob.horizon();
  const int nx = prob.nx();
  const int nu = prob.nu();
  FeedbackPolicy policy;
  policy.K.resize(static_cast<std::size_t>(T));
  policy.k.resize(static_cast<std::size_t>(T));

  Matrix V = prob.Q.back();
  Vector v = prob.q.empty() ? Vector::Zero(nx) : prob.q.back();
  Matrix Quu(nu, nu), Qux(nu, nx), Qxx(nx, nx), VA(nx, nx), VB(nx, nu);
  Vector Qu(nu), Qx(nx);
  for (int t = T - 1; t >= 0; --t) {
    const auto i = static_cast<std::size_t>(t);
    const Matrix& A = prob.A[i];
    const Matrix& B = prob.B[i];
    VA.noalias() = V * A;
    VB.noalias() = V * B;
    Quu = prob.R[i];
    Quu.noalias() += B.transpose() * VB;
    Qux.noalias() = B.transpose() * VA;
    Qxx = prob.Q[i];
    Qxx.noalias() += A.transpose() * VA;
    Qu.noalias() = B.transpose() * v;
    Qx.noalias() = A.transpose() * v;
    if (!prob.r.empty()) Qu += prob.r[i];
    if (!prob.q.empty()) Qx += prob.q[i];

    Matrix Quu_reg = symmetrized(Quu);
    Quu_reg.diagonal().array() += reg;
    Eigen::LLT<Matrix> llt(Quu_reg);
    if (!detail::cholesky_ok(llt, Quu_reg.diagonal().cwiseAbs().maxCoeff())) return std::nullopt;

    Matrix& K = policy.K[i];
    Vector& k = policy.k[i];
    K = -llt.solve(Qux);
    k = -llt.solve(Qu);

    // Value function update written to stay exact when reg != 0.
    V = Qxx;
    V.noalias() += K.transpose() * Quu * K;
    V.noalias() += K.transpose() * Qux;
    V.noalias() += Qux.transpose() * K;
    V = symmetrized(V);
    v = Qx;
    v.noalias() += K.transpose() * (Quu * k);
    v.noalias() += K.transpose() * Qu;
    v.noalias() += Qux.transpose() * k;
    if (!V.allFinite() || !v.allFinite()) return std::nullopt;
  }
  return policy;
}

/// Riccati solution; escalates diagonal jitter on the control blocks using
/// the same schedule as SymmetricFactor before giving up.
inline FeedbackPolicy solve_riccati(const LQRProblem& prob, JitterPolicy jitter = {}) {
  prob.validate();
  if (auto p = try_solve_riccati(prob, 0.0)) return *p;
  double scale = 0.0;
  for (const auto& R : prob.R) scale = std::max(scale, R.trace() / static_cast<double>(R.rows()));
  if (!(scale > 0.0)) scale = 1.0;
  for (double eps = jitter.initial; eps <= jitter.maximum * (1.0 + 1e-12); eps *= jitter.growth) {
    if (auto p = try_solve_riccati(prob, eps * scale)) return *p;
  }
  fail(ErrorKind::kSolverFailure, "Riccati recursion: control Hessian block is not positive definite");
}

/// Open-loop controls produced by running the policy on the linear dynamics
/// from x0, stacked time-major.
inline Vector rollout_policy(const LQRProblem& prob, const FeedbackPolicy& policy) {
  const int T = prob.horizon();
  const int nu = prob.nu();
  Vector u(nu * T);
  Vector x = prob.x0;
  for (int t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    const Vector ut = policy.K[i] * x + policy.k[i];
    u.segment(nu * t, nu) = ut;
    x = prob.A[i] * x + prob.B[i] * ut;
  }
  return u;
}

}  // namespace trajdist
