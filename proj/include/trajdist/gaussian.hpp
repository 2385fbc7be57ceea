#pragma once

// Gaussian algebra over trajectory distributions: product (fusion of
// quadratic costs), per-step marginals, conditioning on an observed state,
// and seeded sampling.

#include <random>
#include <vector>

#include "trajdist/core.hpp"

namespace trajdist {

struct GaussianDist {
  Vector mean;
  Matrix cov;

  int dim() const { return static_cast<int>(mean.size()); }

  void validate() const {
    require_dims(cov.rows() == mean.size() && cov.cols() == mean.size(),
                 detail::concat("covariance is ", cov.rows(), "x", cov.cols(), " for a mean of size ", mean.size()));
    if (!mean.allFinite() || !cov.allFinite()) fail(ErrorKind::kNumeric, "Gaussian has non-finite parameters");
    if (relative_asymmetry(cov) > 1e-9) fail(ErrorKind::kContract, "covariance is not symmetric");
  }
};

/// Joint Gaussian over a stacked state trajectory x_0..x_T.
struct TrajDist {
  GaussianDist base;
  int nx = 0;
  int horizon = 0;

  TrajDist() = default;
  TrajDist(GaussianDist g, int state_dim, int steps) : base(std::move(g)), nx(state_dim), horizon(steps) {
    require_dims(nx > 0 && horizon >= 1, "trajectory distribution needs nx > 0 and T >= 1");
    require_dims(base.dim() == nx * (horizon + 1),
                 detail::concat("trajectory distribution has dimension ", base.dim(), ", expected ", nx * (horizon + 1)));
  }
};

/// prod_k N(mu_k, W_k^{-1}) = N(mu_hat, W_hat^{-1}) with W_hat = sum W_k and
/// mu_hat = W_hat^{-1} sum W_k mu_k.
inline GaussianDist product(const std::vector<GaussianDist>& dists) {
  require_dims(!dists.empty(), "product needs at least one Gaussian");
  const int n = dists.front().dim();
  Matrix W = Matrix::Zero(n, n);
  Vector Wmu = Vector::Zero(n);
  for (const auto& g : dists) {
    g.validate();
    require_dims(g.dim() == n, "product: Gaussians differ in dimension");
    const Matrix Wk = SymmetricFactor(g.cov).inverse();
    W += Wk;
    Wmu += Wk * g.mean;
  }
  GaussianDist out;
  try {
    SymmetricFactor fused(symmetrized(W));
    out.mean = fused.solve(Wmu);
    out.cov = fused.inverse();
  } catch (const Error& e) {
    fail(ErrorKind::kSolverFailure, "product: fused precision is singular: ", e.message());
  }
  return out;
}

inline GaussianDist marginal(const TrajDist& dist, int t) {
  if (t < 0 || t > dist.horizon) fail(ErrorKind::kContract, "marginal: step ", t, " outside [0, ", dist.horizon, "]");
  const int nx = dist.nx;
  return {dist.base.mean.segment(nx * t, nx), dist.base.cov.block(nx * t, nx * t, nx, nx)};
}

/// Condition a joint Gaussian on its leading `observed.size()` coordinates.
/// Sigma_11 is inverted with the jittered symmetric solve, which behaves as
/// a pseudo-inverse when Sigma_11 is singular.
inline GaussianDist condition_leading(const GaussianDist& joint, const Vector& observed) {
  const auto k = observed.size();
  const auto n = joint.mean.size();
  require_dims(k > 0 && k < n, "conditioning block must be a proper leading subset");
  if (!observed.allFinite()) fail(ErrorKind::kNumeric, "conditioning value is not finite");
  const Matrix S11 = symmetrized(joint.cov.topLeftCorner(k, k));
  const Matrix S12 = joint.cov.topRightCorner(k, n - k);
  const Matrix gain_t = SymmetricFactor(S11).solve(S12);  // Sigma_11^{-1} Sigma_12
  GaussianDist out;
  out.mean = joint.mean.tail(n - k) + gain_t.transpose() * (observed - joint.mean.head(k));
  out.cov = symmetrized(joint.cov.bottomRightCorner(n - k, n - k) - S12.transpose() * gain_t);
  return out;
}

/// Per-step conditionals p(x_t | x_tau) for t = tau+1 .. min(tau+horizon, T).
inline std::vector<GaussianDist> condition(const TrajDist& dist, int tau, const Vector& x_tau, int horizon) {
  if (tau < 0 || tau >= dist.horizon) fail(ErrorKind::kContract, "condition: tau ", tau, " outside [0, ", dist.horizon, ")");
  if (horizon < 1) fail(ErrorKind::kContract, "condition: horizon must be >= 1");
  require_dims(x_tau.size() == dist.nx, "condition: observed state has the wrong size");
  if (!x_tau.allFinite()) fail(ErrorKind::kNumeric, "condition: observed state is not finite");
  const int nx = dist.nx;
  const int end = std::min(tau + horizon, dist.horizon);
  const int len = nx * (end - tau + 1);
  GaussianDist window{dist.base.mean.segment(nx * tau, len), dist.base.cov.block(nx * tau, nx * tau, len, len)};
  const GaussianDist cond = condition_leading(window, x_tau);
  std::vector<GaussianDist> out;
  out.reserve(static_cast<std::size_t>(end - tau));
  for (int s = 0; s < end - tau; ++s) {
    out.push_back({cond.mean.segment(nx * s, nx), cond.cov.block(nx * s, nx * s, nx, nx)});
  }
  return out;
}

/// Inverse of a covariance whose eigenvalues are first floored at
/// floor_rel * trace / n, bounding the resulting weights.
inline Matrix precision_from_covariance(const Matrix& cov, double floor_rel = 1e-6) {
  require_dims(cov.rows() == cov.cols() && cov.rows() > 0, "precision needs a square covariance");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cov));
  const auto n = static_cast<double>(cov.rows());
  double floor = floor_rel * cov.trace() / n;
  if (!(floor > 0.0)) floor = 1e-12;
  const Vector inv = es.eigenvalues().cwiseMax(floor).cwiseInverse();
  return symmetrized(es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose());
}

/// Symmetric square root L with L L' = cov, tolerant of rank deficiency.
inline Matrix psd_sqrt(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(cov));
  const auto& ev = es.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 0.0);
  if (ev.size() > 0 && ev.minCoeff() < -1e-6 * scale)
    fail(ErrorKind::kContract, "covariance has a negative eigenvalue ", ev.minCoeff());
  return es.eigenvectors() * ev.cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Deterministic draws given the seed (standard-normal stream of
/// std::mt19937_64 mapped through a PSD square root).
inline std::vector<Vector> sample(const GaussianDist& dist, int count, std::uint64_t seed) {
  if (count < 1) fail(ErrorKind::kContract, "sample count must be >= 1");
  dist.validate();
  const Matrix L = psd_sqrt(dist.cov);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(count));
  Vector z(dist.dim());
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < z.size(); ++j) z(j) = normal(rng);
    out.push_back(dist.mean + L * z);
  }
  return out;
}

}  // namespace trajdist
