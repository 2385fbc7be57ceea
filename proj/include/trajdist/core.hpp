#pragma once

// Trajectory containers, batch (lifted) dynamics matrices and the
// symmetric-solve utilities shared by every other module.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace trajdist {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class ErrorKind {
  kDimension,
  kNumeric,
  kContract,
  kSolverFailure,
  kDistributionFailure,
  kIo,
  kConfig,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kSolverFailure: return "solver_failure";
    case ErrorKind::kDistributionFailure: return "distribution_failure";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kConfig: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

namespace detail {

template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void fail(ErrorKind kind, const Args&... args) {
  throw Error(kind, detail::concat(args...));
}

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::kDimension, what);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Max-abs asymmetry relative to the largest entry (1 for the zero matrix).
inline double relative_asymmetry(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() / scale;
}

struct TimeGrid {
  int steps = 1;
  double dt = 0.05;

  TimeGrid() = default;
  TimeGrid(int horizon_steps, double step_seconds) : steps(horizon_steps), dt(step_seconds) {
    validate();
  }

  void validate() const {
    if (steps < 1) fail(ErrorKind::kContract, "time grid needs at least one step, got ", steps);
    if (!(dt > 0.0) || !std::isfinite(dt)) fail(ErrorKind::kContract, "time step must be positive, got ", dt);
  }

  double time(int t) const { return dt * t; }
  double duration() const { return dt * steps; }
};

/// States x_0..x_T and controls u_0..u_{T-1}.
struct Trajectory {
  std::vector<Vector> states;
  std::vector<Vector> controls;

  int horizon() const { return static_cast<int>(controls.size()); }
  int nx() const { return states.empty() ? 0 : static_cast<int>(states.front().size()); }
  int nu() const { return controls.empty() ? 0 : static_cast<int>(controls.front().size()); }

  void validate() const {
    require_dims(!controls.empty(), "trajectory has no controls");
    require_dims(states.size() == controls.size() + 1,
                 detail::concat("trajectory needs T+1 states for T controls, got ", states.size(),
                                " states and ", controls.size(), " controls"));
    const auto n = states.front().size();
    const auto m = controls.front().size();
    for (std::size_t t = 0; t < states.size(); ++t) {
      require_dims(states[t].size() == n, detail::concat("state ", t, " has inconsistent size"));
      if (!states[t].allFinite()) fail(ErrorKind::kNumeric, "state ", t, " is not finite");
    }
    for (std::size_t t = 0; t < controls.size(); ++t) {
      require_dims(controls[t].size() == m, detail::concat("control ", t, " has inconsistent size"));
      if (!controls[t].allFinite()) fail(ErrorKind::kNumeric, "control ", t, " is not finite");
    }
  }

  Vector stacked_states() const { return stack(states); }
  Vector stacked_controls() const { return stack(controls); }

  static Vector stack(const std::vector<Vector>& seq) {
    Eigen::Index total = 0;
    for (const auto& v : seq) total += v.size();
    Vector out(total);
    Eigen::Index offset = 0;
    for (const auto& v : seq) {
      out.segment(offset, v.size()) = v;
      offset += v.size();
    }
    return out;
  }

  static std::vector<Vector> unstack(const Vector& stacked, int block) {
    require_dims(block > 0 && stacked.size() % block == 0, "stacked vector is not a multiple of the block size");
    std::vector<Vector> out(static_cast<std::size_t>(stacked.size() / block));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stacked.segment(static_cast<Eigen::Index>(i) * block, block);
    return out;
  }
};

/// Lifted dynamics x = Sx x0 + Su u, time-major (x_0 first).
struct BatchMatrices {
  Matrix Sx;
  Matrix Su;
  int nx = 0;
  int nu = 0;
  int horizon = 0;

  Vector predict(const Vector& x0, const Vector& u) const { return Sx * x0 + Su * u; }
};

inline BatchMatrices build_batch_matrices(std::span<const Matrix> A_seq, std::span<const Matrix> B_seq) {
  require_dims(!A_seq.empty(), "batch matrices need at least one step");
  require_dims(A_seq.size() == B_seq.size(),
               detail::concat("A sequence has ", A_seq.size(), " entries but B sequence has ", B_seq.size()));
  const auto nx = A_seq.front().rows();
  const auto nu = B_seq.front().cols();
  const auto T = static_cast<Eigen::Index>(A_seq.size());
  for (Eigen::Index t = 0; t < T; ++t) {
    require_dims(A_seq[t].rows() == nx && A_seq[t].cols() == nx,
                 detail::concat("A_", t, " is ", A_seq[t].rows(), "x", A_seq[t].cols(), ", expected ", nx, "x", nx));
    require_dims(B_seq[t].rows() == nx && B_seq[t].cols() == nu,
                 detail::concat("B_", t, " is ", B_seq[t].rows(), "x", B_seq[t].cols(), ", expected ", nx, "x", nu));
  }

  BatchMatrices out;
  out.nx = static_cast<int>(nx);
  out.nu = static_cast<int>(nu);
  out.horizon = static_cast<int>(T);
  out.Sx = Matrix::Zero(nx * (T + 1), nx);
  out.Su = Matrix::Zero(nx * (T + 1), nu * T);
  out.Sx.topRows(nx).setIdentity();
  for (Eigen::Index t = 0; t < T; ++t) {
    out.Sx.middleRows(nx * (t + 1), nx).noalias() = A_seq[t] * out.Sx.middleRows(nx * t, nx);
    if (t > 0) {
      out.Su.block(nx * (t + 1), 0, nx, nu * t).noalias() = A_seq[t] * out.Su.block(nx * t, 0, nx, nu * t);
    }
    out.Su.block(nx * (t + 1), nu * t, nx, nu) = B_seq[t];
  }
  return out;
}

/// Diagonal-jitter escalation for symmetric factorizations: eps * (trace/n) * I,
/// eps from `initial` growing by `growth` until `maximum`.
struct JitterPolicy {
  double initial = 1e-8;
  double growth = 10.0;
  double maximum = 1e-2;
};

/// Smallest Cholesky pivot accepted, relative to the largest diagonal entry.
inline constexpr double kPivotTolerance = 1e-13;

namespace detail {

inline bool cholesky_ok(const Eigen::LLT<Matrix>& llt, double diag_scale) {
  if (llt.info() != Eigen::Success) return false;
  const auto d = llt.matrixLLT().diagonal();
  if (!d.allFinite()) return false;
  return d.cwiseAbs2().minCoeff() > kPivotTolerance * diag_scale;
}

}  // namespace detail

/// Numerically positive definite: Cholesky succeeds with pivots above
/// kPivotTolerance relative to the largest diagonal entry.
inline bool is_positive_definite(const Matrix& m) {
  if (m.rows() != m.cols() || m.size() == 0 || !m.allFinite()) return false;
  const double scale = m.diagonal().cwiseAbs().maxCoeff();
  if (!(scale > 0.0)) return false;
  Eigen::LLT<Matrix> llt(m);
  return detail::cholesky_ok(llt, scale);
}

/// Cholesky factor of a symmetric matrix, regularized with trace-scaled
/// jitter when the matrix is not numerically positive definite.
class SymmetricFactor {
 public:
  explicit SymmetricFactor(const Matrix& m, JitterPolicy policy = {}) : n_(m.rows()) {
    require_dims(m.rows() == m.cols(), detail::concat("symmetric solve needs a square matrix, got ", m.rows(), "x", m.cols()));
    require_dims(m.rows() > 0, "symmetric solve needs a non-empty matrix");
    if (!m.allFinite()) fail(ErrorKind::kNumeric, "matrix has non-finite entries");
    const double asym = relative_asymmetry(m);
    if (asym > 1e-9) fail(ErrorKind::kContract, "matrix is not symmetric (relative asymmetry ", asym, ")");

    const Matrix sym = symmetrized(m);
    double diag_scale = sym.diagonal().cwiseAbs().maxCoeff();
    llt_.compute(sym);
    if (diag_scale > 0.0 && detail::cholesky_ok(llt_, diag_scale)) return;

    const double trace = sym.trace();
    const double mean_diag = trace > 0.0 ? trace / static_cast<double>(n_) : 1.0;
    for (double eps = policy.initial; eps <= policy.maximum * (1.0 + 1e-12); eps *= policy.growth) {
      jitter_ = eps * mean_diag;
      Matrix shifted = sym;
      shifted.diagonal().array() += jitter_;
      diag_scale = shifted.diagonal().cwiseAbs().maxCoeff();
      llt_.compute(shifted);
      if (detail::cholesky_ok(llt_, diag_scale)) return;
    }
    fail(ErrorKind::kSolverFailure, "matrix is not positive definite even with jitter ", jitter_);
  }

  Matrix solve(const Matrix& rhs) const {
    require_dims(rhs.rows() == n_, detail::concat("right-hand side has ", rhs.rows(), " rows, expected ", n_));
    if (!rhs.allFinite()) fail(ErrorKind::kNumeric, "right-hand side has non-finite entries");
    return llt_.solve(rhs);
  }

  Vector solve(const Vector& rhs) const {
    require_dims(rhs.size() == n_, detail::concat("right-hand side has ", rhs.size(), " rows, expected ", n_));
    if (!rhs.allFinite()) fail(ErrorKind::kNumeric, "right-hand side has non-finite entries");
    return llt_.solve(rhs);
  }

  Matrix inverse() const { return symmetrized(llt_.solve(Matrix::Identity(n_, n_))); }

  /// Absolute diagonal shift that was applied (0 when none was needed).
  double jitter() const { return jitter_; }

 private:
  Eigen::Index n_;
  Eigen::LLT<Matrix> llt_;
  double jitter_ = 0.0;
};

inline Matrix symmetric_solve(const Matrix& m, const Matrix& rhs, JitterPolicy policy = {}) {
  return SymmetricFactor(m, policy).solve(rhs);
}

/// Check that a symmetric matrix is PSD: eigenvalues >= -tol * max|eig|.
inline bool is_psd(const Matrix& m, double tol = 1e-9) {
  if (m.rows() != m.cols() || !m.allFinite()) return false;
  if (m.size() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(m), Eigen::EigenvaluesOnly);
  const auto& ev = es.eigenvalues();
  const double scale = std::max(ev.cwiseAbs().maxCoeff(), 1e-300);
  return ev.minCoeff() >= -tol * scale;
}

inline Matrix block_diagonal(std::span<const Matrix> blocks) {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  for (const auto& b : blocks) {
    rows += b.rows();
    cols += b.cols();
  }
  Matrix out = Matrix::Zero(rows, cols);
  Eigen::Index r = 0;
  Eigen::Index c = 0;
  for (const auto& b : blocks) {
    out.block(r, c, b.rows(), b.cols()) = b;
    r += b.rows();
    c += b.cols();
  }
  return out;
}

/// Build a square matrix from either a diagonal (n entries) or a full
/// row-major listing (n*n entries).
inline Matrix matrix_from_values(const std::vector<double>& values, int n) {
  if (static_cast<int>(values.size()) == n) {
    return Eigen::Map<const Vector>(values.data(), n).asDiagonal();
  }
  require_dims(static_cast<int>(values.size()) == n * n,
               detail::concat("expected ", n, " diagonal or ", n * n, " full entries, got ", values.size()));
  Matrix out(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) out(i, j) = values[static_cast<std::size_t>(i * n + j)];
  return out;
}

}  // namespace trajdist
