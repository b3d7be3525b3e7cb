#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "mpr/csv.hpp"
#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"
#include "mpr/riccati.hpp"

namespace mpr {

/// Quadratic max-plus kernel
///   B_t(y, z) = 1/2 <y, B11 y> + <z, B12 y> + 1/2 <z, B22 z>
/// of the dual-space propagator over horizon t. B12 maps y-space into z-space.
struct KernelTriple {
  SymOp B11;
  LinOp B12;
  SymOp B22;
  double t = 0.0;

  Eigen::Index dim() const { return B11.dim(); }

  double operator()(const Vector& y, const Vector& z) const {
    return 0.5 * y.dot(B11.matrix() * y) + z.dot(B12 * y) + 0.5 * z.dot(B22.matrix() * z);
  }
};

/// Dual functional z -> -1/2 <z, N z>.
struct DualQuad {
  SymOp N;

  double operator()(const Vector& z) const { return -0.5 * z.dot(N.matrix() * z); }
};

/// Tolerances for the finiteness pre-checks guarding every pseudo-inverse.
struct KernelTolerances {
  double pinv_rel = kDefaultPinvRelTol;
  /// max eig(F) <= nonpositive_rel * |F|_F is required before inverting F.
  double nonpositive_rel = 1e-8;
  double coercivity_eps = 1e-10;
};

namespace detail {

/// Non-positivity check required for sup_x {1/2<x,Fx> + <x,l>} < inf.
inline bool nonpositive(const SymOp& f, double rel, double* max_eig = nullptr) {
  const double top = max_eigenvalue(f);
  if (max_eig) *max_eig = top;
  return top <= rel * std::max(f.norm(), 1e-300);
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace detail

/// Step-1 kernel from the seed trajectory at horizon delta:
///   B11 = -M - M (P - M)^-1 M
///   B12 = -Q' (P - M)^-1 M
///   B22 = -Q' (P - M)^-1 Q + R
/// using a true inverse (P(delta) - M must be coercive).
inline KernelTriple seed_kernel(const SeedTrajectory& traj, double delta,
                                const KernelTolerances& tol = {}) {
  if (!traj.has_aux()) throw ConfigError("seed_kernel: trajectory carries no Q, R");
  if (!(delta >= 0.0) || delta > traj.tau_star * (1.0 + 1e-12)) {
    throw CoercivityLost(delta, 0.0,
                         "seed_kernel: delta outside (0, tau*] with tau* = " +
                             detail::fmt(traj.tau_star));
  }
  const std::size_t k = traj.index_of(delta);
  const Matrix& m = traj.spec.M.matrix();
  const SymOp gap = traj.P[k] - traj.spec.M;
  const double margin = coercivity_margin(gap);
  if (!(margin > tol.coercivity_eps)) {
    throw CoercivityLost(delta, margin, "seed_kernel needs P(delta) - M coercive");
  }
  Eigen::LLT<Matrix> llt(gap.matrix());
  if (llt.info() != Eigen::Success) throw CoercivityLost(delta, margin, "Cholesky failed");
  const LinOp& q = traj.Q[k];
  const Matrix x_m = llt.solve(m);  // (P - M)^-1 M
  const Matrix x_q = llt.solve(q);  // (P - M)^-1 Q
  KernelTriple b;
  b.B11 = SymOp(-m - m * x_m);
  b.B12 = -q.transpose() * x_m;
  b.B22 = SymOp(-q.transpose() * x_q + traj.R[k].matrix());
  b.t = traj.times[k];
  return b;
}

/// Kernel of B_tau (+) B_t: sup over the intermediate variable, with
/// S = (B22_tau + B11_t)^+:
///   B11 = B11_tau - B12_tau' S B12_tau
///   B12 = -B12_t S B12_tau
///   B22 = B22_t - B12_t S B12_t'
inline KernelTriple compose(const KernelTriple& b_tau, const KernelTriple& b_t,
                            const KernelTolerances& tol = {}) {
  if (b_tau.dim() != b_t.dim()) throw ConfigError("compose: kernel dimensions differ");
  const SymOp inner = b_tau.B22 + b_t.B11;
  double top = 0.0;
  if (!detail::nonpositive(inner, tol.nonpositive_rel, &top)) {
    throw UnboundedComposition("compose: B22_tau + B11_t has positive eigenvalue " +
                               detail::fmt(top) + " (horizon " + detail::fmt(b_tau.t + b_t.t) +
                               " outside the validity range)");
  }
  const Matrix s = pseudo_inverse(inner, tol.pinv_rel).matrix();
  const Matrix s_tau = s * b_tau.B12;
  KernelTriple out;
  out.B11 = SymOp(b_tau.B11.matrix() - b_tau.B12.transpose() * s_tau);
  out.B12 = -b_t.B12 * s_tau;
  out.B22 = SymOp(b_t.B22.matrix() - b_t.B12 * s * b_t.B12.transpose());
  out.t = b_tau.t + b_t.t;
  return out;
}

struct Propagation {
  KernelTriple kernel;
  int compositions = 0;
};

namespace detail {

template <class F>
auto annotate(int k, F&& f) {
  try {
    return f();
  } catch (const UnboundedComposition& e) {
    throw UnboundedComposition(std::string(e.what()) + " [iteration " + std::to_string(k) + "]");
  }
}

}  // namespace detail

/// B^_1 = B_delta, B^_k = compose(B_delta, B^_{k-1}); returns B^_kappa.
inline Propagation iterate_linear(const KernelTriple& b_delta, int kappa,
                                  const KernelTolerances& tol = {}) {
  if (kappa < 1) throw ConfigError("recipe.kappa: must be >= 1");
  Propagation p{b_delta, 0};
  for (int k = 2; k <= kappa; ++k) {
    p.kernel = detail::annotate(k, [&] { return compose(b_delta, p.kernel, tol); });
    ++p.compositions;
  }
  return p;
}

/// B <- compose(B, B), k times; horizon 2^k delta.
inline Propagation iterate_doubling(const KernelTriple& b_delta, int k,
                                    const KernelTolerances& tol = {}) {
  if (k < 0) throw ConfigError("doubling count must be >= 0");
  Propagation p{b_delta, 0};
  for (int i = 1; i <= k; ++i) {
    p.kernel = detail::annotate(i, [&] { return compose(p.kernel, p.kernel, tol); });
    ++p.compositions;
  }
  return p;
}

/// Semiconvex dual of x -> 1/2 <x, X x> for X - M coercive:
///   N = M + M (X - M)^-1 M,  cross-checked against M (X - M)^-1 X.
inline DualQuad dual_of_quadratic(const SymOp& x, const SymOp& m, double eps,
                                  const char* what, double* cross_check = nullptr) {
  const SymOp gap = x - m;
  const double margin = coercivity_margin(gap);
  if (!(margin > eps)) {
    throw NotAdmissible(std::string(what) + " - M is not coercive (margin " + detail::fmt(margin) +
                        ")");
  }
  Eigen::LLT<Matrix> llt(gap.matrix());
  const Matrix x_m = llt.solve(m.matrix());  // (X - M)^-1 M
  const Matrix n1 = m.matrix() + m.matrix() * x_m;
  if (cross_check) {
    const Matrix n2 = m.matrix() * llt.solve(x.matrix());
    *cross_check = (n1 - n2).norm() / std::max(n1.norm(), 1e-300);
  }
  return {SymOp(n1)};
}

inline DualQuad dual_of_terminal(const SymOp& m_tilde, const SymOp& m,
                                 const KernelTolerances& tol = {},
                                 double* cross_check = nullptr) {
  return dual_of_quadratic(m_tilde, m, tol.coercivity_eps, "M~", cross_check);
}

inline DualQuad dual_of_value(const SymOp& p_tilde_t, const SymOp& m,
                              const KernelTolerances& tol = {}, double* cross_check = nullptr) {
  return dual_of_quadratic(p_tilde_t, m, tol.coercivity_eps, "P~(t)", cross_check);
}

/// Max-plus integral of the kernel against a dual quadratic:
///   (B (+) a)(y) = sup_z { B(y,z) - 1/2 <z,N z> } = 1/2 <y, T y>,
///   T = B11 - B12' (B22 - N)^+ B12,
/// returned as the dual quadratic with N = -T.
inline DualQuad maxplus_apply(const KernelTriple& b, const DualQuad& a,
                              const KernelTolerances& tol = {}) {
  const SymOp inner = b.B22 - a.N;
  double top = 0.0;
  if (!detail::nonpositive(inner, tol.nonpositive_rel, &top)) {
    throw UnboundedReconstruction("maxplus_apply: B22 - N~ has positive eigenvalue " +
                                  detail::fmt(top));
  }
  const Matrix s = pseudo_inverse(inner, tol.pinv_rel).matrix();
  const SymOp t_op(b.B11.matrix() - b.B12.transpose() * s * b.B12);
  return {-t_op};
}

/// Inverse semiconvex dual of a dual quadratic:
///   sup_z { psi(x,z) - 1/2 <z,N z> } = 1/2 <x, [M - M (M - N)^+ M] x>.
inline SymOp inverse_dual(const DualQuad& a, const SymOp& m, const KernelTolerances& tol = {}) {
  const SymOp inner = m - a.N;
  double top = 0.0;
  if (!detail::nonpositive(inner, tol.nonpositive_rel, &top)) {
    throw UnboundedReconstruction("inverse dual: T~ + M has positive eigenvalue " +
                                  detail::fmt(top));
  }
  const Matrix s = pseudo_inverse(inner, tol.pinv_rel).matrix();
  return SymOp(m.matrix() - m.matrix() * s * m.matrix());
}

/// Step 3: P~(t) = M - M (T~ + M)^+ M with T~ from maxplus_apply on the dual
/// of the terminal payoff 1/2 <x, M~ x>.
inline SymOp reconstruct(const KernelTriple& b_t, const SymOp& m_tilde, const SymOp& m,
                         const KernelTolerances& tol = {}) {
  return inverse_dual(maxplus_apply(b_t, dual_of_terminal(m_tilde, m, tol), tol), m, tol);
}

struct SemiconvexityCertificate {
  SymOp K;
  double margin_upper = 0.0;  // min eig(P_t + K)
  double margin_lower = 0.0;  // min eig(-K - M)
  bool ok = false;
};

/// K = -alpha P_t - (1 - alpha) M; ok iff P_t + K > 0 and -K - M > 0.
inline SemiconvexityCertificate semiconvexity_certificate(const SymOp& p_t, const SymOp& m,
                                                          double alpha = 0.5) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha: must lie in (0, 1)");
  SemiconvexityCertificate c;
  c.K = SymOp(-alpha * p_t.matrix() - (1.0 - alpha) * m.matrix());
  c.margin_upper = coercivity_margin(p_t + c.K);
  c.margin_lower = coercivity_margin(-c.K - m);
  c.ok = c.margin_upper > 0.0 && c.margin_lower > 0.0;
  return c;
}

/// Kernel bundle: `horizon=<t>` then B11, B12, B22 as matrix CSV blocks.
inline void write_kernel(std::ostream& os, const KernelTriple& b) {
  os << "horizon=" << csv::format_real(b.t) << '\n';
  csv::write_matrix(os, b.B11.matrix());
  csv::write_matrix(os, b.B12);
  csv::write_matrix(os, b.B22.matrix());
}

inline KernelTriple read_kernel(std::istream& is, const std::string& source = "kernel") {
  std::string line;
  std::getline(is, line);
  line = detail::trim(line);
  if (line.rfind("horizon=", 0) != 0) {
    throw ConfigError(source + ": expected header 'horizon=<t>'");
  }
  KernelTriple b;
  b.t = detail::parse_double(line.substr(8), source + " horizon");
  b.B11 = SymOp::checked(csv::read_matrix(is, source + " B11"), 1e-9);
  b.B12 = csv::read_matrix(is, source + " B12");
  b.B22 = SymOp::checked(csv::read_matrix(is, source + " B22"), 1e-9);
  if (b.B12.rows() != b.B11.dim() || b.B12.cols() != b.B11.dim() || b.B22.dim() != b.B11.dim()) {
    throw ConfigError(source + ": block dimensions differ");
  }
  return b;
}

inline void save_kernel(const std::string& path, const KernelTriple& b) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  write_kernel(f, b);
}

inline KernelTriple load_kernel(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open kernel file '" + path + "'");
  return read_kernel(f, path);
}

}  // namespace mpr
