#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include "mpr/config.hpp"
#include "mpr/csv.hpp"
#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"

namespace mpr {

/// Uniform grid on (0, length) with n interior nodes eta_i = i*h, i = 1..n,
/// and inflow boundary value x(0) = 0. Quadrature weights are all h.
struct Grid {
  int n = 0;
  double length = 2.0;
  double h = 0.0;
  Vector weights;

  static Grid uniform(int n, double length = 2.0) {
    if (n < 4) throw ConfigError("grid.n: must be >= 4, got " + std::to_string(n));
    if (!(length > 0.0)) throw ConfigError("grid.length: must be positive");
    Grid g;
    g.n = n;
    g.length = length;
    g.h = length / (n + 1);
    g.weights = Vector::Constant(n, g.h);
    return g;
  }

  double node(int i) const { return (i + 1) * h; }

  /// <x,y> = h * sum_i x_i y_i
  double inner(const Vector& x, const Vector& y) const { return h * x.dot(y); }
};

/// Riccati data  dP/dt = A'P + PA + P sigma sigma' P + C  with anchor M.
/// Quadrature weights are folded into the operator matrices, so adjoints are
/// plain transposes and all algebra is matrix algebra. `weight` is the scalar
/// inner-product weight used when forming functionals (h on a grid).
struct ProblemSpec {
  std::optional<Grid> grid;
  LinOp A;
  LinOp sigma;
  SymOp C;
  SymOp M;
  std::string label;
  double weight = 1.0;
  double a_condition = 0.0;

  Eigen::Index dim() const { return A.rows(); }
  Matrix sigma_sigma_t() const { return sigma * sigma.transpose(); }
  double inner(const Vector& x, const Vector& y) const { return weight * x.dot(y); }
};

inline LinOp build_transport_A(const Grid& grid) {
  const int n = grid.n;
  const double inv_h = 1.0 / grid.h;
  // A = -2I - D with (D x)_i = (x_i - x_{i-1})/h, x_0 = 0.
  LinOp a = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    a(i, i) = -2.0 - inv_h;
    if (i > 0) a(i, i - 1) = inv_h;
  }
  return a;
}

inline LinOp build_sigma(const Grid& grid) {
  return Matrix::Identity(grid.n, grid.n) / std::sqrt(2.0);
}

/// (C x)(eta) = 1/3 * integral of x, rank one.
inline SymOp build_C(const Grid& grid) {
  return SymOp(Matrix::Constant(grid.n, grid.n, grid.h / 3.0));
}

inline constexpr double kDefaultAnchor = -0.1;

inline SymOp build_M_anchor(const Grid& grid, double m = kDefaultAnchor) {
  if (!(m < 0.0)) {
    std::ostringstream os;
    os << "anchor.m: must be negative (got " << m
       << "); a non-negative anchor breaks the positive initial drift of P - M";
    throw ConfigError(os.str());
  }
  return SymOp::identity(grid.n, m);
}

/// Integral operator with symmetric kernel samples K(eta_i, zeta_j), folded
/// with the quadrature weight h.
inline SymOp build_kernel_operator(const Grid& grid, const Eigen::Ref<const Matrix>& k) {
  if (k.rows() != grid.n || k.cols() != grid.n) {
    throw ConfigError("kernel samples must be n x n");
  }
  const double asym = (k - k.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) {
    std::ostringstream os;
    os << "kernel samples are not symmetric (max asymmetry " << asym << ")";
    throw ConfigError(os.str());
  }
  return SymOp(grid.h * k);
}

/// dP/dt at P = M, i.e. A'M + MA + M sigma sigma' M + C.
inline SymOp anchor_drift(const ProblemSpec& spec) {
  const Matrix& m = spec.M.matrix();
  return SymOp(spec.A.transpose() * m + m * spec.A + m * spec.sigma_sigma_t() * m +
               spec.C.matrix());
}

/// Checks C >= 0 and A invertible; records cond(A). With
/// `require_invertible_A` off a singular A is accepted and cond(A) = inf.
inline void validate(ProblemSpec& spec, bool require_invertible_A = true) {
  const auto n = spec.A.rows();
  if (spec.A.cols() != n) throw ConfigError("A: must be square");
  if (spec.sigma.rows() != n) throw ConfigError("sigma: row count must equal dim(A)");
  if (spec.C.dim() != n) throw ConfigError("C: dimension mismatch");
  if (spec.M.dim() != n) throw ConfigError("M: dimension mismatch");
  if (!(spec.weight > 0.0)) throw ConfigError("inner-product weight must be positive");
  const double c_margin = coercivity_margin(spec.C);
  if (c_margin < -1e-10 * std::max(1.0, spec.C.norm())) {
    std::ostringstream os;
    os << "C: must be positive semidefinite (min eigenvalue " << c_margin << ")";
    throw ConfigError(os.str());
  }
  Eigen::JacobiSVD<Matrix> svd(spec.A);
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(s.size() - 1) <= 1e-14 * std::max(1.0, s(0))) {
    if (require_invertible_A) throw ConfigError("A: must be invertible (smallest singular value ~ 0)");
    spec.a_condition = std::numeric_limits<double>::infinity();
    return;
  }
  spec.a_condition = s(0) / s(s.size() - 1);
}

/// The transport example on (0, length): A = -(2 + d/deta), sigma = I/sqrt(2),
/// C x = 1/3 * integral x, anchor M = m I.
inline ProblemSpec transport_problem(int n = 32, double m = kDefaultAnchor, double length = 2.0) {
  ProblemSpec spec;
  spec.grid = Grid::uniform(n, length);
  spec.A = build_transport_A(*spec.grid);
  spec.sigma = build_sigma(*spec.grid);
  spec.C = build_C(*spec.grid);
  spec.M = build_M_anchor(*spec.grid, m);
  spec.weight = spec.grid->h;
  std::ostringstream os;
  os << "transport(n=" << n << ", m=" << m << ")";
  spec.label = os.str();
  validate(spec);
  const double drift = coercivity_margin(anchor_drift(spec));
  if (!(drift > 0.0)) {
    std::ostringstream msg;
    msg << "anchor.m: initial drift of P - M is not coercive (margin " << drift << ")";
    throw ConfigError(msg.str());
  }
  return spec;
}

/// Problem from explicit matrices (no grid, Euclidean product unless given).
inline ProblemSpec custom_problem(LinOp a, LinOp sigma, SymOp c, SymOp m, double weight = 1.0,
                                  std::string label = "custom", bool require_invertible_A = true) {
  ProblemSpec spec;
  spec.A = std::move(a);
  spec.sigma = std::move(sigma);
  spec.C = std::move(c);
  spec.M = std::move(m);
  spec.weight = weight;
  spec.label = std::move(label);
  validate(spec, require_invertible_A);
  return spec;
}

/// Scalar problem dp/dt = 2ap + s^2 p^2 + c, anchor m.
inline ProblemSpec scalar_problem(double a, double s, double c, double m,
                                  bool require_invertible_A = true) {
  return custom_problem(Matrix::Constant(1, 1, a), Matrix::Constant(1, 1, s),
                        SymOp(Matrix::Constant(1, 1, c)), SymOp(Matrix::Constant(1, 1, m)),
                        1.0, "scalar", require_invertible_A);
}

inline ProblemSpec load_problem(const Config& cfg) {
  const std::string name = cfg.get_string("problem.name", "transport");
  if (name == "transport") {
    const long n = cfg.get_int("grid.n", 32);
    if (n < 4 || n > 4096) throw ConfigError("grid.n: must be in [4, 4096]");
    return transport_problem(static_cast<int>(n), cfg.get_double("anchor.m", kDefaultAnchor),
                             cfg.get_double("grid.length", 2.0));
  }
  if (name == "scalar") {
    return scalar_problem(cfg.get_double("scalar.a", -1.0), cfg.get_double("scalar.s", 1.0),
                          cfg.get_double("scalar.c", 1.0), cfg.get_double("scalar.m", kDefaultAnchor),
                          cfg.get_bool("problem.require_invertible_A", true));
  }
  if (name == "custom") {
    auto need = [&](const std::string& key) {
      const auto path = cfg.find(key);
      if (!path) throw ConfigError(key + ": required when problem.name = custom");
      return csv::load_matrix(*path);
    };
    const Matrix a = need("custom.A");
    const Matrix sigma = need("custom.sigma");
    const Matrix c = need("custom.C");
    const Matrix m = need("custom.M");
    return custom_problem(a, sigma, SymOp::checked(c, 1e-10), SymOp::checked(m, 1e-10),
                          cfg.get_double("custom.weight", 1.0), "custom",
                          cfg.get_bool("problem.require_invertible_A", true));
  }
  throw ConfigError("problem.name: expected 'transport', 'scalar' or 'custom', got '" + name + "'");
}

/// Admissible initial datum M + eps I + weight * G G' with G ~ N(0,1)^{n x rank}.
inline SymOp perturbed_initial(const SymOp& m, double eps, int rank, std::mt19937_64& rng,
                               double weight = 1.0) {
  const auto n = m.dim();
  Matrix g(n, rank);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index j = 0; j < rank; ++j)
    for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
  return SymOp(m.matrix() + eps * Matrix::Identity(n, n) + weight * g * g.transpose());
}

}  // namespace mpr
