#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "mpr/errors.hpp"

namespace mpr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// General bounded operator on the discretized space (dense, row-major
/// semantics irrelevant). Kept as a plain Eigen matrix.
using LinOp = Eigen::MatrixXd;

/// Dense symmetric operator. Every construction path symmetrizes, so the
/// stored entries are exactly symmetric.
class SymOp {
 public:
  SymOp() = default;

  explicit SymOp(const Eigen::Ref<const Matrix>& m) : m_(m) {
    if (m.rows() != m.cols()) {
      throw ConfigError("SymOp: matrix is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", expected square");
    }
    if (!m.allFinite()) throw ConfigError("SymOp: non-finite entry");
    m_ = 0.5 * (m_ + m_.transpose()).eval();
  }

  /// Rejects inputs whose asymmetry exceeds `abs_tol` before symmetrizing.
  static SymOp checked(const Eigen::Ref<const Matrix>& m, double abs_tol) {
    if (m.rows() == m.cols()) {
      const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
      if (asym > abs_tol) {
        std::ostringstream os;
        os << "SymOp: asymmetry " << asym << " exceeds tolerance " << abs_tol;
        throw ConfigError(os.str());
      }
    }
    return SymOp(m);
  }

  static SymOp zero(Eigen::Index n) { return SymOp(Matrix::Zero(n, n)); }
  static SymOp identity(Eigen::Index n, double scale = 1.0) {
    return SymOp(scale * Matrix::Identity(n, n));
  }

  Eigen::Index dim() const noexcept { return m_.rows(); }
  const Matrix& matrix() const noexcept { return m_; }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  double norm() const { return m_.norm(); }

  friend SymOp operator+(const SymOp& a, const SymOp& b) { return SymOp(a.m_ + b.m_); }
  friend SymOp operator-(const SymOp& a, const SymOp& b) { return SymOp(a.m_ - b.m_); }
  friend SymOp operator-(const SymOp& a) { return SymOp(-a.m_); }
  friend SymOp operator*(double s, const SymOp& a) { return SymOp(s * a.m_); }

 private:
  Matrix m_;
};

/// Spectral decomposition with eigenvalues sorted in descending order.
struct SymEig {
  Vector values;
  Matrix vectors;
};

inline SymEig sym_eig(const SymOp& f) {
  const Eigen::Index n = f.dim();
  if (n == 0) return {Vector(), Matrix()};
  Eigen::SelfAdjointEigenSolver<Matrix> es(f.matrix());
  if (es.info() != Eigen::Success) {
    std::ostringstream os;
    os << "sym_eig: eigen-solver did not converge (dim " << n << ", |F|_F = " << f.norm()
       << ", max|F_ij| = " << f.matrix().cwiseAbs().maxCoeff() << ")";
    throw EigenSolverError(os.str());
  }
  // Eigen sorts ascending; reverse to descending.
  SymEig out{es.eigenvalues().reverse(), es.eigenvectors().rowwise().reverse()};
  return out;
}

inline double coercivity_margin(const SymOp& f) {
  if (f.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(f.matrix(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw EigenSolverError("coercivity_margin: no convergence");
  return es.eigenvalues()(0);
}

inline double max_eigenvalue(const SymOp& f) {
  if (f.dim() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(f.matrix(), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw EigenSolverError("max_eigenvalue: no convergence");
  return es.eigenvalues()(f.dim() - 1);
}

inline constexpr double kDefaultPinvRelTol = 1e-10;

/// Moore-Penrose pseudo-inverse via spectral cutoff: eigenvalues with
/// |lambda| <= rel_tol * max|lambda| are treated as zero.
inline SymOp pseudo_inverse(const SymOp& f, double rel_tol = kDefaultPinvRelTol) {
  const SymEig eig = sym_eig(f);
  if (f.dim() == 0) return f;
  const double scale = eig.values.cwiseAbs().maxCoeff();
  const double cutoff = rel_tol * scale;
  Vector inv(eig.values.size());
  for (Eigen::Index i = 0; i < inv.size(); ++i) {
    const double l = eig.values(i);
    inv(i) = (scale > 0.0 && std::abs(l) > cutoff) ? 1.0 / l : 0.0;
  }
  return SymOp(eig.vectors * inv.asDiagonal() * eig.vectors.transpose());
}

/// Condition diagnostics for a pseudo-inversion, reported by the recipe.
struct PinvDiagnostics {
  double max_abs_eig = 0.0;
  double min_abs_kept = 0.0;
  int rank = 0;
  double condition() const { return min_abs_kept > 0.0 ? max_abs_eig / min_abs_kept : 0.0; }
};

inline PinvDiagnostics pinv_diagnostics(const SymOp& f, double rel_tol = kDefaultPinvRelTol) {
  PinvDiagnostics d;
  if (f.dim() == 0) return d;
  const SymEig eig = sym_eig(f);
  d.max_abs_eig = eig.values.cwiseAbs().maxCoeff();
  d.min_abs_kept = d.max_abs_eig;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) {
    const double a = std::abs(eig.values(i));
    if (d.max_abs_eig > 0.0 && a > rel_tol * d.max_abs_eig) {
      ++d.rank;
      d.min_abs_kept = std::min(d.min_abs_kept, a);
    }
  }
  return d;
}

struct SupResult {
  double value = 0.0;
  Vector argmax;
};

/// Tolerances for the finiteness test of sup_x { 1/2<x,Fx> + <x,xi> }.
struct SupTolerances {
  double positive_rel = 1e-10;  // eigenvalue > positive_rel * max|lambda| => unbounded
  double range_rel = 1e-8;      // |xi_ker| > range_rel * |xi| => unbounded
  double pinv_rel = kDefaultPinvRelTol;
};

/// Max-plus integral of a quadratic: sup_x { w/2 <x,Fx> + w <x,xi> } where w
/// is the inner-product weight (1 for the Euclidean product, h on a grid).
/// Finite iff F <= 0 and xi in range(F); then the value is -w/2 <xi,F+ xi>
/// attained at x = -F+ xi.
inline SupResult maxplus_sup_quad(const SymOp& f, const Vector& xi, double weight = 1.0,
                                  const SupTolerances& tol = {}) {
  if (xi.size() != f.dim()) throw ConfigError("maxplus_sup_quad: dimension mismatch");
  const SymEig eig = sym_eig(f);
  const double scale = f.dim() ? eig.values.cwiseAbs().maxCoeff() : 0.0;
  if (f.dim() && eig.values(0) > tol.positive_rel * scale) {
    std::ostringstream os;
    os << "maxplus_sup_quad: F has positive eigenvalue " << eig.values(0)
       << "; supremum is +infinity";
    throw Unbounded(os.str());
  }
  const double cutoff = tol.pinv_rel * scale;
  Vector coeffs = eig.vectors.transpose() * xi;
  double ker_sq = 0.0;
  Vector y = Vector::Zero(f.dim());
  for (Eigen::Index i = 0; i < coeffs.size(); ++i) {
    const double l = eig.values(i);
    if (scale > 0.0 && std::abs(l) > cutoff) {
      y(i) = coeffs(i) / l;
    } else {
      ker_sq += coeffs(i) * coeffs(i);
    }
  }
  if (std::sqrt(ker_sq) > tol.range_rel * xi.norm()) {
    std::ostringstream os;
    os << "maxplus_sup_quad: linear term has component " << std::sqrt(ker_sq)
       << " in ker(F); supremum is +infinity";
    throw Unbounded(os.str());
  }
  SupResult r;
  r.argmax = -(eig.vectors * y);
  r.value = -0.5 * weight * coeffs.dot(y);
  return r;
}

/// x -> 1/2 <x,Fx> + <x,xi> + c under the Euclidean product.
struct QuadForm {
  SymOp F;
  Vector xi;
  double c = 0.0;

  double operator()(const Vector& x) const {
    return 0.5 * x.dot(F.matrix() * x) + x.dot(xi) + c;
  }
  SupResult sup() const {
    SupResult r = maxplus_sup_quad(F, xi);
    r.value += c;
    return r;
  }
};

inline double rel_frobenius(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  const double denom = std::max(b.norm(), 1e-300);
  return (a - b).norm() / denom;
}

}  // namespace mpr
