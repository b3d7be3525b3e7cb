#pragma once

#include <cmath>
#include <random>

#include "mpr/mpr.hpp"

namespace mpr::test {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = normal(rng);
  return g;
}

inline Vector gaussian(Eigen::Index n, std::mt19937_64& rng) { return gaussian(n, 1, rng).col(0); }

/// Random orthogonal matrix from the QR of a Gaussian matrix.
inline Matrix orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  Eigen::HouseholderQR<Matrix> qr(gaussian(n, n, rng));
  return qr.householderQ() * Matrix::Identity(n, n);
}

/// Symmetric matrix with the given spectrum in a random basis.
inline SymOp with_spectrum(const Vector& eigs, std::mt19937_64& rng) {
  const Matrix u = orthogonal(eigs.size(), rng);
  return SymOp(u * eigs.asDiagonal() * u.transpose());
}

/// Symmetric, random rank in [0, n], eigenvalues of either sign, with a
/// random overall scale spanning several decades.
inline SymOp random_symmetric(Eigen::Index n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> rank_d(0, static_cast<int>(n));
  std::uniform_real_distribution<double> mag(0.1, 10.0);
  std::uniform_real_distribution<double> expo(-3.0, 3.0);
  std::bernoulli_distribution sign(0.5);
  const int rank = rank_d(rng);
  const double scale = std::pow(10.0, expo(rng));
  Vector eigs = Vector::Zero(n);
  for (int i = 0; i < rank; ++i) eigs(i) = scale * mag(rng) * (sign(rng) ? 1.0 : -1.0);
  return with_spectrum(eigs, rng);
}

/// Scalar toy dp/dt = 2ap + s^2 p^2 + c with a = -1, s = 1, c = 1 reduces to
/// u' = u^2 for u = p - 1.
struct ScalarToy {
  double m = -0.1;

  double u0(double p0) const { return p0 - 1.0; }
  double p_from(double p0, double t) const { return 1.0 + u0(p0) / (1.0 - u0(p0) * t); }
  double p(double t) const { return p_from(m, t); }
  double q(double t) const { return -m / (1.0 - u0(m) * t); }
  double r(double t) const {
    const double u = u0(m);
    return m + m * m / u * (1.0 / (1.0 - u * t) - 1.0);
  }
  ProblemSpec spec() const { return scalar_problem(-1.0, 1.0, 1.0, m); }
};

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace mpr::test
