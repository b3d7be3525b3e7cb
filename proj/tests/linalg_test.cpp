#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "support.hpp"

using namespace mpr;
using mpr::test::gaussian;

TEST(SymOp, SymmetrizesInput) {
  Matrix m(2, 2);
  m << 1.0, 2.0, 4.0, 3.0;
  const SymOp s(m);
  EXPECT_DOUBLE_EQ(s.matrix()(0, 1), 3.0);
  EXPECT_DOUBLE_EQ(s.matrix()(1, 0), 3.0);
}

TEST(SymOp, RejectsBadInput) {
  EXPECT_THROW(SymOp(Matrix::Zero(2, 3)), ConfigError);
  Matrix m = Matrix::Identity(2, 2);
  m(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(SymOp{m}, ConfigError);
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = 1.0;
  EXPECT_THROW(SymOp::checked(a, 1e-10), ConfigError);
  EXPECT_NO_THROW(SymOp::checked(Matrix::Identity(2, 2), 1e-10));
}

TEST(SymOp, Arithmetic) {
  const SymOp a = SymOp::identity(3, 2.0);
  const SymOp b = SymOp::identity(3, 0.5);
  EXPECT_TRUE(((a + b).matrix() - 2.5 * Matrix::Identity(3, 3)).isZero());
  EXPECT_TRUE(((a - b).matrix() - 1.5 * Matrix::Identity(3, 3)).isZero());
  EXPECT_TRUE(((-a).matrix() + 2.0 * Matrix::Identity(3, 3)).isZero());
  EXPECT_TRUE(((3.0 * a).matrix() - 6.0 * Matrix::Identity(3, 3)).isZero());
  EXPECT_EQ(SymOp::zero(4).dim(), 4);
}

TEST(SymEig, DescendingAndReconstructs) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const SymOp f(gaussian(5, 5, rng));
    const SymEig e = sym_eig(f);
    for (Eigen::Index i = 1; i < 5; ++i) EXPECT_GE(e.values(i - 1), e.values(i));
    const Matrix back = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    EXPECT_LT((back - f.matrix()).norm(), 1e-12 * std::max(1.0, f.norm()));
  }
}

TEST(Coercivity, MarginIsSmallestEigenvalue) {
  Vector d(3);
  d << 3.0, -0.5, 1.0;
  const SymOp f(d.asDiagonal().toDenseMatrix());
  EXPECT_DOUBLE_EQ(coercivity_margin(f), -0.5);
  EXPECT_DOUBLE_EQ(max_eigenvalue(f), 3.0);
}

TEST(PseudoInverse, Diagonal) {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 2.0;
  const SymOp p = pseudo_inverse(SymOp(d));
  EXPECT_DOUBLE_EQ(p.matrix()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(p.matrix()(1, 1), 0.0);
  EXPECT_TRUE(pseudo_inverse(SymOp::zero(3)).matrix().isZero());
}

TEST(PseudoInverse, MatchesInverseWhenRegular) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix g = gaussian(6, 6, rng);
    const SymOp f(g * g.transpose() + Matrix::Identity(6, 6));
    const Matrix inv = f.matrix().lu().inverse();
    EXPECT_LT(rel_frobenius(pseudo_inverse(f).matrix(), inv), 1e-12);
  }
}

TEST(PseudoInverse, CutoffDropsTinyEigenvalues) {
  Vector d(3);
  d << 1.0, 1e-13, -2.0;
  const SymOp p = pseudo_inverse(SymOp(d.asDiagonal().toDenseMatrix()));
  EXPECT_DOUBLE_EQ(p.matrix()(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(p.matrix()(2, 2), -0.5);
}

TEST(PseudoInverse, PenroseIdentitiesProperty) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(1, 8);
  for (int trial = 0; trial < 1000; ++trial) {
    const SymOp f = test::random_symmetric(dim(rng), rng);
    const Matrix& a = f.matrix();
    const Matrix p = pseudo_inverse(f).matrix();
    const double na = std::max(a.norm(), 1e-300);
    const double np = std::max(p.norm(), 1e-300);
    EXPECT_LE((a * p * a - a).norm() / na, 1e-9);
    EXPECT_LE((p * a * p - p).norm() / np, 1e-9);
    EXPECT_LE((a * p - (a * p).transpose()).norm(), 1e-9);
    EXPECT_LE((p * a - (p * a).transpose()).norm(), 1e-9);
  }
}

TEST(PinvDiagnostics, ReportsRankAndCondition) {
  Vector d(3);
  d << 4.0, 0.0, -0.5;
  const PinvDiagnostics pd = pinv_diagnostics(SymOp(d.asDiagonal().toDenseMatrix()));
  EXPECT_EQ(pd.rank, 2);
  EXPECT_DOUBLE_EQ(pd.condition(), 8.0);
}

TEST(MaxplusSup, NegativeIdentity) {
  Vector xi(2);
  xi << 1.0, 0.0;
  const SupResult r = maxplus_sup_quad(SymOp::identity(2, -1.0), xi);
  EXPECT_DOUBLE_EQ(r.value, 0.5);
  EXPECT_NEAR(r.argmax(0), 1.0, 1e-15);
  EXPECT_NEAR(r.argmax(1), 0.0, 1e-15);
}

TEST(MaxplusSup, WeightScalesValueOnly) {
  Vector xi(2);
  xi << 1.0, -2.0;
  const SymOp f = SymOp::identity(2, -2.0);
  const SupResult a = maxplus_sup_quad(f, xi, 1.0);
  const SupResult b = maxplus_sup_quad(f, xi, 0.25);
  EXPECT_DOUBLE_EQ(b.value, 0.25 * a.value);
  EXPECT_TRUE((a.argmax - b.argmax).isZero());
}

TEST(MaxplusSup, PositiveEigenvalueIsUnbounded) {
  Matrix d = Matrix::Identity(2, 2);
  d(1, 1) = -1.0;
  EXPECT_THROW(maxplus_sup_quad(SymOp(d), Vector::Zero(2)), Unbounded);
}

TEST(MaxplusSup, KernelComponentIsUnbounded) {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = -1.0;
  Vector xi(2);
  xi << 0.0, 1.0;
  EXPECT_THROW(maxplus_sup_quad(SymOp(d), xi), Unbounded);
  xi << 3.0, 0.0;
  EXPECT_DOUBLE_EQ(maxplus_sup_quad(SymOp(d), xi).value, 4.5);
}

TEST(MaxplusSup, ArgmaxAttainsValue) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix g = gaussian(4, 4, rng);
    const QuadForm q{SymOp(-(g * g.transpose()) - 0.1 * Matrix::Identity(4, 4)), gaussian(4, rng),
                     0.3};
    const SupResult r = q.sup();
    EXPECT_NEAR(q(r.argmax), r.value, 1e-9 * std::max(1.0, std::abs(r.value)));
    // no random direction improves on the argmax
    for (int k = 0; k < 5; ++k) EXPECT_LE(q(r.argmax + 0.1 * gaussian(4, rng)), r.value + 1e-12);
  }
}

namespace {

/// Zooming grid search for sup of a concave quadratic on the box |x_i| <= r.
double grid_sup(const QuadForm& q, double r) {
  const Eigen::Index d = q.xi.size();
  Vector center = Vector::Zero(d);
  double best = -std::numeric_limits<double>::infinity();
  const int pts = 21;
  for (int round = 0; round < 40; ++round) {
    Vector best_x = center;
    Eigen::VectorXi idx = Eigen::VectorXi::Zero(d);
    while (true) {
      Vector x(d);
      for (Eigen::Index i = 0; i < d; ++i) x(i) = center(i) + r * (2.0 * idx(i) / (pts - 1) - 1.0);
      const double v = q(x);
      if (v > best) {
        best = v;
        best_x = x;
      }
      Eigen::Index k = 0;
      while (k < d && ++idx(k) == pts) idx(k++) = 0;
      if (k == d) break;
    }
    center = best_x;
    r *= 0.5;
  }
  return best;
}

}  // namespace

TEST(MaxplusSup, MatchesBruteForceGrid) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 3);
  std::uniform_real_distribution<double> lam(0.5, 3.0);
  std::bernoulli_distribution drop(0.25);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = dim(rng);
    Vector eigs(d);
    Vector mask(d);
    for (int i = 0; i < d; ++i) {
      const bool kernel = d > 1 && i == 0 && drop(rng);
      eigs(i) = kernel ? 0.0 : -lam(rng);
      mask(i) = kernel ? 0.0 : 1.0;
    }
    const Matrix u = test::orthogonal(d, rng);
    const SymOp f(u * eigs.asDiagonal() * u.transpose());
    const Vector xi = u * mask.cwiseProduct(gaussian(d, rng));
    const QuadForm q{f, xi, 0.0};
    const double r = 2.0 * xi.norm() / 0.5 + 1.0;
    EXPECT_NEAR(q.sup().value, grid_sup(q, r), 1e-4);
  }
}

TEST(RelFrobenius, Basic) {
  const Matrix a = Matrix::Identity(2, 2);
  EXPECT_DOUBLE_EQ(rel_frobenius(a, a), 0.0);
  EXPECT_DOUBLE_EQ(rel_frobenius(2.0 * a, a), 1.0);
}
