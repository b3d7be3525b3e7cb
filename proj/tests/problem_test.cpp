#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace mpr;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("mpr_problem_test_" + name);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Config, ParsesKeyValueWithComments) {
  const Config cfg = Config::parse("# header\n a = 1.5 \nb=hello # trailing\n\nlist = 1, 2,3\n");
  EXPECT_DOUBLE_EQ(cfg.get_double("a", 0.0), 1.5);
  EXPECT_EQ(cfg.get_string("b", ""), "hello");
  EXPECT_EQ(cfg.get_ints("list", {}), (std::vector<long>{1, 2, 3}));
  EXPECT_EQ(cfg.get_int("missing", 7), 7);
}

TEST(Config, ReportsFieldOnBadValue) {
  const Config cfg = Config::parse("grid.n = abc\nflag = maybe\n");
  try {
    cfg.get_int("grid.n", 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("grid.n"), std::string::npos);
  }
  EXPECT_THROW(cfg.get_bool("flag", false), ConfigError);
  EXPECT_THROW(Config::parse("novalue\n"), ConfigError);
  EXPECT_THROW(Config::parse(" = 3\n"), ConfigError);
  EXPECT_THROW(Config::load("/nonexistent/config.conf"), ConfigError);
}

TEST(MatrixCsv, RoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  const Matrix m = test::gaussian(5, 5, rng) * 1e-7;
  std::stringstream ss;
  csv::write_matrix(ss, m);
  EXPECT_EQ(ss.str().substr(0, 6), "dim=5\n");
  const Matrix back = csv::read_matrix(ss);
  EXPECT_TRUE((back.array() == m.array()).all());
}

TEST(MatrixCsv, NonSquareHeader) {
  std::stringstream ss;
  csv::write_matrix(ss, Matrix::Ones(2, 3));
  EXPECT_EQ(ss.str().substr(0, 8), "dim=2x3\n");
  EXPECT_EQ(csv::read_matrix(ss).cols(), 3);
}

TEST(MatrixCsv, RejectsMalformedInput) {
  std::stringstream missing_header("1,2\n3,4\n");
  EXPECT_THROW(csv::read_matrix(missing_header), ConfigError);
  std::stringstream short_rows("dim=2\n1,2\n");
  EXPECT_THROW(csv::read_matrix(short_rows), ConfigError);
  std::stringstream wide("dim=2\n1,2,3\n3,4\n");
  EXPECT_THROW(csv::read_matrix(wide), ConfigError);
  std::stringstream garbage("dim=2\n1,x\n3,4\n");
  EXPECT_THROW(csv::read_matrix(garbage), ConfigError);
}

TEST(Grid, Spacing) {
  const Grid g = Grid::uniform(4);
  EXPECT_DOUBLE_EQ(g.h, 0.4);
  EXPECT_DOUBLE_EQ(g.node(0), 0.4);
  EXPECT_DOUBLE_EQ(g.node(3), 1.6);
  EXPECT_THROW(Grid::uniform(3), ConfigError);
  EXPECT_THROW(Grid::uniform(8, 0.0), ConfigError);
}

TEST(Transport, DriftMatchesStencil) {
  const Grid g = Grid::uniform(6);
  const LinOp a = build_transport_A(g);
  std::mt19937_64 rng(1);
  const Vector x = test::gaussian(6, rng);
  const Vector ax = a * x;
  for (int i = 0; i < 6; ++i) {
    const double prev = i == 0 ? 0.0 : x(i - 1);
    EXPECT_NEAR(ax(i), -2.0 * x(i) - (x(i) - prev) / g.h, 1e-12);
  }
}

TEST(Transport, UpwindDerivativeIsFirstOrderConsistent) {
  // x(eta) = sin(eta) vanishes at the inflow; -(2 + d/deta) x = -2 sin - cos
  double prev_err = 0.0;
  for (int n : {32, 64, 128}) {
    const Grid g = Grid::uniform(n);
    Vector x(n), expect(n);
    for (int i = 0; i < n; ++i) {
      x(i) = std::sin(g.node(i));
      expect(i) = -2.0 * std::sin(g.node(i)) - std::cos(g.node(i));
    }
    const double err = (build_transport_A(g) * x - expect).cwiseAbs().maxCoeff();
    if (prev_err > 0.0) EXPECT_NEAR(prev_err / err, 2.0, 0.2);
    prev_err = err;
  }
}

TEST(Transport, IntegralOperatorIsRankOnePsd) {
  const Grid g = Grid::uniform(8);
  const SymOp c = build_C(g);
  const Vector ones = Vector::Ones(8);
  // (C 1)(eta) = 1/3 * integral of 1 over the interior nodes
  EXPECT_NEAR((c.matrix() * ones)(3), 8 * g.h / 3.0, 1e-14);
  const SymEig e = sym_eig(c);
  EXPECT_NEAR(e.values(0), 8 * g.h / 3.0, 1e-12);
  EXPECT_NEAR(e.values.tail(7).cwiseAbs().maxCoeff(), 0.0, 1e-12);
}

TEST(Transport, AnchorMustBeNegative) {
  const Grid g = Grid::uniform(8);
  EXPECT_THROW(build_M_anchor(g, 0.0), ConfigError);
  EXPECT_THROW(build_M_anchor(g, 0.3), ConfigError);
  const SymOp m = build_M_anchor(g);
  EXPECT_TRUE((m.matrix() + 0.1 * Matrix::Identity(8, 8)).isZero());
}

TEST(Transport, DefaultProblemHasCoerciveDrift) {
  const ProblemSpec spec = transport_problem();
  EXPECT_EQ(spec.dim(), 32);
  EXPECT_DOUBLE_EQ(spec.weight, spec.grid->h);
  // -0.1 (A + A') has eigenvalues 0.1 (4 + 2/h - 2 cos(k pi/(n+1))/h) >= 0.4;
  // M sigma sigma' M = 0.005 I and C >= 0 only add.
  EXPECT_GE(coercivity_margin(anchor_drift(spec)), 0.4);
  EXPECT_GT(spec.a_condition, 1.0);
}

TEST(Transport, AdjointIsTransposeUnderGridProduct) {
  const ProblemSpec spec = transport_problem(12);
  std::mt19937_64 rng(8);
  const Vector x = test::gaussian(12, rng), y = test::gaussian(12, rng);
  EXPECT_NEAR(spec.inner(spec.A * x, y), spec.inner(x, spec.A.transpose() * y), 1e-12);
  EXPECT_NEAR(spec.inner(spec.C.matrix() * x, y), spec.inner(x, spec.C.matrix() * y), 1e-14);
}

TEST(Kernel, RejectsAsymmetricSamples) {
  const Grid g = Grid::uniform(4);
  Matrix k = Matrix::Ones(4, 4);
  EXPECT_NO_THROW(build_kernel_operator(g, k));
  k(0, 1) = 2.0;
  EXPECT_THROW(build_kernel_operator(g, k), ConfigError);
}

TEST(Validate, RejectsIndefiniteCAndSingularA) {
  EXPECT_THROW(scalar_problem(-1.0, 1.0, -1.0, -0.1), ConfigError);
  EXPECT_THROW(scalar_problem(0.0, 1.0, 1.0, -0.1), ConfigError);
  EXPECT_NO_THROW(scalar_problem(-1.0, 1.0, 0.0, -0.1));
  const ProblemSpec singular = scalar_problem(0.0, 1.0, 0.0, 1.0, false);
  EXPECT_TRUE(std::isinf(singular.a_condition));
}

TEST(LoadProblem, TransportFromConfig) {
  const ProblemSpec spec = load_problem(Config::parse("problem.name = transport\ngrid.n = 10\n"));
  EXPECT_EQ(spec.dim(), 10);
  EXPECT_THROW(load_problem(Config::parse("grid.n = 2\n")), ConfigError);
  EXPECT_THROW(load_problem(Config::parse("anchor.m = 0.5\n")), ConfigError);
  EXPECT_THROW(load_problem(Config::parse("problem.name = heat\n")), ConfigError);
  const ProblemSpec s = load_problem(Config::parse("problem.name = scalar\nscalar.a = -2\n"));
  EXPECT_EQ(s.dim(), 1);
  EXPECT_DOUBLE_EQ(s.A(0, 0), -2.0);
}

TEST(LoadProblem, CustomFromCsv) {
  const auto dir = scratch_dir("custom");
  csv::save_matrix((dir / "A.csv").string(), -Matrix::Identity(2, 2));
  csv::save_matrix((dir / "S.csv").string(), Matrix::Identity(2, 2));
  csv::save_matrix((dir / "C.csv").string(), Matrix::Identity(2, 2));
  csv::save_matrix((dir / "M.csv").string(), -0.1 * Matrix::Identity(2, 2));
  Config cfg;
  cfg.set("problem.name", "custom");
  cfg.set("custom.A", (dir / "A.csv").string());
  cfg.set("custom.sigma", (dir / "S.csv").string());
  cfg.set("custom.C", (dir / "C.csv").string());
  cfg.set("custom.M", (dir / "M.csv").string());
  const ProblemSpec spec = load_problem(cfg);
  EXPECT_EQ(spec.dim(), 2);
  EXPECT_DOUBLE_EQ(spec.weight, 1.0);
  cfg.set("custom.C", (dir / "missing.csv").string());
  EXPECT_THROW(load_problem(cfg), ConfigError);
}

TEST(PerturbedInitial, AdmissibleAndReproducible) {
  const SymOp m = SymOp::identity(6, -0.1);
  std::mt19937_64 a(42), b(42);
  const SymOp x = perturbed_initial(m, 0.2, 2, a, 0.5);
  const SymOp y = perturbed_initial(m, 0.2, 2, b, 0.5);
  EXPECT_TRUE((x.matrix().array() == y.matrix().array()).all());
  EXPECT_GE(coercivity_margin(x - m), 0.2 - 1e-12);
}
