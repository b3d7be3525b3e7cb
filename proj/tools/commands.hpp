#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mpr/mpr.hpp"

namespace mpr::cli {

struct Globals {
  Config config;
  std::filesystem::path out = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  std::ostream* log = &std::cerr;
};

namespace detail {

inline std::filesystem::path prepare_out(const Globals& g) {
  std::error_code ec;
  std::filesystem::create_directories(g.out, ec);
  if (ec) throw ConfigError("--out: cannot create '" + g.out.string() + "': " + ec.message());
  return g.out;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream f(p);
  if (!f) throw ConfigError("cannot write '" + p.string() + "'");
  return f;
}

inline double seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Admissible initial data: `mtilde.files` (CSV paths) or `mtilde.count`
/// random draws M + eps I + h G G' seeded from --seed.
inline std::vector<SymOp> mtilde_batch(const Globals& g, const ProblemSpec& spec) {
  const auto files = g.config.get_strings("mtilde.files");
  std::vector<SymOp> out;
  if (!files.empty()) {
    for (const auto& f : files) {
      SymOp m = SymOp::checked(csv::load_matrix(f), 1e-10);
      if (m.dim() != spec.dim()) throw ConfigError("mtilde.files: '" + f + "' has wrong dimension");
      out.push_back(std::move(m));
    }
    return out;
  }
  const long count = g.config.get_int("mtilde.count", 5);
  const double eps = g.config.get_double("mtilde.eps", 0.2);
  const long rank = g.config.get_int("mtilde.rank", 2);
  if (count < 1) throw ConfigError("mtilde.count: must be >= 1");
  if (!(eps > 0.0)) throw ConfigError("mtilde.eps: must be positive");
  if (rank < 0) throw ConfigError("mtilde.rank: must be >= 0");
  std::mt19937_64 rng(g.seed);
  for (long i = 0; i < count; ++i) {
    out.push_back(perturbed_initial(spec.M, eps, static_cast<int>(std::min<long>(rank, spec.dim())),
                                    rng, spec.weight));
  }
  return out;
}

inline void report_escape(std::ostream& os, const EscapeReport& r) {
  os << "EscapeReport: escaped=" << (r.escaped ? "true" : "false")
     << " t_escape_lower=" << csv::format_real(r.t_escape_lower) << '\n';
  const std::size_t n = r.norm_history.size();
  const std::size_t from = n > 8 ? n - 8 : 0;
  for (std::size_t i = from; i < n; ++i) {
    os << "  t=" << csv::format_real(r.norm_history[i].first)
       << " |P|_F=" << csv::format_real(r.norm_history[i].second) << '\n';
  }
}

}  // namespace detail

// ---------------------------------------------------------------- solve

struct SolveArgs {
  std::optional<double> t;
  std::optional<std::string> target;
};

/// trajectory.csv: t,frob_P,frob_Q,frob_R,margin_P_minus_M (Q, R empty for
/// direct runs); P_final.csv: last stored P; seed runs also dump the full
/// checkpoint record to seed_trajectory.txt.
inline int cmd_solve(const Globals& g, const SolveArgs& args) {
  const ProblemSpec spec = load_problem(g.config);
  const double t = args.t.value_or(g.config.get_double("solve.t", 0.5));
  const std::string target = args.target.value_or(g.config.get_string("solve.target", "seed"));
  if (!(t >= 0.0)) throw ConfigError("solve.t: must be non-negative");
  if (target != "seed" && target != "direct") {
    throw ConfigError("solve.target: expected 'seed' or 'direct', got '" + target + "'");
  }
  const RiccatiOptions opts = RiccatiOptions::from(g.config);
  const auto out = detail::prepare_out(g);

  const SymOp p0 = target == "seed" ? spec.M : detail::mtilde_batch(g, spec).front();
  SeedTrajectory traj;
  if (t == 0.0) {
    if (target == "direct" && !(coercivity_margin(p0 - spec.M) > 0.0)) {
      throw NotAdmissible("M~ - M is not coercive");
    }
    traj.spec = spec;
    traj.times = {0.0};
    traj.P = {p0};
    traj.margin = {coercivity_margin(p0 - spec.M)};
    if (target == "seed") {
      traj.Q = {LinOp(-spec.M.matrix())};
      traj.R = {spec.M};
    }
  } else if (target == "seed") {
    traj = integrate_seed(spec, t, opts);
  } else {
    traj = integrate_direct_trajectory(spec, p0, t, opts);
  }

  {
    auto f = detail::open_out(out / "trajectory.csv");
    f << "t,frob_P,frob_Q,frob_R,margin_P_minus_M\n";
    for (std::size_t k = 0; k < traj.times.size(); ++k) {
      f << csv::format_real(traj.times[k]) << ',' << csv::format_real(traj.P[k].norm()) << ',';
      if (traj.has_aux()) {
        f << csv::format_real(traj.Q[k].norm()) << ',' << csv::format_real(traj.R[k].norm());
      } else {
        f << ',';
      }
      f << ',' << csv::format_real(traj.margin[k]) << '\n';
    }
  }
  if (!traj.P.empty()) csv::save_matrix((out / "P_final.csv").string(), traj.P.back().matrix());
  if (t > 0.0 && traj.has_aux()) save_trajectory((out / "seed_trajectory.txt").string(), traj);

  if (traj.stop == StopReason::FiniteEscape) {
    detail::report_escape(*g.log, traj.escape);
    throw FiniteEscape(traj.escape);
  }
  if (traj.stop == StopReason::CoercivityLost) {
    throw CoercivityLost(traj.coercivity_fail_t, traj.coercivity_fail_margin,
                         "solve stopped; tau* = " + csv::format_real(traj.tau_star));
  }
  *g.log << "solve: " << spec.label << ", target " << target << ", t = " << t << ", "
         << traj.times.size() << " checkpoints written to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- recipe

struct RecipeArgs {
  std::optional<double> t;
  std::optional<int> kappa;
  std::optional<std::string> mode;
};

inline RecipeSettings recipe_settings(const Globals& g, const RecipeArgs& args) {
  Config cfg = g.config;
  if (args.t) cfg.set("recipe.t", csv::format_real(*args.t));
  if (args.kappa) cfg.set("recipe.kappa", std::to_string(*args.kappa));
  if (args.mode) cfg.set("recipe.mode", *args.mode);
  return RecipeSettings::from(cfg);
}

/// Writes kernel.csv, P_tilde_<i>.csv per initial datum and recipe_report.txt.
inline int cmd_recipe(const Globals& g, const RecipeArgs& args) {
  const ProblemSpec spec = load_problem(g.config);
  RecipeSettings settings = recipe_settings(g, args);
  const auto kernel_in = g.config.find("recipe.kernel_in");
  const auto out = detail::prepare_out(g);
  std::ostringstream report;
  report << "problem: " << spec.label << '\n';

  if (!kernel_in && g.config.get_bool("recipe.monitor", true)) {
    RiccatiOptions mon = settings.riccati;
    mon.checkpoints = static_cast<int>(g.config.get_int("recipe.monitor_checkpoints", 64));
    const SeedTrajectory probe = integrate_seed(spec, settings.t, mon);
    if (probe.tau_star < settings.t) {
      if (!(probe.tau_star > 0.0)) {
        if (probe.stop == StopReason::FiniteEscape) throw FiniteEscape(probe.escape);
        throw CoercivityLost(probe.coercivity_fail_t, probe.coercivity_fail_margin,
                             "[step 1] no validated horizon");
      }
      *g.log << "warning: recipe.t = " << settings.t << " exceeds the monitored horizon tau* = "
             << probe.tau_star << "; clamping t to tau*\n";
      report << "clamped: t " << csv::format_real(settings.t) << " -> "
             << csv::format_real(probe.tau_star) << '\n';
      settings.t = probe.tau_star;
    }
  }

  Recipe recipe(spec, settings);
  if (kernel_in) {
    recipe.adopt(load_kernel(*kernel_in));
  } else {
    recipe.prepare();
  }
  const std::vector<SymOp> batch = detail::mtilde_batch(g, spec);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<Reconstruction> results = recipe.solve_batch(batch, g.threads);
  const double step3 = detail::seconds(t0);

  save_kernel((out / "kernel.csv").string(), recipe.kernel());
  for (std::size_t i = 0; i < results.size(); ++i) {
    csv::save_matrix((out / ("P_tilde_" + std::to_string(i) + ".csv")).string(),
                     results[i].P.matrix());
  }
  report << "t: " << csv::format_real(settings.t) << '\n'
         << "kappa: " << settings.kappa << '\n'
         << "mode: " << (settings.mode == IterationMode::Linear ? "linear" : "doubling") << '\n'
         << "compositions: " << recipe.compositions() << '\n'
         << "kernel: " << (kernel_in ? "loaded from " + *kernel_in : std::string("computed")) << '\n'
         << "step1_wall_s: " << csv::format_real(recipe.seed_seconds()) << '\n'
         << "step2_wall_s: " << csv::format_real(recipe.iterate_seconds()) << '\n'
         << "step3_wall_s: " << csv::format_real(step3) << '\n'
         << "index,cond_B22_minus_N,cond_M_minus_Napplied,margin_P_minus_M\n";
  for (std::size_t i = 0; i < results.size(); ++i) {
    report << i << ',' << csv::format_real(results[i].inner_condition) << ','
           << csv::format_real(results[i].outer_condition) << ','
           << csv::format_real(results[i].margin) << '\n';
  }
  detail::open_out(out / "recipe_report.txt") << report.str();
  *g.log << "recipe: " << results.size() << " reconstructions at t = " << settings.t << " ("
         << recipe.compositions() << " compositions) written to " << out.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchRecord {
  std::string method;
  double t = 0.0;
  int kappa_or_k = 0;
  int compositions = 0;
  double wall_time_s = 0.0;
  double rel_error = 0.0;
};

inline constexpr const char* kBenchHeader = "method,t,kappa_or_k,compositions,wall_time_s,rel_error";

inline void write_bench(std::ostream& os, const std::vector<BenchRecord>& rows) {
  os << kBenchHeader << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << csv::format_real(r.t) << ',' << r.kappa_or_k << ',' << r.compositions
       << ',' << csv::format_real(r.wall_time_s) << ',' << csv::format_real(r.rel_error) << '\n';
  }
}

struct BenchSummary {
  bool doubling_dominates = true;
  bool direct_monotone = true;
  std::string text;
};

/// Doubling vs linear at each kappa = 2^k >= 4 where both reach 1e-4, and the
/// error trend of direct rows against tolerance.
inline BenchSummary summarize_bench(const std::vector<BenchRecord>& rows) {
  BenchSummary s;
  std::ostringstream os;
  auto find = [&](const std::string& method, int key) -> const BenchRecord* {
    for (const auto& r : rows)
      if (r.method == method && r.kappa_or_k == key) return &r;
    return nullptr;
  };
  for (int k = 2; k <= 30; ++k) {
    const BenchRecord* dbl = find("recipe-doubling", k);
    const BenchRecord* lin = find("recipe-linear", 1 << k);
    if (!dbl || !lin) continue;
    const bool matched = dbl->rel_error <= 1e-4 && lin->rel_error <= 1e-4;
    const bool fewer = dbl->compositions < lin->compositions;
    if (!(matched && fewer)) s.doubling_dominates = false;
    os << "kappa=" << (1 << k) << ": doubling " << dbl->compositions << " vs linear "
       << lin->compositions << " compositions; errors " << csv::format_real(dbl->rel_error)
       << " / " << csv::format_real(lin->rel_error)
       << (matched ? (fewer ? " -> doubling dominates" : " -> doubling does NOT dominate")
                   : " -> error above 1e-4, not matched")
       << '\n';
  }
  std::vector<const BenchRecord*> direct;
  for (const auto& r : rows)
    if (r.method == "direct-rk45") direct.push_back(&r);
  std::sort(direct.begin(), direct.end(),
            [](auto* a, auto* b) { return a->kappa_or_k < b->kappa_or_k; });
  for (std::size_t i = 1; i < direct.size(); ++i) {
    if (!(direct[i]->rel_error <= direct[i - 1]->rel_error)) s.direct_monotone = false;
  }
  os << "direct-rk45 error decreases with tolerance: " << (s.direct_monotone ? "yes" : "no") << '\n';
  os << "recipe-doubling dominates recipe-linear in compositions: "
     << (s.doubling_dominates ? "yes" : "no") << '\n';
  s.text = os.str();
  return s;
}

/// Sweep: direct RK45 at rtol 10^-j (kappa_or_k = j), recipe-linear over
/// kappa, recipe-doubling over k. Errors are relative Frobenius against a
/// tight direct reference; wall time covers compute only.
inline std::vector<BenchRecord> run_bench(const Globals& g) {
  const ProblemSpec spec = load_problem(g.config);
  const double t = g.config.get_double("bench.t", 0.4);
  if (!(t > 0.0)) throw ConfigError("bench.t: must be positive");
  const auto exponents = g.config.get_ints("bench.rtol_exponents", {3, 4, 5, 6, 7, 8});
  const auto kappas = g.config.get_ints("bench.kappas", {2, 4, 8, 16});
  const auto doublings = g.config.get_ints("bench.doublings", {1, 2, 3, 4});
  const SymOp mt = detail::mtilde_batch(g, spec).front();

  RiccatiOptions ref_opts;
  ref_opts.rtol = g.config.get_double("bench.reference_rtol", 1e-12);
  ref_opts.atol = g.config.get_double("bench.reference_atol", 1e-14);
  const SymOp reference = integrate_direct(spec, mt, t, ref_opts);

  std::vector<BenchRecord> rows;
  for (long j : exponents) {
    if (j < 1 || j > 14) throw ConfigError("bench.rtol_exponents: entries must be in [1, 14]");
    RiccatiOptions o;
    o.rtol = std::pow(10.0, -static_cast<double>(j));
    o.atol = o.rtol * 1e-2;
    const auto t0 = std::chrono::steady_clock::now();
    const SymOp p = integrate_direct(spec, mt, t, o);
    const double wall = detail::seconds(t0);
    rows.push_back({"direct-rk45", t, static_cast<int>(j), 0, wall,
                    rel_frobenius(p.matrix(), reference.matrix())});
  }
  RecipeSettings base = RecipeSettings::from(g.config);
  base.t = t;
  auto recipe_row = [&](const char* method, IterationMode mode, int kappa, int key) {
    RecipeSettings s = base;
    s.mode = mode;
    s.kappa = kappa;
    const auto t0 = std::chrono::steady_clock::now();
    Recipe r(spec, s);
    r.prepare();
    const SymOp p = r.solve(mt).P;
    const double wall = detail::seconds(t0);
    rows.push_back({method, t, key, r.compositions(), wall,
                    rel_frobenius(p.matrix(), reference.matrix())});
  };
  for (long kappa : kappas) {
    if (kappa < 1) throw ConfigError("bench.kappas: entries must be >= 1");
    recipe_row("recipe-linear", IterationMode::Linear, static_cast<int>(kappa), static_cast<int>(kappa));
  }
  for (long k : doublings) {
    if (k < 0 || k > 20) throw ConfigError("bench.doublings: entries must be in [0, 20]");
    recipe_row("recipe-doubling", IterationMode::Doubling, 1 << k, static_cast<int>(k));
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [](const BenchRecord& a, const BenchRecord& b) { return a.wall_time_s < b.wall_time_s; });
  return rows;
}

inline int cmd_bench(const Globals& g) {
  const std::vector<BenchRecord> rows = run_bench(g);
  const auto out = detail::prepare_out(g);
  {
    auto f = detail::open_out(out / "bench.csv");
    write_bench(f, rows);
  }
  const BenchSummary s = summarize_bench(rows);
  detail::open_out(out / "bench_summary.txt") << s.text;
  std::cout << s.text;
  return 0;
}

// ---------------------------------------------------------------- verify

struct CheckResult {
  std::string name;
  double metric = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

struct VerifyArgs {
  std::optional<std::string> only;
  std::optional<std::string> trajectory;
};

inline const std::vector<std::string>& check_names() {
  static const std::vector<std::string> names = {
      "recipe-oracle",  "semigroup",     "doubling-linear", "duality-formulas",
      "duality-roundtrip", "value-identity", "suboptimality", "payoff-deficit",
      "maxplus-sup",    "penrose",       "mild-residual",   "coercivity",
      "finite-escape"};
  return names;
}

namespace detail {

struct VerifyContext {
  const Globals& g;
  ProblemSpec spec;
  double t_value;
  std::optional<std::string> trajectory_path;
  std::optional<SeedTrajectory> traj;

  const SeedTrajectory& seed() {
    if (!traj) {
      if (trajectory_path) {
        traj = load_trajectory(*trajectory_path, spec);
      } else {
        RiccatiOptions opts = RiccatiOptions::from(g.config);
        opts.extra_times = {t_value};
        traj = integrate_seed(spec, g.config.get_double("verify.horizon", 0.5), opts);
      }
    }
    return *traj;
  }
};

inline Matrix rand_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
  return m;
}

inline double triple_rel(const KernelTriple& a, const KernelTriple& b) {
  return std::max({rel_frobenius(a.B11.matrix(), b.B11.matrix()), rel_frobenius(a.B12, b.B12),
                   rel_frobenius(a.B22.matrix(), b.B22.matrix())});
}

inline CheckResult run_check(const std::string& name, VerifyContext& ctx) {
  const Config& cfg = ctx.g.config;
  std::mt19937_64 rng(ctx.g.seed);
  CheckResult r{name, 0.0, 0.0, false};
  if (name == "recipe-oracle") {
    r.tolerance = 1e-5;
    const double t = cfg.get_double("recipe.t", 0.4);
    const auto kappas = cfg.get_ints("verify.kappas", {1, 2, 4, 8, 16});
    for (const SymOp& mt : mtilde_batch(ctx.g, ctx.spec)) {
      const SymOp direct = integrate_direct(ctx.spec, mt, t);
      for (long kappa : kappas) {
        RecipeSettings s = RecipeSettings::from(cfg);
        s.t = t;
        s.kappa = static_cast<int>(kappa);
        s.mode = IterationMode::Linear;
        Recipe recipe(ctx.spec, s);
        recipe.prepare();
        r.metric = std::max(r.metric, rel_frobenius(recipe.solve(mt).P.matrix(), direct.matrix()));
      }
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "semigroup" || name == "doubling-linear") {
    RiccatiOptions opts = RiccatiOptions::from(cfg);
    const SeedTrajectory traj = integrate_seed(ctx.spec, 0.4, opts);
    if (name == "semigroup") {
      r.tolerance = 1e-6;
      for (double delta : {0.05, 0.1}) {
        const KernelTriple one = seed_kernel(traj, delta);
        r.metric = std::max(r.metric, triple_rel(compose(one, one), seed_kernel(traj, 2 * delta)));
      }
    } else {
      r.tolerance = 1e-8;
      const KernelTriple b = seed_kernel(traj, 0.05);
      const Propagation lin = iterate_linear(b, 8);
      const Propagation dbl = iterate_doubling(b, 3);
      r.metric = triple_rel(lin.kernel, dbl.kernel);
      if (lin.compositions != 7 || dbl.compositions != 3) r.metric = INFINITY;
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "duality-formulas" || name == "duality-roundtrip") {
    // 200 random admissible M~: agreement of the two dual formulas, or the
    // inverse-dual round trip back to M~
    const bool formulas = name == "duality-formulas";
    r.tolerance = formulas ? 1e-12 : 1e-10;
    const int rank = static_cast<int>(std::min<Eigen::Index>(3, ctx.spec.dim()));
    for (int i = 0; i < 200; ++i) {
      const SymOp mt = perturbed_initial(ctx.spec.M, 0.2, rank, rng, ctx.spec.weight);
      double cross = 0.0;
      const DualQuad nt = dual_of_terminal(mt, ctx.spec.M, {}, &cross);
      r.metric = std::max(r.metric, formulas ? cross
                                             : rel_frobenius(inverse_dual(nt, ctx.spec.M).matrix(),
                                                             mt.matrix()));
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "value-identity") {
    r.tolerance = 1e-4;
    const SeedTrajectory& traj = ctx.seed();
    const long pairs = cfg.get_int("verify.pairs", 20);
    for (long i = 0; i < pairs; ++i) {
      const Vector x = rand_matrix(ctx.spec.dim(), 1, rng).col(0);
      const Vector z = rand_matrix(ctx.spec.dim(), 1, rng).col(0);
      const double w = value_quadratic(traj, ctx.t_value, x, z);
      const double j = simulate_closed_loop(traj, ctx.t_value, x, z).payoff;
      r.metric = std::max(r.metric, std::abs(j - w) / std::max(1.0, std::abs(w)));
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "suboptimality") {
    r.tolerance = 1e-6;
    const SeedTrajectory& traj = ctx.seed();
    const Vector x = rand_matrix(ctx.spec.dim(), 1, rng).col(0);
    const Vector z = rand_matrix(ctx.spec.dim(), 1, rng).col(0);
    ProbeOptions po;
    po.amplitude = cfg.get_double("verify.amplitude", 0.5);
    po.intervals = static_cast<int>(cfg.get_int("verify.intervals", 16));
    const ProbeResult pr = suboptimality_probe(traj, ctx.t_value, x, z,
                                               static_cast<int>(cfg.get_int("verify.trials", 100)),
                                               ctx.g.seed, po);
    r.metric = pr.max_excess;
    r.pass = r.metric <= r.tolerance;
  } else if (name == "payoff-deficit") {
    r.tolerance = 0.05;
    const ProblemSpec toy = scalar_problem(-1.0, 1.0, 1.0, -0.1);
    RiccatiOptions opts;
    opts.extra_times = {0.3};
    const SeedTrajectory traj = integrate_seed(toy, 0.5, opts);
    std::normal_distribution<double> normal(0.0, 0.5);
    std::vector<Vector> eta(8, Vector::Zero(1));
    for (auto& e : eta) e(0) = normal(rng);
    const ProbeTrial pt = probe_with(traj, 0.3, Vector::Constant(1, 1.0), Vector::Constant(1, -0.5), eta);
    r.metric = std::abs(-pt.excess - pt.deficit) / std::max(pt.deficit, 1e-300);
    r.pass = r.metric <= r.tolerance;
  } else if (name == "maxplus-sup") {
    r.tolerance = 1e-4;
    // concave quadratics with known spectrum, against a zooming grid search
    std::uniform_int_distribution<int> dim(1, 3);
    std::uniform_real_distribution<double> lam(0.5, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
      const int d = dim(rng);
      Eigen::HouseholderQR<Matrix> qr(rand_matrix(d, d, rng));
      const Matrix u = qr.householderQ() * Matrix::Identity(d, d);
      Vector eig(d);
      for (int i = 0; i < d; ++i) eig(i) = -lam(rng);
      const QuadForm q{SymOp(u * eig.asDiagonal() * u.transpose()), rand_matrix(d, 1, rng).col(0), 0.0};
      double radius = 4.0 * q.xi.norm() + 1.0;
      Vector center = Vector::Zero(d);
      double best = -INFINITY;
      for (int round = 0; round < 40; ++round) {
        Vector best_x = center;
        Eigen::VectorXi idx = Eigen::VectorXi::Zero(d);
        while (true) {
          Vector x(d);
          for (int i = 0; i < d; ++i) x(i) = center(i) + radius * (idx(i) / 10.0 - 1.0);
          if (const double v = q(x); v > best) {
            best = v;
            best_x = x;
          }
          int k = 0;
          while (k < d && ++idx(k) == 21) idx(k++) = 0;
          if (k == d) break;
        }
        center = best_x;
        radius *= 0.5;
      }
      r.metric = std::max(r.metric, std::abs(q.sup().value - best));
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "penrose") {
    r.tolerance = 1e-9;
    std::uniform_int_distribution<int> dim(1, 8);
    for (int trial = 0; trial < 1000; ++trial) {
      const int d = dim(rng);
      std::uniform_int_distribution<int> rank_d(0, d);
      const Matrix g = rand_matrix(d, rank_d(rng), rng);
      const Matrix h = rand_matrix(d, d, rng);
      const SymOp f(g * g.transpose() - 0.5 * (h.leftCols(g.cols()) * h.leftCols(g.cols()).transpose()));
      const Matrix& a = f.matrix();
      const Matrix p = pseudo_inverse(f).matrix();
      const double na = std::max(a.norm(), 1e-300), np = std::max(p.norm(), 1e-300);
      r.metric = std::max({r.metric, (a * p * a - a).norm() / na, (p * a * p - p).norm() / np,
                           (a * p - (a * p).transpose()).norm(), (p * a - (p * a).transpose()).norm()});
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "mild-residual") {
    r.tolerance = 1e-5;
    const SeedTrajectory& traj = ctx.seed();
    const auto res = mild_residual_profile(traj);
    for (std::size_t k = 1; k < res.size(); ++k) {
      r.metric = std::max(r.metric, res[k] / std::max(traj.P[k].norm(), 1e-300));
    }
    r.pass = r.metric <= r.tolerance;
  } else if (name == "coercivity") {
    // metric: smallest margin of P - M (and of both certificate halves) over (0, tau*]
    const SeedTrajectory& traj = ctx.seed();
    r.metric = INFINITY;
    for (std::size_t k = 1; k < traj.times.size(); ++k) {
      const auto cert = semiconvexity_certificate(traj.P[k], ctx.spec.M);
      r.metric = std::min({r.metric, traj.margin[k], cert.margin_upper, cert.margin_lower});
    }
    const HorizonBound hb = conservative_horizon(ctx.spec);
    r.pass = r.metric > r.tolerance && hb.tau <= traj.tau_star;
  } else if (name == "finite-escape") {
    // metric: t_escape_lower for p' = p^2, p(0) = 1; pass iff in [0.95, 1]
    r.tolerance = 0.05;
    const SeedTrajectory traj = integrate_seed(scalar_problem(0.0, 1.0, 0.0, 1.0, false), 2.0);
    r.metric = traj.escape.t_escape_lower;
    r.pass = traj.stop == StopReason::FiniteEscape && r.metric >= 1.0 - r.tolerance && r.metric <= 1.0;
  } else {
    throw ConfigError("--only: unknown check '" + name + "'");
  }
  return r;
}

}  // namespace detail

inline void write_checks(std::ostream& os, const std::vector<CheckResult>& rows) {
  os << "check_name,metric,tolerance,status\n";
  for (const auto& r : rows) {
    os << r.name << ',' << csv::format_real(r.metric) << ',' << csv::format_real(r.tolerance) << ','
       << (r.pass ? "pass" : "fail") << '\n';
  }
}

inline std::vector<CheckResult> run_verify(const Globals& g, const VerifyArgs& args) {
  detail::VerifyContext ctx{g, load_problem(g.config), g.config.get_double("verify.t", 0.3),
                            args.trajectory, std::nullopt};
  if (args.trajectory) ctx.seed();  // load errors surface before any check runs
  std::vector<std::string> names = check_names();
  if (args.only) {
    if (std::find(names.begin(), names.end(), *args.only) == names.end()) {
      throw ConfigError("--only: unknown check '" + *args.only + "'");
    }
    names = {*args.only};
  }
  std::vector<CheckResult> rows;
  for (const auto& n : names) rows.push_back(detail::run_check(n, ctx));
  return rows;
}

inline int cmd_verify(const Globals& g, const VerifyArgs& args) {
  const std::vector<CheckResult> rows = run_verify(g, args);
  const auto out = detail::prepare_out(g);
  {
    auto f = detail::open_out(out / "verify.csv");
    write_checks(f, rows);
  }
  write_checks(std::cout, rows);
  const bool ok = std::all_of(rows.begin(), rows.end(), [](const CheckResult& r) { return r.pass; });
  return ok ? 0 : 1;
}

}  // namespace mpr::cli
