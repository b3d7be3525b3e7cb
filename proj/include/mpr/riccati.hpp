#pragma once

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mpr/config.hpp"
#include "mpr/csv.hpp"
#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"
#include "mpr/ode.hpp"
#include "mpr/problem.hpp"

namespace mpr {

/// dP/dt = A'P + PA + P sigma sigma' P + C
inline SymOp riccati_rhs(const SymOp& p, const ProblemSpec& spec) {
  const Matrix& pm = p.matrix();
  const Matrix ap = spec.A.transpose() * pm;
  return SymOp(ap + ap.transpose() + pm * spec.sigma_sigma_t() * pm + spec.C.matrix());
}

struct AuxRates {
  LinOp dQ;
  SymOp dR;
};

/// dQ/dt = A'Q + P sigma sigma' Q,  dR/dt = Q' sigma sigma' Q
inline AuxRates aux_rhs(const SymOp& p, const LinOp& q, const ProblemSpec& spec) {
  const Matrix s = spec.sigma_sigma_t();
  const Matrix sq = s * q;
  return {spec.A.transpose() * q + p.matrix() * sq, SymOp(q.transpose() * sq)};
}

struct RiccatiOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  double escape_ceiling = 1e6;
  double coercivity_eps = 1e-10;
  /// Coercivity of P(t) - M is only enforced for t >= this (P(0) = M).
  double coercivity_t_min = 1e-6;
  /// Uniform checkpoints on [0, t_end] (count of intervals).
  int checkpoints = 128;
  /// Additional times that must be stored exactly.
  std::vector<double> extra_times;
  /// Throw FiniteEscape / CoercivityLost instead of truncating the horizon.
  bool throw_on_failure = false;

  static RiccatiOptions from(const Config& cfg) {
    RiccatiOptions o;
    o.rtol = cfg.get_double("riccati.rtol", o.rtol);
    o.atol = cfg.get_double("riccati.atol", o.atol);
    o.escape_ceiling = cfg.get_double("riccati.escape_ceiling", o.escape_ceiling);
    o.coercivity_eps = cfg.get_double("riccati.coercivity_eps", o.coercivity_eps);
    o.coercivity_t_min = cfg.get_double("riccati.coercivity_t_min", o.coercivity_t_min);
    o.checkpoints = static_cast<int>(cfg.get_int("riccati.checkpoints", o.checkpoints));
    if (!(o.rtol > 0.0) || !(o.atol > 0.0)) throw ConfigError("riccati.rtol/atol: must be positive");
    if (o.checkpoints < 1) throw ConfigError("riccati.checkpoints: must be >= 1");
    if (!(o.escape_ceiling > 0.0)) throw ConfigError("riccati.escape_ceiling: must be positive");
    return o;
  }
};

enum class StopReason { None, FiniteEscape, CoercivityLost };

/// Checkpointed solution of the Riccati system. For the seed run (P(0) = M)
/// the auxiliary Q, R are carried along; for direct runs they are empty.
struct SeedTrajectory {
  ProblemSpec spec;
  std::vector<double> times;
  std::vector<SymOp> P;
  std::vector<LinOp> Q;
  std::vector<SymOp> R;
  std::vector<SymOp> dP;  // dP/dt at the checkpoints, for Hermite interpolation
  std::vector<LinOp> dQ;
  std::vector<double> margin;  // min eig(P(t) - M)
  double t_requested = 0.0;
  double tau_star = 0.0;  // largest validated horizon
  StopReason stop = StopReason::None;
  EscapeReport escape;
  double coercivity_fail_t = 0.0;
  double coercivity_fail_margin = 0.0;
  long steps_accepted = 0;

  bool has_aux() const { return !Q.empty(); }

  /// Index of the checkpoint at time t (relative tolerance 1e-12).
  std::size_t index_of(double t) const {
    const double tol = 1e-12 * std::max(1.0, std::abs(t));
    auto it = std::lower_bound(times.begin(), times.end(), t - tol);
    if (it == times.end() || std::abs(*it - t) > tol) {
      throw ConfigError("trajectory has no checkpoint at t = " + std::to_string(t));
    }
    return static_cast<std::size_t>(it - times.begin());
  }
  bool contains(double t) const {
    const double tol = 1e-12 * std::max(1.0, std::abs(t));
    auto it = std::lower_bound(times.begin(), times.end(), t - tol);
    return it != times.end() && std::abs(*it - t) <= tol;
  }
};

namespace detail {

inline Eigen::Map<const Matrix> block(const Eigen::VectorXd& y, Eigen::Index n, int k) {
  return Eigen::Map<const Matrix>(y.data() + k * n * n, n, n);
}

/// Interior stop times; same merge rule as ode::integrate so both agree.
inline std::vector<double> checkpoint_times(double t_end, const RiccatiOptions& opts) {
  const double gap = 1e-12 * std::max(1.0, std::abs(t_end));
  std::vector<double> ts;
  for (int k = 1; k < opts.checkpoints; ++k) ts.push_back(t_end * k / opts.checkpoints);
  for (double e : opts.extra_times) ts.push_back(e);
  std::erase_if(ts, [&](double e) { return !(e > gap && e < t_end - gap); });
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(), [&](double a, double b) { return b - a <= gap; }),
           ts.end());
  return ts;
}

/// Integrates P (and Q, R when `with_aux`) from p0, storing checkpoints.
inline SeedTrajectory run_riccati(const ProblemSpec& spec, const SymOp& p0, bool with_aux,
                                  double t_end, const RiccatiOptions& opts) {
  if (!(t_end >= 0.0)) throw ConfigError("t_end: must be non-negative");
  const Eigen::Index n = spec.dim();
  const Eigen::Index nn = n * n;
  const Matrix s = spec.sigma_sigma_t();
  const Matrix& c = spec.C.matrix();
  const Matrix at = spec.A.transpose();
  const Matrix& m = spec.M.matrix();

  auto rhs = [&](double, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const auto p = block(y, n, 0);
    const Matrix atp = at * p;
    const Matrix ps = p * s;
    Eigen::Map<Matrix> dp(dy.data(), n, n);
    dp.noalias() = atp + atp.transpose() + ps * p + c;
    if (with_aux) {
      const auto q = block(y, n, 1);
      Eigen::Map<Matrix> dq(dy.data() + nn, n, n);
      Eigen::Map<Matrix> dr(dy.data() + 2 * nn, n, n);
      dq.noalias() = at * q + ps * q;
      const Matrix sq = s * q;
      dr.noalias() = q.transpose() * sq;
    }
  };

  Eigen::VectorXd y0(with_aux ? 3 * nn : nn);
  Eigen::Map<Matrix>(y0.data(), n, n) = p0.matrix();
  if (with_aux) {
    Eigen::Map<Matrix>(y0.data() + nn, n, n) = -m;
    Eigen::Map<Matrix>(y0.data() + 2 * nn, n, n) = m;
  }

  SeedTrajectory traj;
  traj.spec = spec;
  traj.t_requested = t_end;
  const std::vector<double> stops = checkpoint_times(t_end, opts);
  std::size_t next_cp = 0;
  double last_ok_t = 0.0;

  auto store = [&](double t, const Eigen::VectorXd& y, const Eigen::VectorXd& dy, double margin) {
    traj.times.push_back(t);
    traj.P.emplace_back(block(y, n, 0));
    traj.dP.emplace_back(block(dy, n, 0));
    traj.margin.push_back(margin);
    if (with_aux) {
      traj.Q.emplace_back(block(y, n, 1));
      traj.R.emplace_back(block(y, n, 2));
      traj.dQ.emplace_back(block(dy, n, 1));
    }
  };

  auto observer = [&](double t, const Eigen::VectorXd& y, const Eigen::VectorXd& dy) {
    const auto p = block(y, n, 0);
    const double norm = p.norm();
    traj.escape.norm_history.emplace_back(t, norm);
    if (!std::isfinite(norm) || norm > opts.escape_ceiling) {
      traj.stop = StopReason::FiniteEscape;
      traj.escape.escaped = true;
      traj.escape.t_escape_lower = last_ok_t;
      return ode::Verdict::Stop;
    }
    const double margin = coercivity_margin(SymOp(p - m));
    if (t >= opts.coercivity_t_min && margin <= opts.coercivity_eps) {
      traj.stop = StopReason::CoercivityLost;
      traj.coercivity_fail_t = t;
      traj.coercivity_fail_margin = margin;
      return ode::Verdict::Stop;
    }
    last_ok_t = t;
    const bool is_cp = t == 0.0 || t == t_end ||
                       (next_cp < stops.size() && t == stops[next_cp]);
    if (is_cp) {
      store(t, y, dy, margin);
      if (t != 0.0 && t != t_end) ++next_cp;
    }
    return ode::Verdict::Continue;
  };

  ode::Tolerances tol;
  tol.rtol = opts.rtol;
  tol.atol = opts.atol;
  const ode::Result res = ode::integrate(rhs, 0.0, y0, t_end, stops, tol, observer);
  traj.steps_accepted = res.accepted;
  if (res.status == ode::Status::StepUnderflow || res.status == ode::Status::MaxSteps) {
    // The step size collapsed before the ceiling was reached: blow-up.
    traj.stop = StopReason::FiniteEscape;
    traj.escape.escaped = true;
    traj.escape.t_escape_lower = last_ok_t;
  }
  traj.tau_star = traj.times.empty() ? 0.0 : traj.times.back();

  if (opts.throw_on_failure) {
    if (traj.stop == StopReason::FiniteEscape) throw FiniteEscape(traj.escape);
    if (traj.stop == StopReason::CoercivityLost) {
      throw CoercivityLost(traj.coercivity_fail_t, traj.coercivity_fail_margin,
                           "during Riccati integration");
    }
  }
  return traj;
}

}  // namespace detail

/// Coupled (P, Q, R) integration from (M, -M, M). Failures shrink tau_star
/// unless opts.throw_on_failure is set.
inline SeedTrajectory integrate_seed(const ProblemSpec& spec, double t_end,
                                     const RiccatiOptions& opts = {}) {
  if (!(t_end > 0.0)) throw ConfigError("integrate_seed: t_end must be positive");
  return detail::run_riccati(spec, spec.M, true, t_end, opts);
}

/// Direct integration of P~ from an admissible M~, full checkpoint record.
inline SeedTrajectory integrate_direct_trajectory(const ProblemSpec& spec, const SymOp& m_tilde,
                                                  double t_end, RiccatiOptions opts = {}) {
  const double gap = coercivity_margin(m_tilde - spec.M);
  if (!(gap > 0.0)) {
    throw NotAdmissible("M~ - M is not coercive (margin " + std::to_string(gap) + ")");
  }
  opts.coercivity_t_min = 0.0;
  return detail::run_riccati(spec, m_tilde, false, t_end, opts);
}

/// P~(t_end) by direct RK45 from P~(0) = M~. Always throws on failure.
inline SymOp integrate_direct(const ProblemSpec& spec, const SymOp& m_tilde, double t_end,
                              RiccatiOptions opts = {}) {
  opts.throw_on_failure = true;
  opts.checkpoints = 1;
  opts.extra_times.clear();
  if (t_end == 0.0) {
    const double gap = coercivity_margin(m_tilde - spec.M);
    if (!(gap > 0.0)) throw NotAdmissible("M~ - M is not coercive");
    return m_tilde;
  }
  const SeedTrajectory traj = integrate_direct_trajectory(spec, m_tilde, t_end, opts);
  return traj.P.back();
}

/// Checkpoint dump: `trajectory=<seed|direct>`, `checkpoints=<K>`,
/// `t_requested=`, `tau_star=`, then per checkpoint `t=<t>` followed by the
/// matrix blocks P, dP (and Q, dQ, R for seed runs).
inline void write_trajectory(std::ostream& os, const SeedTrajectory& traj) {
  os << "trajectory=" << (traj.has_aux() ? "seed" : "direct") << '\n';
  os << "checkpoints=" << traj.times.size() << '\n';
  os << "t_requested=" << csv::format_real(traj.t_requested) << '\n';
  os << "tau_star=" << csv::format_real(traj.tau_star) << '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    os << "t=" << csv::format_real(traj.times[k]) << '\n';
    csv::write_matrix(os, traj.P[k].matrix());
    csv::write_matrix(os, traj.dP[k].matrix());
    if (traj.has_aux()) {
      csv::write_matrix(os, traj.Q[k]);
      csv::write_matrix(os, traj.dQ[k]);
      csv::write_matrix(os, traj.R[k].matrix());
    }
  }
}

namespace detail {

inline std::string header_value(std::istream& is, const std::string& key, const std::string& source) {
  std::string line;
  while (std::getline(is, line) && trim(line).empty()) {
  }
  line = trim(line);
  if (line.rfind(key + "=", 0) != 0) {
    throw ConfigError(source + ": expected '" + key + "=', got '" + line + "'");
  }
  return line.substr(key.size() + 1);
}

}  // namespace detail

/// Reads a dump written by write_trajectory for the problem `spec`.
inline SeedTrajectory read_trajectory(std::istream& is, const ProblemSpec& spec,
                                      const std::string& source = "trajectory") {
  SeedTrajectory traj;
  traj.spec = spec;
  const std::string kind = detail::header_value(is, "trajectory", source);
  if (kind != "seed" && kind != "direct") throw ConfigError(source + ": unknown kind '" + kind + "'");
  const bool aux = kind == "seed";
  const long count = detail::parse_long(detail::header_value(is, "checkpoints", source), source);
  if (count < 1) throw ConfigError(source + ": no checkpoints");
  traj.t_requested = detail::parse_double(detail::header_value(is, "t_requested", source), source);
  traj.tau_star = detail::parse_double(detail::header_value(is, "tau_star", source), source);
  const Eigen::Index n = spec.dim();
  auto block = [&](const char* what) {
    Matrix m = csv::read_matrix(is, source + " " + what);
    if (m.rows() != n || m.cols() != n) {
      throw ConfigError(source + ": " + what + " block is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", problem dimension is " + std::to_string(n));
    }
    return m;
  };
  for (long k = 0; k < count; ++k) {
    const double t = detail::parse_double(detail::header_value(is, "t", source), source + " t");
    if (!traj.times.empty() && !(t > traj.times.back())) {
      throw ConfigError(source + ": checkpoint times must increase");
    }
    traj.times.push_back(t);
    traj.P.push_back(SymOp::checked(block("P"), 1e-9));
    traj.dP.push_back(SymOp::checked(block("dP"), 1e-6));
    if (aux) {
      traj.Q.push_back(block("Q"));
      traj.dQ.push_back(block("dQ"));
      traj.R.push_back(SymOp::checked(block("R"), 1e-9));
    }
    traj.margin.push_back(coercivity_margin(traj.P.back() - spec.M));
  }
  if (std::abs(traj.times.back() - traj.tau_star) > 1e-12 * std::max(1.0, traj.tau_star)) {
    throw ConfigError(source + ": tau_star does not match the last checkpoint");
  }
  return traj;
}

inline void save_trajectory(const std::string& path, const SeedTrajectory& traj) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write '" + path + "'");
  write_trajectory(f, traj);
}

inline SeedTrajectory load_trajectory(const std::string& path, const ProblemSpec& spec) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open trajectory file '" + path + "'");
  return read_trajectory(f, spec, path);
}

/// Cubic Hermite interpolation on stored checkpoints.
template <class Value, class Deriv>
Matrix hermite(const std::vector<double>& ts, const std::vector<Value>& v,
               const std::vector<Deriv>& dv, double t) {
  auto mat = [](const auto& x) -> const Matrix& {
    if constexpr (std::is_same_v<std::decay_t<decltype(x)>, SymOp>) {
      return x.matrix();
    } else {
      return x;
    }
  };
  if (ts.empty() || t < ts.front() - 1e-12 || t > ts.back() + 1e-12) {
    throw ConfigError("interpolation time " + std::to_string(t) + " outside checkpoint range");
  }
  auto it = std::upper_bound(ts.begin(), ts.end(), t);
  std::size_t j = it == ts.begin() ? 0 : static_cast<std::size_t>(it - ts.begin()) - 1;
  if (j + 1 >= ts.size()) return mat(v.back());
  const double h = ts[j + 1] - ts[j];
  const double u = std::clamp((t - ts[j]) / h, 0.0, 1.0);
  const double u2 = u * u, u3 = u2 * u;
  const double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
  const double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
  return h00 * mat(v[j]) + h10 * h * mat(dv[j]) + h01 * mat(v[j + 1]) + h11 * h * mat(dv[j + 1]);
}

inline Matrix interpolate_P(const SeedTrajectory& traj, double t) {
  return hermite(traj.times, traj.P, traj.dP, t);
}
inline Matrix interpolate_Q(const SeedTrajectory& traj, double t) {
  if (!traj.has_aux()) throw ConfigError("trajectory carries no Q");
  return hermite(traj.times, traj.Q, traj.dQ, t);
}

/// Memoizes e^{A tau} for the repeated lags of a checkpoint grid.
class ExpmCache {
 public:
  explicit ExpmCache(LinOp a) : a_(std::move(a)) {}

  const Matrix& get(double tau) {
    const double tol = 1e-12 * std::max(1.0, std::abs(tau));
    auto it = cache_.lower_bound(tau - tol);
    if (it != cache_.end() && std::abs(it->first - tau) <= tol) return it->second;
    Matrix e = (a_ * tau).exp();
    return cache_.emplace(tau, std::move(e)).first->second;
  }

 private:
  LinOp a_;
  std::map<double, Matrix> cache_;
};

/// |P(t) - [e^{A't} P(0) e^{At} + int_0^t e^{A'(t-s)} (P S P + C)(s) e^{A(t-s)} ds]|_F
/// with per-interval Simpson on the stored checkpoints (midpoints by cubic
/// Hermite interpolation).
inline double mild_residual(const SeedTrajectory& traj, double t, ExpmCache& cache) {
  const std::size_t k = traj.index_of(t);
  if (k == 0) return 0.0;
  if (traj.times.size() < 2) throw ConfigError("mild_residual: insufficient checkpoints");
  const Matrix s = traj.spec.sigma_sigma_t();
  const Matrix& c = traj.spec.C.matrix();
  const double tk = traj.times[k];
  auto integrand = [&](double sj, const Matrix& p) {
    const Matrix& e = cache.get(tk - sj);
    return Matrix(e.transpose() * (p * s * p + c) * e);
  };
  const Matrix& e0 = cache.get(tk);
  Matrix total = e0.transpose() * traj.P[0].matrix() * e0;
  Matrix left = integrand(traj.times[0], traj.P[0].matrix());
  for (std::size_t j = 0; j < k; ++j) {
    const double a = traj.times[j], b = traj.times[j + 1];
    const double mid = 0.5 * (a + b);
    const Matrix pm = interpolate_P(traj, mid);
    Matrix right = integrand(b, traj.P[j + 1].matrix());
    total += (b - a) / 6.0 * (left + 4.0 * integrand(mid, pm) + right);
    left = std::move(right);
  }
  return (traj.P[k].matrix() - total).norm();
}

inline double mild_residual(const SeedTrajectory& traj, double t) {
  ExpmCache cache(traj.spec.A);
  return mild_residual(traj, t, cache);
}

/// Residual at every checkpoint, sharing one exponential cache.
inline std::vector<double> mild_residual_profile(const SeedTrajectory& traj) {
  ExpmCache cache(traj.spec.A);
  std::vector<double> out;
  out.reserve(traj.times.size());
  for (double t : traj.times) out.push_back(mild_residual(traj, t, cache));
  return out;
}

struct HorizonBound {
  double tau = 0.0;
  double a = 0.0;    // |M|
  double b = 0.0;    // |sigma sigma'|
  double m_T = 0.0;  // sup |e^{At}| on [0, T]
  double r = 0.0;
};

inline double operator_norm(const Eigen::Ref<const Matrix>& x) {
  if (x.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(x);
  return svd.singularValues()(0);
}

/// A-priori existence horizon from the contraction argument: with
/// r = 2 M_T^2 a (1 + 1e-6), tau = min(a / (r^2 b + |C|), 1 / (4 r M_T^2 b)),
/// capped at the sampling horizon T.
inline HorizonBound conservative_horizon(const ProblemSpec& spec, double horizon_T = 1.0,
                                         int samples = 64) {
  HorizonBound hb;
  hb.a = operator_norm(spec.M.matrix());
  hb.b = operator_norm(spec.sigma_sigma_t());
  const double c_norm = operator_norm(spec.C.matrix());
  hb.m_T = 1.0;  // t = 0
  for (int i = 1; i <= samples; ++i) {
    const double t = horizon_T * i / samples;
    hb.m_T = std::max(hb.m_T, operator_norm((spec.A * t).exp()));
  }
  const double mt2 = hb.m_T * hb.m_T;
  hb.r = 2.0 * mt2 * hb.a * (1.0 + 1e-6);
  const double denom = hb.r * hb.r * hb.b + c_norm;
  const double first = denom > 0.0 ? hb.a / denom : std::numeric_limits<double>::infinity();
  const double second = hb.b > 0.0 && hb.r > 0.0 ? 1.0 / (4.0 * hb.r * mt2 * hb.b)
                                                 : std::numeric_limits<double>::infinity();
  hb.tau = std::min({first, second, horizon_T});
  return hb;
}

}  // namespace mpr
