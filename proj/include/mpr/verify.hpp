#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "mpr/errors.hpp"
#include "mpr/linalg.hpp"
#include "mpr/ode.hpp"
#include "mpr/riccati.hpp"

namespace mpr {

/// W^z(t,x) = 1/2 <x,P(t)x> + <x,Q(t)z> + 1/2 <z,R(t)z>
inline double value_quadratic(const SeedTrajectory& traj, double t, const Vector& x,
                              const Vector& z) {
  if (!traj.has_aux()) throw ConfigError("value_quadratic: trajectory carries no Q, R");
  const std::size_t k = traj.index_of(t);
  const ProblemSpec& spec = traj.spec;
  return 0.5 * spec.inner(x, traj.P[k].matrix() * x) + spec.inner(x, traj.Q[k] * z) +
         0.5 * spec.inner(z, traj.R[k].matrix() * z);
}

/// psi(x, z) = 1/2 <x - z, M (x - z)>
inline double terminal_payoff(const ProblemSpec& spec, const Vector& x, const Vector& z) {
  const Vector d = x - z;
  return 0.5 * spec.inner(d, spec.M.matrix() * d);
}

struct TrajectoryRecord {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> controls;
  double running_payoff = 0.0;
};

struct ClosedLoop {
  TrajectoryRecord record;
  double payoff = 0.0;
};

struct VerifyTolerances {
  double rtol = 1e-10;
  double atol = 1e-12;
};

namespace detail {

/// Feedback w(s) = sigma' (P(t-s) xi + Q(t-s) z) on the interpolated seed.
struct Feedback {
  const SeedTrajectory& traj;
  double t;

  Vector operator()(double s, const Vector& xi, const Vector& z) const {
    const double lag = std::clamp(t - s, 0.0, t);
    const Matrix p = interpolate_P(traj, lag);
    const Matrix q = interpolate_Q(traj, lag);
    return traj.spec.sigma.transpose() * (p * xi + q * z);
  }
};

inline void check_horizon(const SeedTrajectory& traj, double t) {
  if (!traj.has_aux()) throw ConfigError("trajectory carries no Q, R");
  if (!(t >= 0.0)) throw ConfigError("horizon must be non-negative");
  if (traj.times.empty() || t > traj.times.back() + 1e-12 * std::max(1.0, t)) {
    throw ConfigError("horizon " + std::to_string(t) + " beyond the stored checkpoint range");
  }
}

/// Lags t - t_j for the checkpoints t_j in (0, t): the interpolant has a kink there.
inline std::vector<double> checkpoint_lags(const SeedTrajectory& traj, double t) {
  std::vector<double> out;
  for (double tj : traj.times)
    if (tj > 0.0 && tj < t) out.push_back(t - tj);
  return out;
}

}  // namespace detail

/// Integrates the optimally controlled dynamics xi' = A xi + sigma w*(s) with
/// w* = sigma'(P(t-s) xi + Q(t-s) z), accumulating the running payoff
/// int 1/2<xi,C xi> - 1/2 |w*|^2, then adds psi(xi(t), z).
inline ClosedLoop simulate_closed_loop(const SeedTrajectory& traj, double t, const Vector& x,
                                       const Vector& z, const VerifyTolerances& vt = {}) {
  detail::check_horizon(traj, t);
  const ProblemSpec& spec = traj.spec;
  const Eigen::Index n = spec.dim();
  const Matrix& c = spec.C.matrix();
  detail::Feedback fb{traj, t};

  auto rhs = [&](double s, const Eigen::VectorXd& y, Eigen::VectorXd& dy) {
    const Vector xi = y.head(n);
    const Vector w = fb(s, xi, z);
    dy.head(n) = spec.A * xi + spec.sigma * w;
    dy(n) = 0.5 * spec.inner(xi, c * xi) - 0.5 * spec.inner(w, w);
  };

  ClosedLoop out;
  auto observer = [&](double s, const Eigen::VectorXd& y, const Eigen::VectorXd&) {
    const Vector xi = y.head(n);
    out.record.times.push_back(s);
    out.record.states.push_back(xi);
    out.record.controls.push_back(fb(s, xi, z));
    return ode::Verdict::Continue;
  };

  Eigen::VectorXd y0 = Eigen::VectorXd::Zero(n + 1);
  y0.head(n) = x;
  ode::Tolerances tol;
  tol.rtol = vt.rtol;
  tol.atol = vt.atol;
  const ode::Result res =
      ode::integrate(rhs, 0.0, y0, t, detail::checkpoint_lags(traj, t), tol, observer);
  if (res.status != ode::Status::Completed) {
    throw ConfigError("simulate_closed_loop: integration did not complete");
  }
  out.record.running_payoff = res.y(n);
  out.payoff = res.y(n) + terminal_payoff(spec, res.y.head(n), z);
  return out;
}

struct ProbeOptions {
  double amplitude = 0.5;
  /// Number of equal macro intervals on which the perturbation is constant.
  int intervals = 16;
  VerifyTolerances tol;
};

struct ProbeTrial {
  double payoff = 0.0;   // J^z(t,x;w)
  double excess = 0.0;   // J - W
  double deficit = 0.0;  // 1/2 int |w - wbar|^2 along the perturbed path
};

struct ProbeResult {
  double value = 0.0;  // W^z(t,x)
  double max_excess = -std::numeric_limits<double>::infinity();
  std::vector<ProbeTrial> trials;
};

namespace detail {

/// Payoff of the control w = w*_open(s) + eta(s): w*_open is the optimal
/// control evaluated along the optimal path (integrated alongside), eta is
/// piecewise constant on `eta.size()` equal intervals. Also accumulates
/// 1/2 int |w - wbar|^2 with wbar the feedback law along the perturbed path.
inline ProbeTrial perturbed_payoff(const SeedTrajectory& traj, double t, const Vector& x,
                                   const Vector& z, const std::vector<Vector>& eta,
                                   const VerifyTolerances& vt) {
  const ProblemSpec& spec = traj.spec;
  const Eigen::Index n = spec.dim();
  const Matrix& c = spec.C.matrix();
  const Feedback fb{traj, t};
  const int pieces = static_cast<int>(eta.size());
  const std::vector<double> lags = checkpoint_lags(traj, t);

  Eigen::VectorXd y = Eigen::VectorXd::Zero(2 * n + 2);
  y.segment(0, n) = x;
  y.segment(n, n) = x;
  ode::Tolerances tol;
  tol.rtol = vt.rtol;
  tol.atol = vt.atol;
  auto keep = [](double, const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return ode::Verdict::Continue;
  };

  for (int k = 0; k < pieces; ++k) {
    const double s0 = t * k / pieces;
    const double s1 = t * (k + 1) / pieces;
    const Vector& e = eta[k];
    auto rhs = [&](double s, const Eigen::VectorXd& u, Eigen::VectorXd& du) {
      const Vector opt = u.segment(0, n);
      const Vector xi = u.segment(n, n);
      const Vector w_star = fb(s, opt, z);
      const Vector w = w_star + e;
      const Vector gap = w - fb(s, xi, z);
      du.segment(0, n) = spec.A * opt + spec.sigma * w_star;
      du.segment(n, n) = spec.A * xi + spec.sigma * w;
      du(2 * n) = 0.5 * spec.inner(xi, c * xi) - 0.5 * spec.inner(w, w);
      du(2 * n + 1) = 0.5 * spec.inner(gap, gap);
    };
    std::vector<double> stops;
    for (double l : lags)
      if (l > s0 && l < s1) stops.push_back(l);
    const ode::Result res = ode::integrate(rhs, s0, y, s1, stops, tol, keep);
    if (res.status != ode::Status::Completed) {
      throw ConfigError("suboptimality_probe: integration did not complete");
    }
    y = res.y;
  }
  ProbeTrial trial;
  trial.payoff = y(2 * n) + terminal_payoff(spec, y.segment(n, n), z);
  trial.deficit = y(2 * n + 1);
  return trial;
}

}  // namespace detail

/// Random perturbations w = w* + eta of the optimal control; every payoff must
/// stay below the value W^z(t,x). Amplitude 0 reproduces the optimal control.
inline ProbeResult suboptimality_probe(const SeedTrajectory& traj, double t, const Vector& x,
                                       const Vector& z, int n_trials, std::uint64_t seed,
                                       const ProbeOptions& opts = {}) {
  detail::check_horizon(traj, t);
  if (n_trials < 1) throw ConfigError("suboptimality_probe: n_trials must be >= 1");
  if (opts.intervals < 1) throw ConfigError("suboptimality_probe: intervals must be >= 1");
  const Eigen::Index m = traj.spec.sigma.cols();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  ProbeResult out;
  out.value = value_quadratic(traj, t, x, z);
  out.trials.reserve(n_trials);
  for (int trial = 0; trial < n_trials; ++trial) {
    std::vector<Vector> eta(opts.intervals, Vector::Zero(m));
    for (auto& e : eta)
      for (Eigen::Index i = 0; i < m; ++i) e(i) = opts.amplitude * normal(rng);
    ProbeTrial r = detail::perturbed_payoff(traj, t, x, z, eta, opts.tol);
    r.excess = r.payoff - out.value;
    out.max_excess = std::max(out.max_excess, r.excess);
    out.trials.push_back(r);
  }
  return out;
}

/// Single probe with a prescribed perturbation (one vector per interval).
inline ProbeTrial probe_with(const SeedTrajectory& traj, double t, const Vector& x,
                             const Vector& z, const std::vector<Vector>& eta,
                             const VerifyTolerances& vt = {}) {
  detail::check_horizon(traj, t);
  if (eta.empty()) throw ConfigError("probe_with: empty perturbation");
  ProbeTrial r = detail::perturbed_payoff(traj, t, x, z, eta, vt);
  r.excess = r.payoff - value_quadratic(traj, t, x, z);
  return r;
}

}  // namespace mpr
