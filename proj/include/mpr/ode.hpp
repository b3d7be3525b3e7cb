#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace mpr::ode {

struct Tolerances {
  double rtol = 1e-10;
  double atol = 1e-12;
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 2'000'000;
};

enum class Status { Completed, StoppedByObserver, StepUnderflow, MaxSteps };

struct Result {
  Status status = Status::Completed;
  double t = 0.0;
  Eigen::VectorXd y;
  long accepted = 0;
  long rejected = 0;
};

enum class Verdict { Continue, Stop };

/// Adaptive Dormand-Prince 5(4) with PI step-size control and FSAL.
///
/// `rhs(t, y, dy)` fills dy. `observer(t, y, dy)` sees every accepted state
/// (including the initial one) and may stop the integration. Every time in
/// `stops` inside (t0, t_end) is hit exactly; steps are clipped to land on it.
template <class Rhs, class Observer>
Result integrate(Rhs&& rhs, double t0, const Eigen::VectorXd& y0, double t_end,
                 const std::vector<double>& stops, const Tolerances& tol, Observer&& observer) {
  using V = Eigen::VectorXd;
  constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
  constexpr double a21 = 1.0 / 5;
  constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
  constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                   a54 = -212.0 / 729;
  constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                   a64 = 49.0 / 176, a65 = -5103.0 / 18656;
  constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192, b5 = -2187.0 / 6784,
                   b6 = 11.0 / 84;
  constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                   e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  Result res;
  res.t = t0;
  res.y = y0;
  const auto n = y0.size();
  V k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), tmp(n), ynew(n), err(n);
  rhs(t0, res.y, k1);
  if (observer(t0, res.y, k1) == Verdict::Stop) {
    res.status = Status::StoppedByObserver;
    return res;
  }
  if (!(t_end > t0)) return res;

  auto scaled_norm = [&](const V& v, const V& ya, const V& yb) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double sc = tol.atol + tol.rtol * std::max(std::abs(ya(i)), std::abs(yb(i)));
      const double r = v(i) / sc;
      acc += r * r;
    }
    return n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
  };

  // Initial step (Hairer, Norsett & Wanner II.4).
  double h;
  {
    const double d0 = scaled_norm(res.y, res.y, res.y);
    const double d1 = scaled_norm(k1, res.y, res.y);
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, t_end - t0);
    tmp = res.y + h0 * k1;
    rhs(t0 + h0, tmp, k2);
    const double d2 = scaled_norm(k2 - k1, res.y, res.y) / h0;
    const double h1 = std::max(d1, d2) <= 1e-15 ? std::max(1e-6, h0 * 1e-3)
                                                 : std::pow(0.01 / std::max(d1, d2), 1.0 / 5);
    h = std::min({100 * h0, h1, tol.h_max});
  }

  // Stops closer than `gap` to each other or to the ends would force a
  // step below the underflow threshold; they are merged.
  const double gap = 1e-12 * std::max(1.0, std::abs(t_end));
  std::vector<double> pending;
  for (double s : stops)
    if (s > t0 + gap && s < t_end - gap) pending.push_back(s);
  std::sort(pending.begin(), pending.end());
  pending.erase(std::unique(pending.begin(), pending.end(),
                            [&](double a, double b) { return b - a <= gap; }),
                pending.end());
  pending.push_back(t_end);
  std::size_t next_stop = 0;

  double err_old = 1e-4;
  bool last_rejected = false;
  while (res.t < t_end) {
    if (res.accepted + res.rejected >= tol.max_steps) {
      res.status = Status::MaxSteps;
      return res;
    }
    const double target = pending[next_stop];
    bool hits_target = false;
    const double h_proposed = h;
    if (res.t + h >= target - 1e-14 * std::max(1.0, std::abs(target))) {
      h = target - res.t;
      hits_target = true;
    }
    if (h <= 1e-14 * std::max(1.0, std::abs(res.t))) {
      res.status = Status::StepUnderflow;
      return res;
    }
    const double t = res.t;
    const V& y = res.y;
    tmp = y + h * a21 * k1;
    rhs(t + c2 * h, tmp, k2);
    tmp = y + h * (a31 * k1 + a32 * k2);
    rhs(t + c3 * h, tmp, k3);
    tmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
    rhs(t + c4 * h, tmp, k4);
    tmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    rhs(t + c5 * h, tmp, k5);
    tmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    rhs(t + h, tmp, k6);
    ynew = y + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
    const double t_new = hits_target ? target : t + h;
    rhs(t_new, ynew, k7);
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double e = scaled_norm(err, y, ynew);
    if (!std::isfinite(e)) e = 1e10;

    if (e <= 1.0) {
      double fac = 0.9 * std::pow(std::max(e, 1e-10), -0.7 / 5) * std::pow(err_old, 0.4 / 5);
      fac = std::clamp(fac, 0.2, last_rejected ? 1.0 : 10.0);
      err_old = std::max(e, 1e-4);
      last_rejected = false;
      res.t = t_new;
      res.y.swap(ynew);
      k1.swap(k7);
      ++res.accepted;
      if (hits_target) ++next_stop;
      if (observer(res.t, res.y, k1) == Verdict::Stop) {
        res.status = Status::StoppedByObserver;
        return res;
      }
      const double h_next = hits_target ? std::max(h * fac, std::min(h_proposed, h * 10.0)) : h * fac;
      h = std::min(h_next, tol.h_max);
    } else {
      const double fac = std::max(0.2, 0.9 * std::pow(e, -1.0 / 5));
      h *= fac;
      last_rejected = true;
      ++res.rejected;
    }
  }
  res.status = Status::Completed;
  return res;
}

}  // namespace mpr::ode
