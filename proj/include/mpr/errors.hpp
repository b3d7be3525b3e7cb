#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mpr {

/// Base for every error raised by the library. `exit_code()` is the process
/// status the CLI maps the error to.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual int exit_code() const noexcept { return 1; }
};

/// Malformed configuration, CSV input or violated construction invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

class EigenSolverError : public Error {
 public:
  using Error::Error;
};

/// Quadratic supremum is +infinity (positive curvature or linear term off the range).
class Unbounded : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 5; }
};

class UnboundedComposition : public Unbounded {
 public:
  using Unbounded::Unbounded;
};

class UnboundedReconstruction : public Unbounded {
 public:
  using Unbounded::Unbounded;
};

/// Initial datum outside the admissible class (M~ - M not coercive).
class NotAdmissible : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

struct EscapeReport {
  bool escaped = false;
  double t_escape_lower = 0.0;
  std::vector<std::pair<double, double>> norm_history;  // (t, |P(t)|_F)
};

class FiniteEscape : public Error {
 public:
  explicit FiniteEscape(EscapeReport report)
      : Error("finite escape: |P|_F exceeded the ceiling after t = " +
              std::to_string(report.t_escape_lower)),
        report_(std::move(report)) {}
  const EscapeReport& report() const noexcept { return report_; }
  int exit_code() const noexcept override { return 3; }

 private:
  EscapeReport report_;
};

class CoercivityLost : public Error {
 public:
  CoercivityLost(double t, double margin, const std::string& context = "")
      : Error("coercivity of P(t) - M lost at t = " + std::to_string(t) +
              " (margin " + std::to_string(margin) + ")" +
              (context.empty() ? "" : ": " + context)),
        t_(t),
        margin_(margin) {}
  double t() const noexcept { return t_; }
  double margin() const noexcept { return margin_; }
  int exit_code() const noexcept override { return 4; }

 private:
  double t_;
  double margin_;
};

}  // namespace mpr
