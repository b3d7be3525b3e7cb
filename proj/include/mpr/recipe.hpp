#pragma once

#include <atomic>
#include <chrono>
#include <exception>
#include <cmath>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mpr/config.hpp"
#include "mpr/errors.hpp"
#include "mpr/riccati.hpp"
#include "mpr/semigroup.hpp"

namespace mpr {

enum class IterationMode { Linear, Doubling };

struct RecipeSettings {
  double t = 0.4;
  int kappa = 8;
  IterationMode mode = IterationMode::Linear;
  RiccatiOptions riccati;
  KernelTolerances kernel;

  /// Number of doublings when mode == Doubling (kappa = 2^k).
  int doublings() const {
    int k = 0;
    while ((1 << k) < kappa) ++k;
    return k;
  }

  void validate() const {
    if (!(t > 0.0)) throw ConfigError("recipe.t: must be positive");
    if (kappa < 1) throw ConfigError("recipe.kappa: must be >= 1");
    if (mode == IterationMode::Doubling && (kappa & (kappa - 1)) != 0) {
      throw ConfigError("recipe.kappa: doubling mode needs a power of two, got " +
                        std::to_string(kappa));
    }
  }

  static RecipeSettings from(const Config& cfg) {
    RecipeSettings s;
    s.t = cfg.get_double("recipe.t", s.t);
    s.kappa = static_cast<int>(cfg.get_int("recipe.kappa", s.kappa));
    const std::string mode = cfg.get_string("recipe.mode", "linear");
    if (mode == "linear") {
      s.mode = IterationMode::Linear;
    } else if (mode == "doubling") {
      s.mode = IterationMode::Doubling;
    } else {
      throw ConfigError("recipe.mode: expected 'linear' or 'doubling', got '" + mode + "'");
    }
    s.riccati = RiccatiOptions::from(cfg);
    s.kernel.pinv_rel = cfg.get_double("pinv.rel_tol", s.kernel.pinv_rel);
    if (!(s.kernel.pinv_rel > 0.0)) throw ConfigError("pinv.rel_tol: must be positive");
    s.validate();
    return s;
  }
};

namespace detail {

/// Re-raises the active library error with a step label, preserving its type.
template <class F>
auto in_step(const char* label, F&& f) {
  const std::string pre = std::string("[step ") + label + "] ";
  try {
    return f();
  } catch (const FiniteEscape&) {
    throw;
  } catch (const CoercivityLost& e) {
    throw CoercivityLost(e.t(), e.margin(), pre + e.what());
  } catch (const UnboundedComposition& e) {
    throw UnboundedComposition(pre + e.what());
  } catch (const UnboundedReconstruction& e) {
    throw UnboundedReconstruction(pre + e.what());
  } catch (const NotAdmissible& e) {
    throw NotAdmissible(pre + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(pre + e.what());
  }
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

struct Reconstruction {
  SymOp P;
  double inner_condition = 0.0;  // cond of (B22 - N~) on its range
  double outer_condition = 0.0;  // cond of (T~ + M) on its range
  double margin = 0.0;           // min eig(P~(t) - M)
};

/// Steps 1-2 run once in prepare(); Step 3 is repeated per initial datum.
class Recipe {
 public:
  Recipe(ProblemSpec spec, RecipeSettings settings)
      : spec_(std::move(spec)), settings_(std::move(settings)) {
    settings_.validate();
  }

  void prepare() {
    const double delta = settings_.t / settings_.kappa;
    auto t0 = std::chrono::steady_clock::now();
    seed_kernel_ = detail::in_step("1", [&] {
      RiccatiOptions opts = settings_.riccati;
      opts.checkpoints = 1;
      opts.extra_times.clear();
      opts.throw_on_failure = true;
      const SeedTrajectory traj = integrate_seed(spec_, delta, opts);
      return seed_kernel(traj, delta, settings_.kernel);
    });
    seed_seconds_ = detail::seconds_since(t0);
    t0 = std::chrono::steady_clock::now();
    propagation_ = detail::in_step("2", [&] {
      return settings_.mode == IterationMode::Linear
                 ? iterate_linear(*seed_kernel_, settings_.kappa, settings_.kernel)
                 : iterate_doubling(*seed_kernel_, settings_.doublings(), settings_.kernel);
    });
    iterate_seconds_ = detail::seconds_since(t0);
    ++prepare_count_;
  }

  /// Skips Steps 1-2 by taking a precomputed kernel for horizon settings().t.
  void adopt(KernelTriple kernel) {
    if (kernel.dim() != spec_.dim()) throw ConfigError("recipe: kernel dimension mismatch");
    const double tol = 1e-9 * std::max(1.0, settings_.t);
    if (std::abs(kernel.t - settings_.t) > tol) {
      throw ConfigError("recipe: kernel horizon " + detail::fmt(kernel.t) +
                        " differs from recipe.t = " + detail::fmt(settings_.t));
    }
    propagation_ = Propagation{std::move(kernel), 0};
  }

  bool prepared() const { return propagation_.has_value(); }

  Reconstruction solve(const SymOp& m_tilde) const {
    if (!prepared()) throw ConfigError("recipe: prepare() must run before solve()");
    ++solve_count_;
    return detail::in_step("3", [&] {
      const KernelTriple& b = propagation_->kernel;
      const auto& tol = settings_.kernel;
      const DualQuad n_tilde = dual_of_terminal(m_tilde, spec_.M, tol);
      const DualQuad applied = maxplus_apply(b, n_tilde, tol);
      Reconstruction r;
      r.P = inverse_dual(applied, spec_.M, tol);
      r.inner_condition = pinv_diagnostics(b.B22 - n_tilde.N, tol.pinv_rel).condition();
      r.outer_condition = pinv_diagnostics(spec_.M - applied.N, tol.pinv_rel).condition();
      r.margin = coercivity_margin(r.P - spec_.M);
      return r;
    });
  }

  /// Step 3 for a batch, fanned out over `threads` workers; output order
  /// follows input order.
  std::vector<Reconstruction> solve_batch(const std::vector<SymOp>& batch, int threads = 1) const {
    std::vector<std::optional<Reconstruction>> slots(batch.size());
    std::vector<std::exception_ptr> errors(batch.size());
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
    auto work = [&](int w) {
      for (std::size_t i = w; i < batch.size(); i += workers) {
        try {
          slots[i] = solve(batch[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    if (workers == 1) {
      work(0);
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    }
    std::vector<Reconstruction> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (errors[i]) std::rethrow_exception(errors[i]);
      out.push_back(std::move(*slots[i]));
    }
    return out;
  }

  const ProblemSpec& spec() const { return spec_; }
  const RecipeSettings& settings() const { return settings_; }
  const KernelTriple& kernel() const { return propagation_->kernel; }
  int compositions() const { return propagation_ ? propagation_->compositions : 0; }
  int prepare_count() const { return prepare_count_; }
  long solve_count() const { return solve_count_; }
  double seed_seconds() const { return seed_seconds_; }
  double iterate_seconds() const { return iterate_seconds_; }

 private:
  ProblemSpec spec_;
  RecipeSettings settings_;
  std::optional<KernelTriple> seed_kernel_;
  std::optional<Propagation> propagation_;
  int prepare_count_ = 0;
  mutable std::atomic<long> solve_count_{0};
  double seed_seconds_ = 0.0;
  double iterate_seconds_ = 0.0;
};

}  // namespace mpr
