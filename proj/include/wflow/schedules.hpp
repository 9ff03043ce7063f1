#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "wflow/format.hpp"

namespace wflow {

using ScalarFn = std::function<double(double)>;

struct ScheduleSample {
  double t = 0.0;
  double alpha = 0.0, beta = 0.0, gamma = 0.0;
  double alpha_dot = 0.0, beta_dot = 0.0, gamma_dot = 0.0;
  double damping = 0.0;      // γ̇ − α̇
  double force_scale = 0.0;  // e^{2α+β}
  double rate_scale = 0.0;   // e^{β}
};

/// Parameter triplet (α, β, γ) with analytic derivatives. Callables throw
/// std::domain_error outside the schedule's domain.
struct Schedule {
  std::string name;
  ScalarFn alpha, beta, gamma;
  ScalarFn alpha_dot, beta_dot, gamma_dot;
  ScalarFn log_force;  // 2α + β in closed form, when known

  ScheduleSample sample(double t) const {
    ScheduleSample s;
    s.t = t;
    s.alpha = alpha(t);
    s.beta = beta(t);
    s.gamma = gamma(t);
    s.alpha_dot = alpha_dot(t);
    s.beta_dot = beta_dot(t);
    s.gamma_dot = gamma_dot(t);
    s.damping = s.gamma_dot - s.alpha_dot;
    s.force_scale = std::exp(log_force ? log_force(t) : 2.0 * s.alpha + s.beta);
    s.rate_scale = std::exp(s.beta);
    return s;
  }
};

namespace detail {
inline void require_positive_time(double t, const char* who) {
  if (!(t > 0.0)) throw std::domain_error(std::string(who) + ": schedule defined for t > 0 only, got t = " + fmt_short(t));
}
}  // namespace detail

/// α = log(2/t), β = log(t²/4), γ = 2 log t.
inline Schedule nesterov_schedule() {
  auto chk = [](double t) { detail::require_positive_time(t, "nesterov"); };
  Schedule s;
  s.name = "nesterov";
  s.alpha = [chk](double t) { chk(t); return std::log(2.0 / t); };
  s.beta = [chk](double t) { chk(t); return std::log(t * t / 4.0); };
  s.gamma = [chk](double t) { chk(t); return 2.0 * std::log(t); };
  s.alpha_dot = [chk](double t) { chk(t); return -1.0 / t; };
  s.beta_dot = [chk](double t) { chk(t); return 2.0 / t; };
  s.gamma_dot = [chk](double t) { chk(t); return 2.0 / t; };
  s.log_force = [chk](double t) { chk(t); return 0.0; };
  return s;
}

/// [α, β, γ] = [0, t, t].
inline Schedule exponential_schedule() {
  Schedule s;
  s.name = "exponential";
  s.alpha = [](double) { return 0.0; };
  s.beta = [](double t) { return t; };
  s.gamma = [](double t) { return t; };
  s.alpha_dot = [](double) { return 0.0; };
  s.beta_dot = [](double) { return 1.0; };
  s.gamma_dot = [](double) { return 1.0; };
  s.log_force = [](double t) { return t; };
  return s;
}

/// α = log(r/t), β = 2 log(t/r), γ = r log t, so that γ̇ = e^α.
inline Schedule mirror_schedule(double r) {
  if (!(r > 0.0)) throw std::invalid_argument("mirror_schedule: r must be > 0");
  auto chk = [](double t) { detail::require_positive_time(t, "mirror"); };
  Schedule s;
  s.name = "mirror";
  s.alpha = [chk, r](double t) { chk(t); return std::log(r / t); };
  s.beta = [chk, r](double t) { chk(t); return 2.0 * std::log(t / r); };
  s.gamma = [chk, r](double t) { chk(t); return r * std::log(t); };
  s.alpha_dot = [chk](double t) { chk(t); return -1.0 / t; };
  s.beta_dot = [chk](double t) { chk(t); return 2.0 / t; };
  s.gamma_dot = [chk, r](double t) { chk(t); return r / t; };
  s.log_force = [chk](double t) { chk(t); return 0.0; };
  return s;
}

/// Coefficients of c0 + c1·t + c2·log t, the form every built-in schedule takes.
struct AffineLogCoeffs {
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
};

/// Custom schedule with each of α, β, γ of the form c0 + c1·t + c2·log t.
/// The domain is t > 0 if any log coefficient is nonzero.
inline Schedule affine_log_schedule(AffineLogCoeffs a, AffineLogCoeffs b, AffineLogCoeffs g,
                                    std::string name = "custom") {
  const bool singular = a.c2 != 0.0 || b.c2 != 0.0 || g.c2 != 0.0;
  auto value = [singular](AffineLogCoeffs c) {
    return [c, singular](double t) {
      if (singular) detail::require_positive_time(t, "custom");
      return c.c0 + c.c1 * t + (c.c2 != 0.0 ? c.c2 * std::log(t) : 0.0);
    };
  };
  auto deriv = [singular](AffineLogCoeffs c) {
    return [c, singular](double t) {
      if (singular) detail::require_positive_time(t, "custom");
      return c.c1 + (c.c2 != 0.0 ? c.c2 / t : 0.0);
    };
  };
  Schedule s;
  s.name = std::move(name);
  s.alpha = value(a);
  s.beta = value(b);
  s.gamma = value(g);
  s.alpha_dot = deriv(a);
  s.beta_dot = deriv(b);
  s.gamma_dot = deriv(g);
  return s;
}

struct ScalingViolation {
  double t = 0.0;
  std::string reason;
};

struct ScalingReport {
  bool pass = true;
  std::vector<ScalingViolation> violations;

  std::optional<ScalingViolation> first_violation() const {
    if (violations.empty()) return std::nullopt;
    return violations.front();
  }
};

/// β̇ ≤ e^α + 1e−9 and |γ̇ − e^α| ≤ 1e−9·max(1, e^α) at every grid point.
inline ScalingReport check_optimal_scaling(const Schedule& s, const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("check_optimal_scaling: empty grid");
  ScalingReport rep;
  for (double t : grid) {
    const auto p = s.sample(t);
    const double ea = std::exp(p.alpha);
    if (!(p.beta_dot <= ea + 1e-9))
      rep.violations.push_back({t, "beta_dot = " + fmt_short(p.beta_dot) + " exceeds e^alpha = " + fmt_short(ea)});
    else if (!(std::abs(p.gamma_dot - ea) <= 1e-9 * std::max(1.0, ea)))
      rep.violations.push_back({t, "gamma_dot = " + fmt_short(p.gamma_dot) + " differs from e^alpha = " + fmt_short(ea)});
  }
  rep.pass = rep.violations.empty();
  return rep;
}

/// Time change τ with its first two derivatives (τ̈ enters α̃̇).
struct Dilation {
  ScalarFn tau, tau_dot, tau_ddot;
  std::string name = "tau";
};

inline Dilation identity_dilation() {
  return {[](double t) { return t; }, [](double) { return 1.0; }, [](double) { return 0.0; }, "identity"};
}

/// τ(t) = t^{p/2}.
inline Dilation power_dilation(double p) {
  if (!(p > 0.0)) throw std::invalid_argument("power_dilation: p must be > 0");
  const double k = 0.5 * p;
  return {[k](double t) { return std::pow(t, k); },
          [k](double t) { return k * std::pow(t, k - 1.0); },
          [k](double t) { return k * (k - 1.0) * std::pow(t, k - 2.0); },
          "t^" + fmt_short(k)};
}

/// (outer ∘ inner)(t) = outer(inner(t)).
inline Dilation compose(const Dilation& outer, const Dilation& inner) {
  return {[outer, inner](double t) { return outer.tau(inner.tau(t)); },
          [outer, inner](double t) { return outer.tau_dot(inner.tau(t)) * inner.tau_dot(t); },
          [outer, inner](double t) {
            const double d = inner.tau_dot(t);
            return outer.tau_ddot(inner.tau(t)) * d * d + outer.tau_dot(inner.tau(t)) * inner.tau_ddot(t);
          },
          outer.name + "∘" + inner.name};
}

/// α̃ = α∘τ + log τ̇, β̃ = β∘τ, γ̃ = γ∘τ.
/// Dilating twice composes: time_dilate(time_dilate(s, τ), σ) = time_dilate(s, τ∘σ).
inline Schedule time_dilate(const Schedule& s, const Dilation& d) {
  auto td = [d](double t) {
    const double v = d.tau_dot(t);
    if (!(v > 0.0))
      throw std::domain_error("time_dilate: tau_dot must be > 0, got " + fmt_short(v) + " at t = " + fmt_short(t));
    return v;
  };
  Schedule r;
  r.name = s.name + "@" + d.name;
  r.alpha = [s, d, td](double t) { const double v = td(t); return s.alpha(d.tau(t)) + std::log(v); };
  r.beta = [s, d](double t) { return s.beta(d.tau(t)); };
  r.gamma = [s, d](double t) { return s.gamma(d.tau(t)); };
  r.alpha_dot = [s, d, td](double t) {
    const double v = td(t);
    return s.alpha_dot(d.tau(t)) * v + d.tau_ddot(t) / v;
  };
  r.beta_dot = [s, d, td](double t) { return s.beta_dot(d.tau(t)) * td(t); };
  r.gamma_dot = [s, d, td](double t) { return s.gamma_dot(d.tau(t)) * td(t); };
  if (s.log_force)
    r.log_force = [s, d, td](double t) { const double v = td(t); return s.log_force(d.tau(t)) + 2.0 * std::log(v); };
  return r;
}

}  // namespace wflow
