#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wflow/ensemble.hpp"
#include "wflow/flows.hpp"
#include "wflow/format.hpp"
#include "wflow/types.hpp"

namespace wflow {

struct IntegratorConfig {
  double rtol = 1e-6;
  double atol = 1e-6;
  double t_start = 0.0;
  double t_end = 1.0;
  std::size_t max_steps = 10'000'000;  // attempted steps, accepted + rejected
  std::optional<double> initial_step;
  double safety = 0.9;
  double shrink = 0.2;
  double growth = 10.0;
  std::vector<double> record_times;
  /// Constant step, controller bypassed (still clipped at t_end).
  std::optional<double> fixed_step;
  /// Particle layout of the state, [X | V] particle-major. Error norms are
  /// reduced per particle in an order-free way; 0 treats entries separately.
  Index particles = 0;
  Index particle_dim = 0;

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("integrator: rtol and atol must be > 0");
    if (!(t_start < t_end)) throw std::invalid_argument("integrator: t_start must be < t_end");
    if (max_steps == 0) throw std::invalid_argument("integrator: max_steps must be >= 1");
    if (initial_step && !(*initial_step > 0.0)) throw std::invalid_argument("integrator: initial_step must be > 0");
    if (fixed_step && !(*fixed_step > 0.0)) throw std::invalid_argument("integrator: fixed_step must be > 0");
    if (!(safety > 0.0 && shrink > 0.0 && shrink <= 1.0 && growth >= 1.0))
      throw std::invalid_argument("integrator: invalid controller factors");
    for (std::size_t i = 0; i < record_times.size(); ++i) {
      const double r = record_times[i];
      if (!(r >= t_start && r <= t_end))
        throw std::invalid_argument("integrator: record time " + fmt_short(r) + " outside [t_start, t_end]");
      if (i > 0 && !(r > record_times[i - 1]))
        throw std::invalid_argument("integrator: record_times must be strictly increasing");
    }
  }
};

/// n+1 uniformly spaced times from t_start to t_end inclusive.
inline std::vector<double> uniform_times(double t0, double t1, std::size_t n) {
  std::vector<double> ts(n + 1);
  for (std::size_t i = 0; i <= n; ++i) ts[i] = t0 + (t1 - t0) * static_cast<double>(i) / static_cast<double>(n);
  ts.back() = t1;
  return ts;
}

enum class RunStatus { completed, scale_overflow, max_steps, non_finite };

inline std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::completed: return "completed";
    case RunStatus::scale_overflow: return "scale-overflow";
    case RunStatus::max_steps: return "max-steps";
    case RunStatus::non_finite: return "non-finite";
  }
  return "?";
}

/// Passed to the step observer after every accepted step (and once at t_start).
struct StepView {
  double t;
  const Vector& y;
  std::size_t accepted;
  std::size_t rejected;
};

struct OdeResult {
  std::vector<double> times;
  std::vector<Vector> states;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  RunStatus status = RunStatus::completed;
  std::string message;
  double t_final = 0.0;
  Vector y_final;
  std::optional<Index> bad_index;  // first non-finite state entry

  std::size_t total_steps() const { return accepted + rejected; }
};

namespace dp5 {
inline constexpr double c2 = 0.2, c3 = 0.3, c4 = 0.8, c5 = 8.0 / 9.0;
inline constexpr double a21 = 0.2;
inline constexpr double a31 = 3.0 / 40.0, a32 = 9.0 / 40.0;
inline constexpr double a41 = 44.0 / 45.0, a42 = -56.0 / 15.0, a43 = 32.0 / 9.0;
inline constexpr double a51 = 19372.0 / 6561.0, a52 = -25360.0 / 2187.0, a53 = 64448.0 / 6561.0,
                        a54 = -212.0 / 729.0;
inline constexpr double a61 = 9017.0 / 3168.0, a62 = -355.0 / 33.0, a63 = 46732.0 / 5247.0, a64 = 49.0 / 176.0,
                        a65 = -5103.0 / 18656.0;
inline constexpr double a71 = 35.0 / 384.0, a73 = 500.0 / 1113.0, a74 = 125.0 / 192.0, a75 = -2187.0 / 6784.0,
                        a76 = 11.0 / 84.0;
// 5th minus embedded 4th order weights
inline constexpr double e1 = 71.0 / 57600.0, e3 = -71.0 / 16695.0, e4 = 71.0 / 1920.0, e5 = -17253.0 / 339200.0,
                        e6 = 22.0 / 525.0, e7 = -1.0 / 40.0;
// dense output
inline constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                        d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                        d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
}  // namespace dp5

namespace detail {

/// Groups state entries by particle for order-free reductions.
struct NormLayout {
  Index group_dim = 1;
  Index groups = 0;

  NormLayout(const IntegratorConfig& cfg, Index n) {
    if (cfg.particles > 0 && cfg.particle_dim > 0 && n % (cfg.particles * cfg.particle_dim) == 0) {
      group_dim = cfg.particle_dim;
      groups = cfg.particles;
    } else {
      groups = n;
    }
  }

  /// sqrt((1/n)Σ_k w(k)²).
  template <class W>
  double rms(Index n, W&& w) const {
    if (n == 0) return 0.0;
    std::vector<double> acc(static_cast<std::size_t>(groups), 0.0);
    for (Index k = 0; k < n; ++k) {
      const double x = w(k);
      acc[static_cast<std::size_t>((k / group_dim) % groups)] += x * x;
    }
    return std::sqrt(order_free_sum(std::move(acc)) / static_cast<double>(n));
  }
};

inline double weighted_rms(const NormLayout& lay, const Vector& v, const Vector& y, double atol, double rtol) {
  return lay.rms(v.size(), [&](Index i) { return v(i) / (atol + rtol * std::abs(y(i))); });
}

inline Index first_non_finite(const Vector& v) {
  for (Index i = 0; i < v.size(); ++i)
    if (!std::isfinite(v(i))) return i;
  return -1;
}

}  // namespace detail

/// Starting step from two drift evaluations (Hairer–Nørsett–Wanner),
/// clamped to (0, t_end − t_start]. Zero drift gives (t_end − t_start)/100.
/// `f0` is the drift at (t_start, y0).
template <class Rhs>
double initial_step_heuristic(Rhs&& f, const Vector& y0, const Vector& f0, const IntegratorConfig& cfg) {
  const double span = cfg.t_end - cfg.t_start;
  if (f0.size() == 0 || f0.cwiseAbs().maxCoeff() == 0.0) return span / 100.0;
  const detail::NormLayout lay(cfg, y0.size());
  const double d0 = detail::weighted_rms(lay, y0, y0, cfg.atol, cfg.rtol);
  const double d1 = detail::weighted_rms(lay, f0, y0, cfg.atol, cfg.rtol);
  double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  const Vector y1 = y0 + h0 * f0;
  Vector f1(y0.size());
  f(cfg.t_start + h0, y1, f1);
  const double d2 = detail::weighted_rms(lay, f1 - f0, y0, cfg.atol, cfg.rtol) / h0;
  const double dm = std::max(d1, d2);
  const double h1 = dm <= 1e-15 ? std::max(1e-6, h0 * 1e-3) : std::pow(0.01 / dm, 0.2);
  double h = std::min(100.0 * h0, h1);
  if (!std::isfinite(h) || !(h > 0.0)) h = span / 100.0;
  return std::min(h, span);
}

/// Dormand–Prince 5(4) with FSAL, I-controller and 4th-order dense output.
/// `f(t, y, dy)` fills dy; it may throw ScaleOverflow.
template <class Rhs, class Observer>
OdeResult dopri5(Rhs&& f, const Vector& y0, const IntegratorConfig& cfg, Observer&& observe) {
  using namespace dp5;
  cfg.validate();
  OdeResult out;
  const Index n = y0.size();
  const detail::NormLayout lay(cfg, n);
  double t = cfg.t_start;
  Vector y = y0;
  Vector k1(n), k2(n), k3(n), k4(n), k5(n), k6(n), k7(n), ytmp(n), ynew(n), err(n);
  std::size_t next_rec = 0;

  auto record = [&](double tr, const Vector& yr) {
    out.times.push_back(tr);
    out.states.push_back(yr);
  };
  auto finish = [&](RunStatus s, std::string msg) {
    out.status = s;
    out.message = std::move(msg);
    out.t_final = t;
    out.y_final = y;
    return out;
  };

  try {
    f(t, y, k1);
  } catch (const ScaleOverflow& e) {
    return finish(RunStatus::scale_overflow, e.what());
  }
  if (const Index bad = detail::first_non_finite(k1); bad >= 0) {
    out.bad_index = bad;
    return finish(RunStatus::non_finite, "non-finite drift at t = " + fmt_short(t));
  }

  while (next_rec < cfg.record_times.size() && cfg.record_times[next_rec] <= t) record(cfg.record_times[next_rec++], y);
  observe(StepView{t, y, 0, 0});

  double h;
  if (cfg.fixed_step)
    h = *cfg.fixed_step;
  else if (cfg.initial_step)
    h = *cfg.initial_step;
  else
    h = initial_step_heuristic(f, y, k1, cfg);
  h = std::min(h, cfg.t_end - cfg.t_start);

  while (t < cfg.t_end) {
    if (out.total_steps() >= cfg.max_steps)
      return finish(RunStatus::max_steps, "max_steps = " + std::to_string(cfg.max_steps) + " reached at t = " + fmt_short(t));
    bool last = false;
    if (t + h >= cfg.t_end - 1e-12 * (cfg.t_end - cfg.t_start)) {
      h = cfg.t_end - t;
      last = true;
    }
    try {
      ytmp = y + h * a21 * k1;
      f(t + c2 * h, ytmp, k2);
      ytmp = y + h * (a31 * k1 + a32 * k2);
      f(t + c3 * h, ytmp, k3);
      ytmp = y + h * (a41 * k1 + a42 * k2 + a43 * k3);
      f(t + c4 * h, ytmp, k4);
      ytmp = y + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
      f(t + c5 * h, ytmp, k5);
      ytmp = y + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
      f(t + h, ytmp, k6);
      ynew = y + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
      f(t + h, ynew, k7);
    } catch (const ScaleOverflow& e) {
      return finish(RunStatus::scale_overflow, e.what());
    }
    for (const Vector* k : {&k2, &k3, &k4, &k5, &k6, &k7, &ynew}) {
      if (const Index bad = detail::first_non_finite(*k); bad >= 0) {
        ++out.rejected;
        out.bad_index = bad;
        return finish(RunStatus::non_finite, "non-finite drift in step from t = " + fmt_short(t));
      }
    }

    double norm = 0.0;
    if (!cfg.fixed_step) {
      err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
      norm = lay.rms(n, [&](Index i) {
        return err(i) / (cfg.atol + cfg.rtol * std::max(std::abs(y(i)), std::abs(ynew(i))));
      });
    }

    if (norm <= 1.0) {
      ++out.accepted;
      const double t_new = last ? cfg.t_end : t + h;
      if (next_rec < cfg.record_times.size() && cfg.record_times[next_rec] <= t_new) {
        const Vector ydiff = ynew - y;
        const Vector bspl = h * k1 - ydiff;
        const Vector r4 = ydiff - h * k7 - bspl;
        const Vector r5 = h * (d1 * k1 + d3 * k3 + d4 * k4 + d5 * k5 + d6 * k6 + d7 * k7);
        while (next_rec < cfg.record_times.size() && cfg.record_times[next_rec] <= t_new) {
          const double tr = cfg.record_times[next_rec++];
          if (tr == t_new) {
            record(tr, ynew);
            continue;
          }
          const double th = (tr - t) / h, th1 = 1.0 - th;
          record(tr, y + th * (ydiff + th1 * (bspl + th * (r4 + th1 * r5))));
        }
      }
      t = t_new;
      y = ynew;
      k1 = k7;
      observe(StepView{t, y, out.accepted, out.rejected});
      if (!cfg.fixed_step) {
        const double fac = norm == 0.0 ? cfg.growth : std::clamp(cfg.safety * std::pow(norm, -0.2), cfg.shrink, cfg.growth);
        h *= fac;
      }
    } else {
      ++out.rejected;
      h *= std::clamp(cfg.safety * std::pow(norm, -0.2), cfg.shrink, 1.0);
    }
    if (!cfg.fixed_step && t < cfg.t_end && !(h > 1e-14 * std::max(1.0, std::abs(t))))
      return finish(RunStatus::max_steps, "step size underflow at t = " + fmt_short(t));
  }
  return finish(RunStatus::completed, "");
}

template <class Rhs>
OdeResult dopri5(Rhs&& f, const Vector& y0, const IntegratorConfig& cfg) {
  return dopri5(std::forward<Rhs>(f), y0, cfg, [](const StepView&) {});
}

// ---------------------------------------------------------------------------
// Particle runs
// ---------------------------------------------------------------------------

struct RunRecord {
  std::vector<double> times;
  std::vector<PhaseEnsemble> states;
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  RunStatus status = RunStatus::completed;
  std::string message;
  double t_final = 0.0;
  std::optional<Index> bad_particle;

  std::size_t total_steps() const { return accepted_steps + rejected_steps; }
};

/// Particle-level view of an accepted step.
struct ParticleStep {
  double t;
  Eigen::Map<const Matrix> positions;
  std::size_t accepted;
  std::size_t rejected;
};

/// Integrates one flow from e0 (in the field's own state coordinates) over
/// [cfg.t_start, cfg.t_end]. The observer sees positions after every accepted step.
template <class Observer>
RunRecord integrate(const DriftField& drift, const PhaseEnsemble& e0, const IntegratorConfig& cfg, Observer&& observe) {
  const Index n = e0.size(), d = e0.dim();
  const Vector y0 = drift.pack(e0);
  IntegratorConfig c = cfg;
  c.particles = n;
  c.particle_dim = d;
  auto rhs = [&](double t, const Vector& y, Vector& dy) { drift.rhs(t, y, dy, n, d); };
  auto obs = [&](const StepView& s) { observe(ParticleStep{s.t, Eigen::Map<const Matrix>(s.y.data(), n, d), s.accepted, s.rejected}); };
  OdeResult r = dopri5(rhs, y0, c, obs);
  RunRecord rec;
  rec.times = std::move(r.times);
  rec.states.reserve(r.states.size());
  for (std::size_t i = 0; i < r.states.size(); ++i) rec.states.push_back(drift.unpack(r.states[i], n, d, rec.times[i]));
  rec.accepted_steps = r.accepted;
  rec.rejected_steps = r.rejected;
  rec.status = r.status;
  rec.t_final = r.t_final;
  rec.message = r.message;
  if (r.bad_index) {
    rec.bad_particle = drift.particle_of(*r.bad_index, n, d);
    rec.message += ", particle " + std::to_string(*rec.bad_particle);
  }
  return rec;
}

inline RunRecord integrate(const DriftField& drift, const PhaseEnsemble& e0, const IntegratorConfig& cfg) {
  return integrate(drift, e0, cfg, [](const ParticleStep&) {});
}

}  // namespace wflow
