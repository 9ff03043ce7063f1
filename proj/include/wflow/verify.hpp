#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "wflow/ensemble.hpp"
#include "wflow/experiments.hpp"
#include "wflow/flows.hpp"
#include "wflow/format.hpp"
#include "wflow/functionals.hpp"
#include "wflow/integrator.hpp"
#include "wflow/rng.hpp"
#include "wflow/schedules.hpp"
#include "wflow/transport.hpp"

namespace wflow::verify {

using GradientFn = std::function<Matrix(const Matrix&)>;

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Options {
  /// Test-harness mode: the blob-KL witness gradient used by the FD check
  /// has the sign of its kernel part flipped.
  bool inject_blob_sign_error = false;
};

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

inline std::shared_ptr<const ObjectiveFunctional> quadratic_fixture(Index d, double eig_min, double eig_max,
                                                                    std::uint64_t seed) {
  auto spd = make_spd_matrix(d, eig_min, eig_max, seed);
  Pcg32 rng(seed, 7);
  Vector b(d);
  for (Index i = 0; i < d; ++i) b(i) = rng.normal();
  return std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::quadratic(spd.matrix, b));
}

inline IntegratorConfig tight_config(double t0, double t1, std::size_t records, double tol) {
  IntegratorConfig c;
  c.rtol = c.atol = tol;
  c.t_start = t0;
  c.t_end = t1;
  c.record_times = uniform_times(t0, t1, records);
  return c;
}

inline double sup_distance(const std::vector<Matrix>& a, const std::vector<Matrix>& b) {
  if (a.size() != b.size()) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, (a[i] - b[i]).cwiseAbs().maxCoeff());
  return m;
}

inline std::vector<Matrix> positions_of(const RunRecord& r) {
  std::vector<Matrix> out;
  for (const auto& s : r.states) out.push_back(s.positions());
  return out;
}

// ---------------------------------------------------------------------------
// Dirac consistency: one particle against the Euclidean ODE integrated directly
// ---------------------------------------------------------------------------

struct DiracReport {
  double heavy_ball = 0.0;
  double nesterov = 0.0;
  double exponential = 0.0;
};

/// Sup-norm position error on [t_start, 10] between the N = 1 particle
/// system and a direct integration of ẋ = u, u̇ = −c(t)u − s(t)∇f(x).
inline DiracReport dirac_consistency(double t_start = 0.01, double t_end = 10.0, std::uint64_t seed = 3) {
  const Index d = 2;
  auto f = quadratic_fixture(d, 0.2, 1.0, seed);
  const Matrix a_mat = f->quad().A;
  const Vector b = f->quad().b;
  const PhaseEnsemble e0 = init_gaussian(1, d, seed).with_time(t_start);
  const auto cfg = tight_config(t_start, t_end, 200, 1e-10);

  auto direct = [&](std::function<double(double)> damping, std::function<double(double)> force) {
    Vector y(2 * d);
    y << e0.positions().row(0).transpose(), e0.velocities().row(0).transpose();
    auto rhs = [&](double t, const Vector& s, Vector& ds) {
      const Vector x = s.head(d), u = s.tail(d);
      ds.head(d) = u;
      ds.tail(d) = -damping(t) * u - force(t) * (a_mat * (x - b));
    };
    const OdeResult r = dopri5(rhs, y, tight_config(t_start, t_end, 200, 1e-12));
    std::vector<Matrix> xs;
    for (const auto& s : r.states) xs.push_back(Matrix(s.head(d).transpose()));
    return xs;
  };
  auto particle = [&](const DriftField& drift) {
    return positions_of(integrate(drift, drift.import_damped(e0), cfg));
  };

  DiracReport rep;
  const double a = 0.5;
  rep.heavy_ball = sup_distance(particle(DriftField::heavy_ball(f, a)),
                                direct([a](double) { return a; }, [](double) { return 1.0; }));
  rep.nesterov = sup_distance(particle(DriftField::vaf(f, nesterov_schedule())),
                              direct([](double t) { return 3.0 / t; }, [](double) { return 1.0; }));
  rep.exponential = sup_distance(particle(DriftField::vaf(f, exponential_schedule())),
                                 direct([](double) { return 1.0; }, [](double t) { return std::exp(t); }));
  return rep;
}

// ---------------------------------------------------------------------------
// Pushforward equivalence: damped against undamped-then-rescaled
// ---------------------------------------------------------------------------

struct PushforwardReport {
  double heavy_ball_positions = 0.0;
  double heavy_ball_velocities = 0.0;
  double vaf_positions = 0.0;
  double vaf_velocities = 0.0;
};

inline PushforwardReport pushforward_equivalence(double t_start = 0.01, double t_end = 10.0, std::uint64_t seed = 5) {
  auto f = quadratic_fixture(2, 0.2, 1.0, seed);
  const PhaseEnsemble e0 = init_gaussian(4, 2, seed).with_time(t_start);
  const auto cfg = tight_config(t_start, t_end, 200, 1e-10);
  PushforwardReport rep;
  auto compare = [&](const DriftField& damped, const DriftField& undamped, double& pos, double& vel) {
    const RunRecord rd = integrate(damped, damped.import_damped(e0), cfg);
    const RunRecord ru = integrate(undamped, undamped.import_damped(e0), cfg);
    pos = sup_distance(positions_of(rd), positions_of(ru));
    std::vector<Matrix> vd, vu;
    for (std::size_t i = 0; i < rd.states.size() && i < ru.states.size(); ++i) {
      vd.push_back(rd.states[i].velocities());
      vu.push_back(undamped.damped_velocity(ru.states[i]));
    }
    vel = sup_distance(vd, vu);
  };
  compare(DriftField::heavy_ball(f, 0.5, Form::damped), DriftField::heavy_ball(f, 0.5, Form::undamped),
          rep.heavy_ball_positions, rep.heavy_ball_velocities);
  compare(DriftField::vaf(f, nesterov_schedule(), Form::damped), DriftField::vaf(f, nesterov_schedule(), Form::undamped),
          rep.vaf_positions, rep.vaf_velocities);
  return rep;
}

// ---------------------------------------------------------------------------
// Lyapunov monotonicity
// ---------------------------------------------------------------------------

/// Largest increase between consecutive samples, relative to the first value.
inline double relative_increase(const std::vector<double>& v) {
  double worst = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) worst = std::max(worst, (v[i] - v[i - 1]) / std::abs(v.front()));
  return worst;
}

struct LyapunovReport {
  double energy = 0.0;     // ℰ along heavy ball, a = 0.5
  double convex = 0.0;     // ℒ (convex) along heavy ball, a = 0.5
  double strong = 0.0;     // ℒ (strong) along heavy ball, a = 2√m
  double vaf = 0.0;        // ℒ along Nesterov
  double gap_bound = 0.0;  // max of gap − e^{−β}ℒ_{t_start}, relative to ℒ_{t_start}
};

inline LyapunovReport lyapunov_monotonicity(double tol = 1e-6, double t_end = 20.0, std::uint64_t seed = 11) {
  const Index d = 4, n = 16;
  auto f = quadratic_fixture(d, 0.1, 1.0, seed);
  const double m = f->quad().min_eigenvalue;
  const Target target = Vector(f->quad().b);
  const double t_start = 0.01;
  const PhaseEnsemble e0 = init_gaussian(n, d, seed).with_time(t_start);
  const auto cfg = tight_config(t_start, t_end, 200, tol);
  LyapunovReport rep;

  auto run = [&](const DriftField& drift) { return integrate(drift, drift.import_damped(e0), cfg).states; };
  {
    const auto states = run(DriftField::heavy_ball(f, 0.5));
    std::vector<double> en, cv;
    for (const auto& s : states) {
      en.push_back(lyapunov_hb_energy(s, 0.5, *f, 0.0).value);
      cv.push_back(lyapunov_hb_convex(s, 0.5, *f, target, 0.0).value);
    }
    rep.energy = relative_increase(en);
    rep.convex = relative_increase(cv);
  }
  {
    const auto states = run(DriftField::heavy_ball(f, 2.0 * std::sqrt(m)));
    std::vector<double> st;
    for (const auto& s : states) st.push_back(lyapunov_hb_strong(s, m, *f, target, 0.0).value);
    rep.strong = relative_increase(st);
  }
  {
    const Schedule nes = nesterov_schedule();
    const auto states = run(DriftField::vaf(f, nes));
    std::vector<double> lv;
    for (const auto& s : states) lv.push_back(lyapunov_vaf(s, nes, s.time(), *f, target, 0.0).value);
    rep.vaf = relative_increase(lv);
    const double l0 = lv.front();
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& s : states) {
      const double gap = f->evaluate_points(s.positions());
      worst = std::max(worst, (gap - std::exp(-nes.sample(s.time()).beta) * l0) / l0);
    }
    rep.gap_bound = worst;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient oracle
// ---------------------------------------------------------------------------

/// Max over entries of |FD − ∇/N| / max(|FD|, |∇/N|), with central
/// differences of step η on each particle coordinate. Entries where both
/// sides are below `floor` are compared absolutely against floor.
inline double fd_gradient_error(const ObjectiveFunctional& f, const Matrix& x, const GradientFn& grad,
                                double eta = 1e-5, double floor = 1e-10) {
  const Matrix g = grad(x) / static_cast<double>(x.rows());
  double worst = 0.0;
  Matrix xp = x;
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index k = 0; k < x.cols(); ++k) {
      xp(i, k) = x(i, k) + eta;
      const double up = f.evaluate_points(xp);
      xp(i, k) = x(i, k) - eta;
      const double dn = f.evaluate_points(xp);
      xp(i, k) = x(i, k);
      const double fd = (up - dn) / (2.0 * eta);
      const double scale = std::max({std::abs(fd), std::abs(g(i, k)), floor});
      worst = std::max(worst, std::abs(fd - g(i, k)) / scale);
    }
  }
  return worst;
}

struct FdCase {
  std::string name;
  std::shared_ptr<const ObjectiveFunctional> functional;
  Matrix points;
  GradientFn gradient;
};

/// Small random instances of every functional kind (N ≤ 8, d ≤ 4), including
/// blob-KL at ε = 1, N = 8, d = 2.
inline std::vector<FdCase> fd_cases(const Options& opt = {}, std::uint64_t seed = 17) {
  std::vector<FdCase> out;
  auto plain = [](std::shared_ptr<const ObjectiveFunctional> f) {
    return [f](const Matrix& x) { return f->gradient_points(x); };
  };
  auto gaussian = [](Index n, Index d, std::uint64_t s, double sd) {
    Matrix x = init_gaussian(n, d, s).positions();
    return Matrix(sd * x);
  };

  auto quad = quadratic_fixture(4, 0.1, 2.0, seed);
  out.push_back({"quadratic", quad, gaussian(6, 4, seed, 1.0), plain(quad)});

  {
    Pcg32 rng(seed, 3);
    Matrix w(5, 3);
    Vector q(5);
    for (Index i = 0; i < 5; ++i) {
      for (Index k = 0; k < 3; ++k) w(i, k) = rng.normal();
      q(i) = rng.normal();
    }
    auto lse = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::logsumexp(w, q, 0.7));
    out.push_back({"logsumexp", lse, gaussian(5, 3, seed + 1, 1.0), plain(lse)});
  }

  {
    auto q = quadratic_fixture(2, 0.3, 1.5, seed + 2);
    auto blob = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::blob_kl(q->quad(), 1.0));
    GradientFn g = plain(blob);
    if (opt.inject_blob_sign_error) {
      const auto pot = q->quad();
      g = [blob, pot](const Matrix& x) {
        Matrix gr = blob->gradient_points(x);
        for (Index i = 0; i < x.rows(); ++i) {
          const Vector gg = pot.gradient(x.row(i).transpose());
          gr.row(i) = 2.0 * gg.transpose() - gr.row(i);
        }
        return gr;
      };
    }
    out.push_back({"blob_kl", blob, gaussian(8, 2, seed + 3, 1.0), g});
  }

  {
    Pcg32 rng(seed, 5);
    Matrix dx(12, 1);
    Vector dy(12);
    for (Index p = 0; p < 12; ++p) {
      dx(p, 0) = rng.uniform(-1.0, 1.0);
      dy(p) = std::sin(std::numbers::pi * dx(p, 0));
    }
    auto net = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::two_layer_net(dx, dy));
    out.push_back({"two_layer_net", net, gaussian(8, 4, seed + 4, 1.0), plain(net)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// W₂ against brute force
// ---------------------------------------------------------------------------

inline double brute_force_w2(const Matrix& x, const Matrix& y) {
  std::vector<Index> perm(static_cast<std::size_t>(x.rows()));
  std::iota(perm.begin(), perm.end(), Index{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    best = std::min(best, coupling_cost(x, y, perm));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Random instances with N ≤ 6 where the assignment solver's cost differs
/// from the exhaustive minimum.
inline std::size_t w2_mismatches(std::size_t instances = 50, std::uint64_t seed = 23) {
  Pcg32 rng(seed, 9);
  std::size_t bad = 0;
  for (std::size_t k = 0; k < instances; ++k) {
    const Index n = 1 + static_cast<Index>(rng.next_u32() % 6);
    const Index d = 1 + static_cast<Index>(rng.next_u32() % 3);
    Matrix x(n, d), y(n, d);
    for (Index i = 0; i < n; ++i)
      for (Index c = 0; c < d; ++c) x(i, c) = rng.normal(), y(i, c) = rng.normal();
    const double exact = w2_squared(EmpiricalMeasure(x), EmpiricalMeasure(y)).cost;
    if (exact != brute_force_w2(x, y)) ++bad;
  }
  return bad;
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

inline std::vector<CheckResult> run_suite(const Options& opt = {}) {
  std::vector<CheckResult> out;
  auto add = [&](std::string name, double value, double limit) {
    out.push_back({std::move(name), value <= limit, fmt_short(value) + " <= " + fmt_short(limit)});
  };

  const auto dirac = dirac_consistency();
  add("dirac consistency: heavy ball", dirac.heavy_ball, 1e-6);
  add("dirac consistency: nesterov", dirac.nesterov, 1e-6);
  add("dirac consistency: exponential", dirac.exponential, 1e-6);

  const auto push = pushforward_equivalence();
  add("pushforward: heavy ball positions", push.heavy_ball_positions, 1e-5);
  add("pushforward: vaf positions", push.vaf_positions, 1e-5);

  const auto lyap = lyapunov_monotonicity();
  add("lyapunov: energy nonincreasing", lyap.energy, 1e-7);
  add("lyapunov: heavy ball convex nonincreasing", lyap.convex, 1e-7);
  add("lyapunov: heavy ball strong nonincreasing", lyap.strong, 1e-7);
  add("lyapunov: vaf nonincreasing", lyap.vaf, 1e-6);
  add("lyapunov: gap bound", lyap.gap_bound, 0.0);

  for (const auto& c : fd_cases(opt)) add("fd gradient: " + c.name, fd_gradient_error(*c.functional, c.points, c.gradient), 1e-4);

  const auto bad = w2_mismatches();
  out.push_back({"w2 assignment vs brute force", bad == 0, std::to_string(bad) + " of 50 instances differ"});
  return out;
}

inline bool report(std::ostream& os, const std::vector<CheckResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    os << (r.pass ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
    ok = ok && r.pass;
  }
  return ok;
}

}  // namespace wflow::verify
