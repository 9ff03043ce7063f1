#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "wflow/ensemble.hpp"
#include "wflow/flows.hpp"
#include "wflow/format.hpp"
#include "wflow/functionals.hpp"
#include "wflow/integrator.hpp"
#include "wflow/rng.hpp"
#include "wflow/schedules.hpp"
#include "wflow/transport.hpp"

namespace wflow {

// ---------------------------------------------------------------------------
// Problems
// ---------------------------------------------------------------------------

enum class ProblemKind { quadratic_potential, logsumexp_potential, blob_kl_quadratic, blob_kl_logsumexp, two_layer_net };

inline std::string_view to_string(ProblemKind k) {
  switch (k) {
    case ProblemKind::quadratic_potential: return "quadratic_potential";
    case ProblemKind::logsumexp_potential: return "logsumexp_potential";
    case ProblemKind::blob_kl_quadratic: return "blob_kl_quadratic";
    case ProblemKind::blob_kl_logsumexp: return "blob_kl_logsumexp";
    case ProblemKind::two_layer_net: return "two_layer_net";
  }
  return "?";
}

inline std::optional<ProblemKind> parse_problem_kind(std::string_view s) {
  for (auto k : {ProblemKind::quadratic_potential, ProblemKind::logsumexp_potential, ProblemKind::blob_kl_quadratic,
                 ProblemKind::blob_kl_logsumexp, ProblemKind::two_layer_net})
    if (s == to_string(k)) return k;
  return std::nullopt;
}

struct ProblemSpec {
  ProblemKind kind = ProblemKind::quadratic_potential;
  Index dim = 10;             // d (input dimension dₓ for two_layer_net)
  double eig_min = 1e-5;      // SPD spectrum
  double eig_max = 1.0;
  double b_variance = 100.0;  // b ~ N(0, b_variance·I)
  Index terms = 1000;         // M for log-sum-exp
  double h = 20.0;
  double epsilon = 1.0;       // blob bandwidth
  Index samples = 500;        // P for two_layer_net
  std::uint64_t seed = 1;

  void validate() const {
    if (dim < 1) throw std::invalid_argument("problem: dim must be >= 1");
    if (!(eig_min > 0.0) || !(eig_min <= eig_max)) throw std::invalid_argument("problem: need 0 < eig_min <= eig_max");
    if (!(b_variance >= 0.0)) throw std::invalid_argument("problem: b_variance must be >= 0");
    if (terms < 1) throw std::invalid_argument("problem: terms must be >= 1");
    if (!(h > 0.0)) throw std::invalid_argument("problem: h must be > 0");
    if (!(epsilon > 0.0)) throw std::invalid_argument("problem: epsilon must be > 0");
    if (samples < 1) throw std::invalid_argument("problem: samples must be >= 1");
  }
};

struct Problem {
  std::shared_ptr<const ObjectiveFunctional> functional;
  std::optional<double> strong_convexity;  // m, when the spectrum is known
  Index particle_dim = 0;
};

namespace detail {
// Separate PCG32 streams per generated quantity.
inline constexpr std::uint64_t kStreamOffset = 0x9e3779b97f4a7c15ULL;
inline constexpr std::uint64_t kStreamLinear = 0xb5297a4d3f84d5b5ULL;
inline constexpr std::uint64_t kStreamData = 0x68e31da4b3c5a7f1ULL;

inline QuadraticPotential make_quadratic_potential(const ProblemSpec& p) {
  auto spd = make_spd_matrix(p.dim, p.eig_min, p.eig_max, p.seed);
  Pcg32 rng(p.seed, kStreamOffset);
  Vector b(p.dim);
  const double sd = std::sqrt(p.b_variance);
  for (Index i = 0; i < p.dim; ++i) b(i) = sd * rng.normal();
  const auto f = ObjectiveFunctional::quadratic(std::move(spd.matrix), std::move(b));
  return f.quad();
}

inline LogSumExpPotential make_logsumexp_potential(const ProblemSpec& p) {
  Pcg32 rng(p.seed, kStreamLinear);
  Matrix w(p.terms, p.dim);
  for (Index i = 0; i < w.rows(); ++i)
    for (Index k = 0; k < w.cols(); ++k) w(i, k) = rng.normal();
  Vector q(p.terms);
  for (Index i = 0; i < q.size(); ++i) q(i) = rng.normal();
  return {std::move(w), std::move(q), p.h};
}
}  // namespace detail

/// Builds the objective for a problem spec. All random quantities come from
/// PCG32 streams keyed by the problem seed.
inline Problem generate_problem(const ProblemSpec& p) {
  p.validate();
  Problem out;
  switch (p.kind) {
    case ProblemKind::quadratic_potential: {
      auto q = detail::make_quadratic_potential(p);
      out.strong_convexity = q.min_eigenvalue;
      out.functional = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::quadratic(q.A, q.b));
      break;
    }
    case ProblemKind::logsumexp_potential: {
      auto l = detail::make_logsumexp_potential(p);
      out.functional = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::logsumexp(l.W, l.q, l.h));
      break;
    }
    case ProblemKind::blob_kl_quadratic: {
      auto q = detail::make_quadratic_potential(p);
      out.functional = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::blob_kl(q, p.epsilon));
      break;
    }
    case ProblemKind::blob_kl_logsumexp: {
      auto l = detail::make_logsumexp_potential(p);
      out.functional = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::blob_kl(l, p.epsilon));
      break;
    }
    case ProblemKind::two_layer_net: {
      Pcg32 rng(p.seed, detail::kStreamData);
      Matrix x(p.samples, p.dim);
      for (Index i = 0; i < x.rows(); ++i)
        for (Index k = 0; k < x.cols(); ++k) x(i, k) = rng.uniform(-1.0, 1.0);
      Vector y(p.samples);
      // f(x) = sin(π x₁)
      for (Index i = 0; i < y.size(); ++i) y(i) = std::sin(std::numbers::pi * x(i, 0));
      out.functional = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::two_layer_net(x, y));
      break;
    }
  }
  out.particle_dim = out.functional->dim();
  return out;
}

// ---------------------------------------------------------------------------
// Methods
// ---------------------------------------------------------------------------

struct MethodSpec {
  std::string label;
  Family family = Family::wgf;
  Form form = Form::damped;
  double a = 0.5;                      // heavy_ball, kalman, stein
  std::string schedule = "nesterov";   // vaf, bregman: nesterov | exponential | mirror | custom
  double mirror_r = 2.0;
  AffineLogCoeffs custom_alpha, custom_beta, custom_gamma;
  double dilation_power = 2.0;         // τ(t) = t^{p/2}; p = 2 is no dilation
  double lambda = 0.0;                 // kalman
  double bandwidth = 1.0;              // stein
  std::optional<double> t_end;         // per-method horizon override
};

/// WGF, HB, Nes, Exp, Kalman, Stein, Bregman.
inline std::optional<MethodSpec> method_preset(std::string_view name) {
  MethodSpec m;
  m.label = std::string(name);
  if (name == "WGF") {
    m.family = Family::wgf;
  } else if (name == "HB") {
    m.family = Family::heavy_ball;
  } else if (name == "Nes") {
    m.family = Family::vaf;
    m.schedule = "nesterov";
  } else if (name == "Exp") {
    m.family = Family::vaf;
    m.schedule = "exponential";
  } else if (name == "Kalman") {
    m.family = Family::kalman;
  } else if (name == "Stein") {
    m.family = Family::stein;
  } else if (name == "Bregman") {
    m.family = Family::bregman;
    m.schedule = "mirror";
  } else {
    return std::nullopt;
  }
  return m;
}

inline Schedule build_schedule(const MethodSpec& m) {
  Schedule s;
  if (m.schedule == "nesterov")
    s = nesterov_schedule();
  else if (m.schedule == "exponential")
    s = exponential_schedule();
  else if (m.schedule == "mirror")
    s = mirror_schedule(m.mirror_r);
  else if (m.schedule == "custom")
    s = affine_log_schedule(m.custom_alpha, m.custom_beta, m.custom_gamma);
  else
    throw std::invalid_argument("unknown schedule '" + m.schedule + "'");
  if (m.dilation_power != 2.0) s = time_dilate(s, power_dilation(m.dilation_power));
  return s;
}

inline DriftField build_drift(const MethodSpec& m, std::shared_ptr<const ObjectiveFunctional> f) {
  switch (m.family) {
    case Family::wgf: return DriftField::wgf(std::move(f));
    case Family::heavy_ball: return DriftField::heavy_ball(std::move(f), m.a, m.form);
    case Family::vaf: return DriftField::vaf(std::move(f), build_schedule(m), m.form);
    case Family::kalman: return DriftField::kalman(std::move(f), m.a, m.lambda);
    case Family::stein: return DriftField::stein(std::move(f), m.a, m.bandwidth);
    case Family::bregman: return DriftField::bregman(std::move(f), build_schedule(m));
  }
  throw std::invalid_argument("unknown flow family");
}

// ---------------------------------------------------------------------------
// Experiment spec and traces
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& known_diagnostics() {
  static const std::vector<std::string> d = {"energy", "lyapunov_convex", "lyapunov_strong", "lyapunov_vaf"};
  return d;
}

struct ExperimentSpec {
  std::string name = "experiment";
  ProblemSpec problem;
  std::vector<MethodSpec> methods;
  Index particles = 50;
  std::uint64_t init_seed = 1;
  IntegratorConfig integrator;  // record_times filled from record_count
  std::size_t record_count = 200;
  /// The `lyapunov` column is the first entry that applies to a method.
  std::vector<std::string> diagnostics = {"lyapunov_convex", "lyapunov_vaf", "energy"};
  std::vector<double> gap_levels;
  unsigned threads = 0;  // 0: WFLOW_THREADS or hardware concurrency

  void validate() const {
    problem.validate();
    if (methods.empty()) throw std::invalid_argument("experiment: method list is empty");
    if (particles < 1) throw std::invalid_argument("experiment: particles must be >= 1");
    if (record_count < 1) throw std::invalid_argument("experiment: record_count must be >= 1");
    IntegratorConfig c = integrator;
    c.record_times.clear();
    c.validate();
    for (const auto& d : diagnostics)
      if (std::find(known_diagnostics().begin(), known_diagnostics().end(), d) == known_diagnostics().end())
        throw std::invalid_argument("experiment: unknown diagnostic '" + d + "'");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      const auto& m = methods[i];
      if (m.label.empty()) throw std::invalid_argument("experiment: method label must be non-empty");
      for (std::size_t j = 0; j < i; ++j)
        if (methods[j].label == m.label) throw std::invalid_argument("experiment: duplicate method label '" + m.label + "'");
      if (m.t_end && !(*m.t_end > integrator.t_start))
        throw std::invalid_argument("experiment: method '" + m.label + "' t_end must exceed t_start");
      if ((m.family == Family::heavy_ball || m.family == Family::kalman || m.family == Family::stein) && !(m.a > 0.0))
        throw std::invalid_argument("experiment: method '" + m.label + "' needs a > 0");
    }
    for (std::size_t i = 0; i < gap_levels.size(); ++i) {
      if (!(gap_levels[i] > 0.0)) throw std::invalid_argument("experiment: gap levels must be positive");
      if (i > 0 && !(gap_levels[i] < gap_levels[i - 1]))
        throw std::invalid_argument("experiment: gap levels must be strictly decreasing");
    }
  }
};

enum class EStarProvenance { analytic, estimated, given };

inline std::string_view to_string(EStarProvenance p) {
  switch (p) {
    case EStarProvenance::analytic: return "analytic";
    case EStarProvenance::estimated: return "estimated";
    case EStarProvenance::given: return "given";
  }
  return "?";
}

struct TraceRow {
  double t = 0.0;
  double energy = 0.0;
  double gap = 0.0;
  double kinetic = 0.0;
  double lyapunov = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> diagnostics;  // one per spec.diagnostics entry, NaN if not applicable
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
};

/// Energy after an accepted step, with cumulative step counts.
struct StepSample {
  double t;
  double energy;
  std::size_t total_steps;
};

struct MethodTrace {
  MethodSpec method;
  RunStatus status = RunStatus::completed;
  std::string message;
  std::vector<TraceRow> rows;
  std::vector<StepSample> steps;
  std::vector<PhaseEnsemble> snapshots;  // damped-form velocities
  std::size_t accepted_steps = 0;
  std::size_t rejected_steps = 0;
  double t_final = 0.0;

  double min_energy() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& r : rows) m = std::min(m, r.energy);
    for (const auto& s : steps) m = std::min(m, s.energy);
    return m;
  }
};

struct ComparisonResult {
  std::string name;
  std::vector<MethodTrace> traces;
  double e_star = 0.0;
  EStarProvenance provenance = EStarProvenance::estimated;
  std::vector<std::string> diagnostics;

  bool all_completed() const {
    return std::all_of(traces.begin(), traces.end(), [](const MethodTrace& t) { return t.status == RunStatus::completed; });
  }
};

/// E∗ = min over every completed run of every energy evaluated along it.
inline double estimate_E_star(const std::vector<MethodTrace>& traces) {
  double best = std::numeric_limits<double>::infinity();
  bool any = false;
  for (const auto& t : traces) {
    if (t.status != RunStatus::completed) continue;
    any = true;
    best = std::min(best, t.min_energy());
  }
  if (!any) throw std::runtime_error("estimate_E_star: no completed runs");
  return best;
}

inline unsigned thread_budget(unsigned requested) {
  if (requested > 0) return requested;
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("WFLOW_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) n = std::min(n, static_cast<unsigned>(v));
  }
  return n;
}

/// Runs f(i) for i in [0, count) on up to `threads` workers; results are
/// written by index so output order never depends on scheduling.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& f) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  std::atomic<std::size_t> next{0};
  for (unsigned w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          f(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

namespace detail {

inline bool uses_schedule(const MethodSpec& m) { return m.family == Family::vaf || m.family == Family::bregman; }

/// Value of one diagnostic for a snapshot carrying damped-form velocities,
/// or NaN when it does not apply to the method.
inline double diagnostic_value(const std::string& name, const MethodSpec& m, const Schedule* sched,
                               const PhaseEnsemble& snap, const ObjectiveFunctional& f, const std::optional<Target>& target,
                               std::optional<double> strong_m, double e_star) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (name == "energy") return lyapunov_hb_energy(snap, m.a, f, e_star).value;
  if (!target) return nan;
  if (name == "lyapunov_convex") {
    if (m.family != Family::heavy_ball) return nan;
    return lyapunov_hb_convex(snap, m.a, f, *target, e_star).value;
  }
  if (name == "lyapunov_strong") {
    if (m.family != Family::heavy_ball || !strong_m) return nan;
    return lyapunov_hb_strong(snap, *strong_m, f, *target, e_star).value;
  }
  if (name == "lyapunov_vaf") {
    if (!sched) return nan;
    return lyapunov_vaf(snap, *sched, snap.time(), f, *target, e_star).value;
  }
  return nan;
}

}  // namespace detail

/// Integrates one method from the shared initial ensemble (damped-form
/// velocities at t_start) and stores damped-form snapshots at record times.
inline MethodTrace run_method(const MethodSpec& m, const Problem& problem, const PhaseEnsemble& init,
                              const ExperimentSpec& spec) {
  const DriftField drift = build_drift(m, problem.functional);
  IntegratorConfig cfg = spec.integrator;
  if (m.t_end) cfg.t_end = *m.t_end;
  cfg.record_times = uniform_times(cfg.t_start, cfg.t_end, spec.record_count);
  const ObjectiveFunctional& f = *problem.functional;

  MethodTrace tr;
  tr.method = m;
  auto observe = [&](const ParticleStep& s) {
    tr.steps.push_back({s.t, f.evaluate_points(s.positions), s.accepted + s.rejected});
  };
  const RunRecord rec = integrate(drift, drift.import_damped(init.with_time(cfg.t_start)), cfg, observe);
  tr.status = rec.status;
  tr.message = rec.message;
  tr.accepted_steps = rec.accepted_steps;
  tr.rejected_steps = rec.rejected_steps;
  tr.t_final = rec.t_final;

  tr.snapshots.reserve(rec.states.size());
  for (const auto& st : rec.states) tr.snapshots.emplace_back(st.positions(), drift.damped_velocity(st), st.time());
  tr.rows.resize(rec.states.size());
  for (std::size_t i = 0; i < rec.states.size(); ++i) {
    auto& row = tr.rows[i];
    row.t = rec.times[i];
    row.energy = f.evaluate_points(tr.snapshots[i].positions());
    row.kinetic = kinetic_energy(tr.snapshots[i], 1.0);
    // step counts of the first accepted step reaching this record time
    auto it = std::lower_bound(tr.steps.begin(), tr.steps.end(), row.t,
                               [](const StepSample& s, double t) { return s.t < t; });
    if (it == tr.steps.end()) --it;
    const std::size_t idx = static_cast<std::size_t>(it - tr.steps.begin());
    row.accepted_steps = idx;
    row.rejected_steps = it->total_steps - idx;
  }
  return tr;
}

/// Fills gaps and diagnostics once E∗ and the target are known.
inline void finish_traces(ComparisonResult& res, const Problem& problem, const ExperimentSpec& spec,
                          const std::optional<Target>& target) {
  const ObjectiveFunctional& f = *problem.functional;
  for (auto& tr : res.traces) {
    std::optional<Schedule> sched;
    if (detail::uses_schedule(tr.method)) sched = build_schedule(tr.method);
    for (std::size_t i = 0; i < tr.rows.size(); ++i) {
      auto& row = tr.rows[i];
      row.gap = row.energy - res.e_star;
      row.diagnostics.assign(spec.diagnostics.size(), std::numeric_limits<double>::quiet_NaN());
      row.lyapunov = std::numeric_limits<double>::quiet_NaN();
      for (std::size_t k = 0; k < spec.diagnostics.size(); ++k) {
        row.diagnostics[k] = detail::diagnostic_value(spec.diagnostics[k], tr.method, sched ? &*sched : nullptr,
                                                      tr.snapshots[i], f, target, problem.strong_convexity, res.e_star);
        if (std::isnan(row.lyapunov) && !std::isnan(row.diagnostics[k])) row.lyapunov = row.diagnostics[k];
      }
    }
  }
}

/// Shared Gaussian initial conditions; every method integrates from the
/// same ensemble (WGF keeps positions only).
inline ComparisonResult run_comparison(const ExperimentSpec& spec, std::optional<double> e_star_override = {}) {
  spec.validate();
  const Problem problem = generate_problem(spec.problem);
  const PhaseEnsemble init = init_gaussian(spec.particles, problem.particle_dim, spec.init_seed);

  ComparisonResult res;
  res.name = spec.name;
  res.diagnostics = spec.diagnostics;
  res.traces.resize(spec.methods.size());
  parallel_for(spec.methods.size(), thread_budget(spec.threads),
               [&](std::size_t i) { res.traces[i] = run_method(spec.methods[i], problem, init, spec); });

  std::optional<Target> target;
  if (e_star_override) {
    res.e_star = *e_star_override;
    res.provenance = EStarProvenance::given;
  } else if (auto opt = problem.functional->known_optimum()) {
    res.e_star = *opt;
    res.provenance = EStarProvenance::analytic;
  } else {
    res.e_star = estimate_E_star(res.traces);
    res.provenance = EStarProvenance::estimated;
  }
  if (auto xs = problem.functional->known_minimizer()) {
    target = *xs;
  } else {
    // empirical proxy: final particles of the completed run with the lowest final energy
    const MethodTrace* best = nullptr;
    for (const auto& t : res.traces)
      if (t.status == RunStatus::completed && !t.rows.empty() &&
          (!best || t.rows.back().energy < best->rows.back().energy))
        best = &t;
    if (best) target = EmpiricalMeasure(best->snapshots.back().positions());
  }
  const bool needs_target = std::any_of(spec.diagnostics.begin(), spec.diagnostics.end(),
                                        [](const std::string& d) { return d != "energy"; });
  finish_traces(res, problem, spec, needs_target ? target : std::nullopt);
  return res;
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

struct SweepRow {
  std::string method;
  double gap_level;
  double total_steps;  // +inf if the level is never reached within the horizon
};

/// Attempted steps consumed until the running gap first drops below each level.
inline std::vector<SweepRow> sweep_table(const ComparisonResult& res, const std::vector<double>& gap_levels) {
  std::vector<SweepRow> out;
  for (const auto& tr : res.traces) {
    for (double level : gap_levels) {
      double steps = std::numeric_limits<double>::infinity();
      for (const auto& s : tr.steps) {
        if (s.energy - res.e_star < level) {
          steps = static_cast<double>(s.total_steps);
          break;
        }
      }
      out.push_back({tr.method.label, level, steps});
    }
  }
  return out;
}

inline std::vector<SweepRow> sweep_steps_vs_tolerance(const ExperimentSpec& spec, const std::vector<double>& gap_levels) {
  ExperimentSpec s = spec;
  s.gap_levels = gap_levels;
  s.validate();
  return sweep_table(run_comparison(s), gap_levels);
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline void write_trace_csv(std::ostream& out, const MethodTrace& tr, const std::vector<std::string>& diagnostics) {
  out << "t,energy,gap,kinetic,lyapunov,accepted_steps,rejected_steps,status";
  for (const auto& d : diagnostics) out << ',' << d;
  out << '\n';
  for (std::size_t i = 0; i < tr.rows.size(); ++i) {
    const auto& r = tr.rows[i];
    out << fmt17(r.t) << ',' << fmt17(r.energy) << ',' << fmt17(r.gap) << ',' << fmt17(r.kinetic) << ','
        << fmt17(r.lyapunov) << ',' << r.accepted_steps << ',' << r.rejected_steps << ','
        << (i + 1 == tr.rows.size() ? to_string(tr.status) : std::string_view("completed"));
    for (double v : r.diagnostics) out << ',' << fmt17(v);
    out << '\n';
  }
}

inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "method,gap_level,total_steps\n";
  for (const auto& r : rows) {
    out << r.method << ',' << fmt17(r.gap_level) << ',';
    if (std::isinf(r.total_steps))
      out << "inf";
    else
      out << static_cast<std::uint64_t>(r.total_steps);
    out << '\n';
  }
}

inline void write_summary(std::ostream& out, const ComparisonResult& res) {
  out << "experiment: " << res.name << '\n';
  out << "E_star: " << fmt17(res.e_star) << " (" << to_string(res.provenance) << ")\n";
  out << "method,status,t_final,final_energy,final_gap,accepted_steps,rejected_steps,total_steps\n";
  for (const auto& t : res.traces) {
    const double e = t.rows.empty() ? std::numeric_limits<double>::quiet_NaN() : t.rows.back().energy;
    out << t.method.label << ',' << to_string(t.status) << ',' << fmt17(t.t_final) << ',' << fmt17(e) << ','
        << fmt17(e - res.e_star) << ',' << t.accepted_steps << ',' << t.rejected_steps << ','
        << t.accepted_steps + t.rejected_steps << '\n';
  }
  for (const auto& t : res.traces)
    if (t.status != RunStatus::completed) out << "note: " << t.method.label << ": " << t.message << '\n';
}

// ---------------------------------------------------------------------------
// Rate fits
// ---------------------------------------------------------------------------

/// Least-squares slope of y against x.
inline double fit_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0.0 ? sxy / sxx : std::numeric_limits<double>::quiet_NaN();
}

/// Slope of log(gap) against t (log_time = false) or log t, over rows with
/// t in [t0, t1], stopping at the first gap below `floor`.
inline double gap_rate(const MethodTrace& tr, double t0, double t1, bool log_time, double floor = 0.0) {
  std::vector<double> xs, ys;
  for (const auto& r : tr.rows) {
    if (r.t < t0 || r.t > t1) continue;
    if (!(r.gap > floor)) break;
    xs.push_back(log_time ? std::log(r.t) : r.t);
    ys.push_back(std::log(r.gap));
  }
  return fit_slope(xs, ys);
}

}  // namespace wflow
