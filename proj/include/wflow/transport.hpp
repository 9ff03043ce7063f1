#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <variant>
#include <vector>

#include "wflow/ensemble.hpp"
#include "wflow/flows.hpp"
#include "wflow/functionals.hpp"
#include "wflow/schedules.hpp"
#include "wflow/types.hpp"

namespace wflow {

struct CouplingPlan {
  std::vector<Index> permutation;  // x_i is sent to y_{permutation[i]}
  double cost = 0.0;               // (1/N)Σ‖x_i − y_π(i)‖²
};

/// Minimum-cost perfect assignment on a square cost matrix by shortest
/// augmenting paths with dual potentials (Hungarian method, O(N³)).
/// Returns row → column.
inline std::vector<Index> solve_assignment(const Eigen::MatrixXd& cost) {
  const Index n = cost.rows();
  if (cost.cols() != n) throw std::invalid_argument("solve_assignment: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  // 1-based arrays; column 0 is a virtual start.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<Index> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (Index i = 1; i <= n; ++i) {
    p[0] = i;
    Index j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const Index i0 = p[j0];
      double delta = inf;
      Index j1 = 0;
      for (Index j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (Index j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const Index j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<Index> row_to_col(n);
  for (Index j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

inline Eigen::MatrixXd squared_distance_matrix(const Matrix& x, const Matrix& y) {
  Eigen::MatrixXd c(x.rows(), y.rows());
  for (Index i = 0; i < x.rows(); ++i)
    for (Index j = 0; j < y.rows(); ++j) c(i, j) = (x.row(i) - y.row(j)).squaredNorm();
  return c;
}

/// (1/N)Σ‖x_i − y_π(i)‖².
inline double coupling_cost(const Matrix& x, const Matrix& y, const std::vector<Index>& perm) {
  std::vector<double> per(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i)
    per[static_cast<std::size_t>(i)] = (x.row(i) - y.row(perm[static_cast<std::size_t>(i)])).squaredNorm();
  return order_free_sum(std::move(per)) / static_cast<double>(x.rows());
}

/// Exact squared 2-Wasserstein distance between equal-size uniform measures.
inline CouplingPlan w2_squared(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.size() != nu.size())
    throw std::invalid_argument("w2_squared: point counts differ (unbalanced transport unsupported)");
  if (mu.dim() != nu.dim()) throw std::invalid_argument("w2_squared: dimensions differ");
  CouplingPlan plan;
  plan.permutation = solve_assignment(squared_distance_matrix(mu.points(), nu.points()));
  plan.cost = coupling_cost(mu.points(), nu.points(), plan.permutation);
  return plan;
}

inline double w2_squared_to_point(const EmpiricalMeasure& mu, const Vector& p) {
  if (p.size() != mu.dim()) throw std::invalid_argument("w2_squared_to_point: dimension mismatch");
  const Vector per = (mu.points().rowwise() - p.transpose()).rowwise().squaredNorm();
  return order_free_sum(per) / static_cast<double>(mu.size());
}

// ---------------------------------------------------------------------------
// Lyapunov diagnostics
// ---------------------------------------------------------------------------

/// Minimizer representation: a Dirac at a point, or an equal-size empirical proxy.
using Target = std::variant<Vector, EmpiricalMeasure>;

/// value = quadratic + cross + kinetic + gap.
struct LyapunovSample {
  double value = 0.0;
  double quadratic = 0.0;
  double cross = 0.0;
  double kinetic = 0.0;
  double gap = 0.0;
};

namespace detail {

/// Matched target point for each particle: rows of the returned matrix.
inline Matrix matched_targets(const Matrix& x, const Target& target) {
  if (const auto* p = std::get_if<Vector>(&target)) {
    if (p->size() != x.cols()) throw std::invalid_argument("lyapunov: target dimension mismatch");
    return Matrix(p->transpose().replicate(x.rows(), 1));
  }
  const auto& nu = std::get<EmpiricalMeasure>(target);
  if (nu.size() != x.rows())
    throw std::invalid_argument("lyapunov: empirical target must have the same number of points as the ensemble");
  if (nu.dim() != x.cols()) throw std::invalid_argument("lyapunov: target dimension mismatch");
  const auto plan = w2_squared(EmpiricalMeasure(x), nu);
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) y.row(i) = nu.points().row(plan.permutation[static_cast<std::size_t>(i)]);
  return y;
}

/// w·½‖x + c·u − y‖² averaged over the coupling, split into components,
/// plus gap_weight·gap; everything times `outer`.
inline LyapunovSample shifted_quadratic(const Matrix& x, const Matrix& u, const Target& target, double w, double c,
                                        double gap, double gap_weight, double outer) {
  const Matrix y = matched_targets(x, target);
  const double n = static_cast<double>(x.rows());
  const Matrix r = x - y;
  LyapunovSample s;
  s.quadratic = outer * w * 0.5 * order_free_sum(r.rowwise().squaredNorm()) / n;
  s.cross = outer * w * c * order_free_sum((r.array() * u.array()).rowwise().sum()) / n;
  s.kinetic = outer * w * 0.5 * c * c * order_free_sum(u.rowwise().squaredNorm()) / n;
  s.gap = outer * gap_weight * gap;
  s.value = s.quadratic + s.cross + s.kinetic + s.gap;
  return s;
}

}  // namespace detail

/// ℰ = ½‖scale·v‖² + E − E∗ with scale = e^{−at} for undamped states, 1 for damped.
inline LyapunovSample lyapunov_hb_energy(const PhaseEnsemble& e, double a, const ObjectiveFunctional& f,
                                         double e_star, Form form = Form::damped) {
  const double scale = form == Form::damped ? 1.0 : std::exp(-a * e.time());
  LyapunovSample s;
  s.kinetic = kinetic_energy(e, scale);
  s.gap = f.evaluate_points(e.positions()) - e_star;
  s.value = s.kinetic + s.gap;
  return s;
}

/// ℒ = ½‖x + u/a − y‖² over the coupling + (E − E∗)/a², damped velocities u.
inline LyapunovSample lyapunov_hb_convex(const PhaseEnsemble& e, double a, const ObjectiveFunctional& f,
                                         const Target& target, double e_star) {
  if (!(a > 0.0)) throw std::invalid_argument("lyapunov_hb_convex: a must be > 0");
  const double gap = f.evaluate_points(e.positions()) - e_star;
  return detail::shifted_quadratic(e.positions(), e.velocities(), target, 1.0, 1.0 / a, gap, 1.0 / (a * a), 1.0);
}

/// ℒ = e^{√m t}(m/2‖x + u/√m − y‖² + E − E∗), damped velocities u with a = 2√m.
inline LyapunovSample lyapunov_hb_strong(const PhaseEnsemble& e, double m, const ObjectiveFunctional& f,
                                         const Target& target, double e_star) {
  if (!(m > 0.0)) throw std::invalid_argument("lyapunov_hb_strong: m must be > 0");
  const double sm = std::sqrt(m);
  const double gap = f.evaluate_points(e.positions()) - e_star;
  return detail::shifted_quadratic(e.positions(), e.velocities(), target, m, 1.0 / sm, gap, 1.0,
                                   std::exp(sm * e.time()));
}

/// ℒ = ½‖x + e^{−γ}v − y‖² over the coupling + e^{β}(E − E∗), with v the
/// undamped velocity (v = e^{γ−α}u for damped states).
inline LyapunovSample lyapunov_vaf(const PhaseEnsemble& e, const Schedule& s, double t, const ObjectiveFunctional& f,
                                   const Target& target, double e_star, Form form = Form::damped) {
  const auto p = s.sample(t);
  const double gap = f.evaluate_points(e.positions()) - e_star;
  // e^{−γ}v = e^{−α}u in damped coordinates
  const double c = form == Form::damped ? std::exp(-p.alpha) : std::exp(-p.gamma);
  return detail::shifted_quadratic(e.positions(), e.velocities(), target, 1.0, c, gap, p.rate_scale, 1.0);
}

}  // namespace wflow
