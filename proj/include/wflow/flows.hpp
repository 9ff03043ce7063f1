#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>

#include "wflow/ensemble.hpp"
#include "wflow/functionals.hpp"
#include "wflow/rng.hpp"
#include "wflow/schedules.hpp"
#include "wflow/types.hpp"

namespace wflow {

enum class Family { wgf, heavy_ball, vaf, kalman, stein, bregman };
enum class Form { damped, undamped };

inline std::string_view to_string(Family f) {
  switch (f) {
    case Family::wgf: return "wgf";
    case Family::heavy_ball: return "hb";
    case Family::vaf: return "vaf";
    case Family::kalman: return "kalman";
    case Family::stein: return "stein";
    case Family::bregman: return "bregman";
  }
  return "?";
}

inline std::string_view to_string(Form f) { return f == Form::damped ? "damped" : "undamped"; }

struct PhaseDrift {
  Matrix dx;
  Matrix dv;
};

/// Mirror maps ∇ψ and ∇ψ*, applied row-wise to particle arrays.
struct Mirror {
  std::function<Matrix(const Matrix&)> grad_psi;
  std::function<Matrix(const Matrix&)> grad_psi_star;
  std::string name;

  static Mirror quadratic() {
    return {[](const Matrix& x) { return x; }, [](const Matrix& z) { return z; }, "quadratic"};
  }

  /// max_i ‖∇ψ*(∇ψ(x_i)) − x_i‖ over the rows of x.
  double inverse_error(const Matrix& x) const {
    return (grad_psi_star(grad_psi(x)) - x).rowwise().norm().maxCoeff();
  }
};

/// Thrown from a drift evaluation when the force scale leaves double range.
struct ScaleOverflow : std::runtime_error {
  double t;
  explicit ScaleOverflow(double time)
      : std::runtime_error("force scale exceeds 1e300 at t = " + fmt_short(time)), t(time) {}
};

inline constexpr double kScaleLimit = 1e300;

namespace detail {

using MatRef = Eigen::Ref<const Matrix>;

inline void check_scale(double s, double t) {
  if (!(s <= kScaleLimit)) throw ScaleOverflow(t);
}

inline void heavy_ball_into(const ObjectiveFunctional& f, MatRef x, MatRef v, double a, Form form, double t,
                            Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) {
  const Matrix g = f.gradient_points(x);
  if (form == Form::damped) {
    dx = v;
    dv = -a * v - g;
  } else {
    const double up = std::exp(a * t);
    check_scale(up, t);
    dx = std::exp(-a * t) * v;
    dv = -up * g;
  }
}

inline void vaf_into(const ObjectiveFunctional& f, MatRef x, MatRef v, const Schedule& s, double t, Form form,
                     Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) {
  const auto p = s.sample(t);
  if (form == Form::damped) {
    check_scale(p.force_scale, t);
    const Matrix g = f.gradient_points(x);
    dx = v;
    dv = -p.damping * v - p.force_scale * g;
  } else {
    const double up = std::exp(p.alpha + p.beta + p.gamma);
    check_scale(up, t);
    const Matrix g = f.gradient_points(x);
    dx = std::exp(p.alpha - p.gamma) * v;
    dv = -up * g;
  }
}

inline void kalman_into(const ObjectiveFunctional& f, MatRef x, MatRef v, double a, double lambda, double t,
                        Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) {
  const double up = std::exp(a * t), down = std::exp(-a * t);
  check_scale(up, t);
  const Index n = x.rows(), d = x.cols();
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Matrix xc = x.rowwise() - mean;
  Eigen::MatrixXd cov = (xc.transpose() * xc) / static_cast<double>(n);
  cov += lambda * Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd mv = (v.transpose() * v) / static_cast<double>(n);
  const Matrix g = f.gradient_points(x);
  dx = down * (v * cov);         // rows: (C^λ V_i)ᵀ, C^λ symmetric
  dv = -down * (xc * mv) - up * g;  // M_V symmetric
}

inline void stein_into(const ObjectiveFunctional& f, MatRef x, MatRef v, double a, double bw, double t,
                       Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) {
  const double up = std::exp(a * t), down = std::exp(-a * t);
  check_scale(up, t);
  const Index n = x.rows(), d = x.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_bw2 = 1.0 / (bw * bw);
  Matrix k(n, n);
  for (Index i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (Index j = i + 1; j < n; ++j) {
      const double val = std::exp(-0.5 * (x.row(i) - x.row(j)).squaredNorm() * inv_bw2);
      k(i, j) = val;
      k(j, i) = val;
    }
  }
  const Matrix vv = v * v.transpose();
  const Matrix g = f.gradient_points(x);
  Matrix kin(n, d);
  for (Index i = 0; i < n; ++i) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      // ∇ₓk(x, y) = −(x − y)/bw² · k(x, y)
      acc -= (vv(i, j) * k(i, j) * inv_bw2) * (x.row(i) - x.row(j));
    }
    kin.row(i) = acc * inv_n;
  }
  dx = down * inv_n * (k * v);
  dv = -down * kin - up * g;
}

inline void bregman_into(const ObjectiveFunctional& f, MatRef x, MatRef z, const Schedule& s, double t,
                         const Mirror& mirror, Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dz) {
  const auto p = s.sample(t);
  const double ea = std::exp(p.alpha);
  const double eab = std::exp(p.alpha + p.beta);
  check_scale(eab, t);
  const Matrix g = f.gradient_points(x);
  dx = ea * (mirror.grad_psi_star(Matrix(z)) - x);
  dz = -eab * g;
}

/// Runs a kernel on the particles sorted into canonical order and scatters
/// the drift back, so relabeling particles relabels the drift bit for bit.
template <class Kernel>
void in_canonical_frame(MatRef x, MatRef v, Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv, Kernel&& kernel) {
  const Matrix vc = v;
  const auto perm = canonical_order(x, &vc);
  const Matrix xs = gather_rows(x, perm), vs = gather_rows(vc, perm);
  Matrix dxs(x.rows(), x.cols()), dvs(x.rows(), x.cols());
  kernel(xs, vs, dxs, dvs);
  scatter_rows(dxs, perm, dx);
  scatter_rows(dvs, perm, dv);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Drift operations on ensembles
// ---------------------------------------------------------------------------

inline Matrix wgf_drift(const ObjectiveFunctional& f, const EmpiricalMeasure& rho, double /*t*/ = 0.0) {
  return -f.witness_gradient(rho);
}

inline PhaseDrift heavy_ball_drift(const ObjectiveFunctional& f, const PhaseEnsemble& e, double a, Form form,
                                   double t = 0.0) {
  if (!(a > 0.0)) throw std::invalid_argument("heavy_ball_drift: a must be > 0");
  PhaseDrift r{Matrix(e.size(), e.dim()), Matrix(e.size(), e.dim())};
  detail::in_canonical_frame(e.positions(), e.velocities(), r.dx, r.dv,
                             [&](const Matrix& x, const Matrix& v, Matrix& dx, Matrix& dv) {
                               detail::heavy_ball_into(f, x, v, a, form, t, dx, dv);
                             });
  return r;
}

inline PhaseDrift vaf_drift(const ObjectiveFunctional& f, const PhaseEnsemble& e, const Schedule& s, double t,
                            Form form) {
  PhaseDrift r{Matrix(e.size(), e.dim()), Matrix(e.size(), e.dim())};
  detail::in_canonical_frame(e.positions(), e.velocities(), r.dx, r.dv,
                             [&](const Matrix& x, const Matrix& v, Matrix& dx, Matrix& dv) {
                               detail::vaf_into(f, x, v, s, t, form, dx, dv);
                             });
  return r;
}

inline PhaseDrift kalman_drift(const ObjectiveFunctional& f, const PhaseEnsemble& e, double a, double lambda,
                               double t) {
  if (!(lambda >= 0.0)) throw std::invalid_argument("kalman_drift: lambda must be >= 0");
  if (!(a > 0.0)) throw std::invalid_argument("kalman_drift: a must be > 0");
  PhaseDrift r{Matrix(e.size(), e.dim()), Matrix(e.size(), e.dim())};
  detail::in_canonical_frame(e.positions(), e.velocities(), r.dx, r.dv,
                             [&](const Matrix& x, const Matrix& v, Matrix& dx, Matrix& dv) {
                               detail::kalman_into(f, x, v, a, lambda, t, dx, dv);
                             });
  return r;
}

inline PhaseDrift stein_drift(const ObjectiveFunctional& f, const PhaseEnsemble& e, double a, double bandwidth,
                              double t) {
  if (!(bandwidth > 0.0)) throw std::invalid_argument("stein_drift: bandwidth must be > 0");
  if (!(a > 0.0)) throw std::invalid_argument("stein_drift: a must be > 0");
  PhaseDrift r{Matrix(e.size(), e.dim()), Matrix(e.size(), e.dim())};
  detail::in_canonical_frame(e.positions(), e.velocities(), r.dx, r.dv,
                             [&](const Matrix& x, const Matrix& v, Matrix& dx, Matrix& dv) {
                               detail::stein_into(f, x, v, a, bandwidth, t, dx, dv);
                             });
  return r;
}

/// `e` holds the primal/dual pair: positions X, velocity slots Z.
inline PhaseDrift bregman_drift(const ObjectiveFunctional& f, const PhaseEnsemble& e, const Schedule& s, double t,
                                const Mirror& mirror = Mirror::quadratic()) {
  if (mirror.inverse_error(e.positions()) > 1e-8)
    throw std::invalid_argument("bregman_drift: mirror maps are not mutually inverse");
  PhaseDrift r{Matrix(e.size(), e.dim()), Matrix(e.size(), e.dim())};
  detail::in_canonical_frame(e.positions(), e.velocities(), r.dx, r.dv,
                             [&](const Matrix& x, const Matrix& v, Matrix& dx, Matrix& dv) {
                               detail::bregman_into(f, x, v, s, t, mirror, dx, dv);
                             });
  return r;
}

// ---------------------------------------------------------------------------
// DriftField
// ---------------------------------------------------------------------------

/// One flow's vector field on phase space, plus the mapping between the
/// integrator's flat state and ensembles. The flat state is [X | V] in
/// particle-major order; WGF carries X only.
class DriftField {
 public:
  using FunctionalPtr = std::shared_ptr<const ObjectiveFunctional>;

  static DriftField wgf(FunctionalPtr f) { return DriftField(Family::wgf, Form::damped, std::move(f)); }

  static DriftField heavy_ball(FunctionalPtr f, double a, Form form = Form::damped) {
    if (!(a > 0.0)) throw std::invalid_argument("heavy_ball: a must be > 0");
    DriftField d(Family::heavy_ball, form, std::move(f));
    d.a_ = a;
    return d;
  }

  static DriftField vaf(FunctionalPtr f, Schedule s, Form form = Form::damped) {
    DriftField d(Family::vaf, form, std::move(f));
    d.schedule_ = std::move(s);
    return d;
  }

  static DriftField kalman(FunctionalPtr f, double a, double lambda) {
    if (!(a > 0.0)) throw std::invalid_argument("kalman: a must be > 0");
    if (!(lambda >= 0.0)) throw std::invalid_argument("kalman: lambda must be >= 0");
    DriftField d(Family::kalman, Form::undamped, std::move(f));
    d.a_ = a;
    d.lambda_ = lambda;
    return d;
  }

  static DriftField stein(FunctionalPtr f, double a, double bandwidth) {
    if (!(a > 0.0)) throw std::invalid_argument("stein: a must be > 0");
    if (!(bandwidth > 0.0)) throw std::invalid_argument("stein: bandwidth must be > 0");
    DriftField d(Family::stein, Form::undamped, std::move(f));
    d.a_ = a;
    d.bandwidth_ = bandwidth;
    return d;
  }

  static DriftField bregman(FunctionalPtr f, Schedule s, Mirror mirror = Mirror::quadratic()) {
    DriftField d(Family::bregman, Form::undamped, std::move(f));
    Pcg32 rng(0x6d6972726f72ULL);
    Matrix probe(8, d.f_->dim());
    for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
    if (mirror.inverse_error(probe) > 1e-8)
      throw std::invalid_argument("bregman: mirror maps are not mutually inverse");
    d.schedule_ = std::move(s);
    d.mirror_ = std::move(mirror);
    return d;
  }

  Family family() const { return family_; }
  Form form() const { return form_; }
  const ObjectiveFunctional& functional() const { return *f_; }
  const FunctionalPtr& functional_ptr() const { return f_; }
  double a() const { return a_; }
  double lambda() const { return lambda_; }
  double bandwidth() const { return bandwidth_; }
  const Schedule& schedule() const { return schedule_; }
  const Mirror& mirror() const { return mirror_; }
  bool has_velocity() const { return family_ != Family::wgf; }

  Index state_size(Index n, Index d) const { return (has_velocity() ? 2 : 1) * n * d; }

  /// Multiplier mapping the stored velocity to the damped-form velocity u.
  double velocity_scale(double t) const {
    switch (family_) {
      case Family::wgf: return 0.0;
      case Family::heavy_ball: return form_ == Form::damped ? 1.0 : std::exp(-a_ * t);
      case Family::vaf: {
        if (form_ == Form::damped) return 1.0;
        const auto p = schedule_.sample(t);
        return std::exp(p.alpha - p.gamma);
      }
      case Family::kalman:
      case Family::stein: return std::exp(-a_ * t);
      case Family::bregman: return 1.0;  // handled in damped_velocity
    }
    return 1.0;
  }

  /// Damped-form velocities u of a state ensemble in this field's coordinates.
  /// For Bregman, u = e^α(Z − ∇ψ(X)).
  Matrix damped_velocity(const PhaseEnsemble& state) const {
    if (family_ == Family::wgf) return Matrix::Zero(state.size(), state.dim());
    if (family_ == Family::bregman) {
      const double ea = std::exp(schedule_.sample(state.time()).alpha);
      return ea * (state.velocities() - mirror_.grad_psi(state.positions()));
    }
    return velocity_scale(state.time()) * state.velocities();
  }

  /// Converts an ensemble carrying damped-form velocities u at its time into
  /// this field's state coordinates.
  PhaseEnsemble import_damped(const PhaseEnsemble& e) const {
    const double t = e.time();
    switch (family_) {
      case Family::wgf: return {e.positions(), Matrix::Zero(e.size(), e.dim()), t};
      case Family::bregman: {
        const double ea = std::exp(schedule_.sample(t).alpha);
        return {e.positions(), Matrix(mirror_.grad_psi(e.positions()) + e.velocities() / ea), t};
      }
      default: {
        const double s = velocity_scale(t);
        return {e.positions(), Matrix(e.velocities() / s), t};
      }
    }
  }

  /// Largest force multiplier the drift applies at t.
  double force_scale(double t) const {
    switch (family_) {
      case Family::wgf: return 1.0;
      case Family::heavy_ball: return form_ == Form::damped ? 1.0 : std::exp(a_ * t);
      case Family::vaf: {
        const auto p = schedule_.sample(t);
        return form_ == Form::damped ? p.force_scale : std::exp(p.alpha + p.beta + p.gamma);
      }
      case Family::kalman:
      case Family::stein: return std::exp(a_ * t);
      case Family::bregman: {
        const auto p = schedule_.sample(t);
        return std::exp(p.alpha + p.beta);
      }
    }
    return 1.0;
  }

  PhaseDrift evaluate(const PhaseEnsemble& e) const {
    PhaseDrift r{Matrix(e.size(), e.dim()), Matrix::Zero(e.size(), e.dim())};
    eval_into(e.time(), e.positions(), e.velocities(), r.dx, r.dv);
    return r;
  }

  Vector pack(const PhaseEnsemble& e) const {
    check_dim(e.dim());
    if (family_ == Family::bregman && mirror_.inverse_error(e.positions()) > 1e-8)
      throw std::invalid_argument("bregman: mirror maps are not mutually inverse at the initial positions");
    const Index nd = e.size() * e.dim();
    Vector y(state_size(e.size(), e.dim()));
    y.head(nd) = Eigen::Map<const Vector>(e.positions().data(), nd);
    if (has_velocity()) y.tail(nd) = Eigen::Map<const Vector>(e.velocities().data(), nd);
    return y;
  }

  PhaseEnsemble unpack(const Vector& y, Index n, Index d, double t) const {
    const Index nd = n * d;
    Matrix x = Eigen::Map<const Matrix>(y.data(), n, d);
    Matrix v = has_velocity() ? Matrix(Eigen::Map<const Matrix>(y.data() + nd, n, d)) : Matrix::Zero(n, d);
    return {std::move(x), std::move(v), t};
  }

  /// Flat right-hand side for the integrator.
  void rhs(double t, const Vector& y, Vector& dy, Index n, Index d) const {
    const Index nd = n * d;
    dy.resize(y.size());
    Eigen::Map<const Matrix> x(y.data(), n, d);
    Eigen::Map<Matrix> dx(dy.data(), n, d);
    if (!has_velocity()) {
      dx = -f_->gradient_points(x);
      return;
    }
    Eigen::Map<const Matrix> v(y.data() + nd, n, d);
    Eigen::Map<Matrix> dv(dy.data() + nd, n, d);
    eval_into(t, x, v, dx, dv);
  }

  /// Particle index owning flat state entry k.
  Index particle_of(Index k, Index n, Index d) const { return (k % (n * d)) / d; }

 private:
  DriftField(Family fam, Form form, FunctionalPtr f) : family_(fam), form_(form), f_(std::move(f)) {
    if (!f_) throw std::invalid_argument("drift field needs a functional");
  }

  void check_dim(Index d) const {
    if (d != f_->dim())
      throw std::invalid_argument("ensemble dimension " + std::to_string(d) + " does not match functional dimension " +
                                  std::to_string(f_->dim()));
  }

  void eval_into(double t, detail::MatRef x, detail::MatRef v, Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) const {
    if (family_ == Family::wgf) {
      dx = -f_->gradient_points(x);
      dv.setZero();
      return;
    }
    detail::in_canonical_frame(x, v, dx, dv, [&](const Matrix& xs, const Matrix& vs, Matrix& dxs, Matrix& dvs) {
      kernel(t, xs, vs, dxs, dvs);
    });
  }

  void kernel(double t, detail::MatRef x, detail::MatRef v, Eigen::Ref<Matrix> dx, Eigen::Ref<Matrix> dv) const {
    switch (family_) {
      case Family::wgf:
        dx = -f_->gradient_points(x);
        dv.setZero();
        break;
      case Family::heavy_ball: detail::heavy_ball_into(*f_, x, v, a_, form_, t, dx, dv); break;
      case Family::vaf: detail::vaf_into(*f_, x, v, schedule_, t, form_, dx, dv); break;
      case Family::kalman: detail::kalman_into(*f_, x, v, a_, lambda_, t, dx, dv); break;
      case Family::stein: detail::stein_into(*f_, x, v, a_, bandwidth_, t, dx, dv); break;
      case Family::bregman: detail::bregman_into(*f_, x, v, schedule_, t, mirror_, dx, dv); break;
    }
  }

  Family family_;
  Form form_;
  FunctionalPtr f_;
  double a_ = 0.0;
  double lambda_ = 0.0;
  double bandwidth_ = 1.0;
  Schedule schedule_ = exponential_schedule();
  Mirror mirror_ = Mirror::quadratic();
};

}  // namespace wflow
