#pragma once

#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>

#include "wflow/ensemble.hpp"
#include "wflow/rng.hpp"
#include "wflow/types.hpp"

namespace wflow {

// ---------------------------------------------------------------------------
// Parameter blocks
// ---------------------------------------------------------------------------

/// V(x) = ½⟨x − b, A(x − b)⟩ with A symmetric positive definite.
struct QuadraticPotential {
  Matrix A;
  Vector b;
  double min_eigenvalue = 0.0;

  double value(const Eigen::Ref<const Vector>& x) const {
    const Vector r = x - b;
    return 0.5 * r.dot(A * r);
  }
  Vector gradient(const Eigen::Ref<const Vector>& x) const { return A * (x - b); }
};

/// V(x) = h·log Σ_i exp((⟨w_i, x⟩ − q_i)/h), rows of W are the w_i.
struct LogSumExpPotential {
  Matrix W;
  Vector q;
  double h = 1.0;

  /// Softmax weights p_i(x), max-subtracted.
  Vector weights(const Eigen::Ref<const Vector>& x) const {
    Vector z = (W * x - q) / h;
    z.array() -= z.maxCoeff();
    Vector p = z.array().exp();
    return p / p.sum();
  }
  double value(const Eigen::Ref<const Vector>& x) const {
    const Vector z = (W * x - q) / h;
    const double zmax = z.maxCoeff();
    return h * (zmax + std::log((z.array() - zmax).exp().sum()));
  }
  Vector gradient(const Eigen::Ref<const Vector>& x) const { return W.transpose() * weights(x); }
};

/// Blob-regularized KL divergence against ρ∗ ∝ e^{−g}, additive −log C dropped.
struct BlobKL {
  Index dim = 0;
  std::function<double(const Vector&)> log_density;
  std::function<Vector(const Vector&)> log_density_gradient;
  double epsilon = 1.0;

  double kernel_scale() const {
    return std::pow(2.0 * std::numbers::pi * epsilon * epsilon, -0.5 * static_cast<double>(dim));
  }
};

/// Mean-field two-layer ReLU network: particle z = (α, β, w, b) ∈ R^{d+3},
/// prediction g(x, ρ) = (1/N)Σ_i [α_i σ(w_i·x + b_i) + β_i].
struct TwoLayerNet {
  Matrix data_x;  // P × d
  Vector data_y;  // P

  Index input_dim() const { return data_x.cols(); }
  Index samples() const { return data_x.rows(); }
};

// ---------------------------------------------------------------------------
// SPD generator
// ---------------------------------------------------------------------------

struct SpdSample {
  Matrix matrix;
  Vector spectrum;  // the drawn diagonal D
};

/// A = UᵀDU with D log-uniform on [eig_min, eig_max] and U Haar-distributed
/// (QR of a Gaussian matrix, columns sign-corrected by diag R). D is drawn
/// first, then the Gaussian matrix row by row.
inline SpdSample make_spd_matrix(Index d, double eig_min, double eig_max, std::uint64_t seed) {
  if (d < 1) throw std::invalid_argument("make_spd_matrix: d must be >= 1");
  if (!(eig_min > 0.0)) throw std::invalid_argument("make_spd_matrix: eig_min must be > 0");
  if (!(eig_min <= eig_max)) throw std::invalid_argument("make_spd_matrix: eig_min must be <= eig_max");
  Pcg32 rng(seed);
  Vector spectrum(d);
  const double lo = std::log(eig_min), hi = std::log(eig_max);
  for (Index i = 0; i < d; ++i) spectrum(i) = std::exp(rng.uniform(lo, hi));
  Eigen::MatrixXd gauss(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) gauss(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  const Eigen::MatrixXd& u = q;
  Eigen::MatrixXd a = u.transpose() * spectrum.asDiagonal() * u;
  a = 0.5 * (a + a.transpose()).eval();
  return {Matrix(a), spectrum};
}

// ---------------------------------------------------------------------------
// ObjectiveFunctional
// ---------------------------------------------------------------------------

enum class FunctionalKind { quadratic, logsumexp, blob_kl, two_layer_net };

inline std::string_view to_string(FunctionalKind k) {
  switch (k) {
    case FunctionalKind::quadratic: return "quadratic";
    case FunctionalKind::logsumexp: return "logsumexp";
    case FunctionalKind::blob_kl: return "blob_kl";
    case FunctionalKind::two_layer_net: return "two_layer_net";
  }
  return "?";
}

/// E: P₂(R^d) → R evaluated on empirical measures, together with the witness
/// gradient x ↦ ∇ₓ(δE/δρ)[ρ](x) that drives every flow.
class ObjectiveFunctional {
 public:
  using Params = std::variant<QuadraticPotential, LogSumExpPotential, BlobKL, TwoLayerNet>;

  static ObjectiveFunctional quadratic(Matrix A, Vector b) {
    if (A.rows() != A.cols() || A.rows() != b.size() || b.size() < 1)
      throw std::invalid_argument("quadratic: A must be d×d and b a d-vector");
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw std::invalid_argument("quadratic: A must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Eigen::MatrixXd(A), Eigen::EigenvaluesOnly);
    const double m = es.eigenvalues().minCoeff();
    if (!(m > 0.0)) throw std::invalid_argument("quadratic: A must be positive definite");
    ObjectiveFunctional f;
    f.params_ = QuadraticPotential{std::move(A), std::move(b), m};
    f.dim_ = f.quad().b.size();
    f.known_optimum_ = 0.0;
    return f;
  }

  static ObjectiveFunctional logsumexp(Matrix W, Vector q, double h) {
    if (W.rows() < 1 || W.cols() < 1 || W.rows() != q.size())
      throw std::invalid_argument("logsumexp: W must be M×d with M >= 1 and q an M-vector");
    if (!(h > 0.0)) throw std::invalid_argument("logsumexp: h must be > 0");
    ObjectiveFunctional f;
    f.dim_ = W.cols();
    f.params_ = LogSumExpPotential{std::move(W), std::move(q), h};
    return f;
  }

  static ObjectiveFunctional blob_kl(Index dim, std::function<double(const Vector&)> g,
                                     std::function<Vector(const Vector&)> grad_g, double epsilon) {
    if (dim < 1) throw std::invalid_argument("blob_kl: dimension must be >= 1");
    if (!(epsilon > 0.0)) throw std::invalid_argument("blob_kl: epsilon must be > 0");
    if (!g || !grad_g) throw std::invalid_argument("blob_kl: log density and its gradient required");
    ObjectiveFunctional f;
    f.dim_ = dim;
    f.params_ = BlobKL{dim, std::move(g), std::move(grad_g), epsilon};
    return f;
  }

  /// Blob KL whose log-density g is one of the potentials.
  template <class Potential>
  static ObjectiveFunctional blob_kl(const Potential& g, double epsilon) {
    const Index d = static_cast<Index>(dimension_of(g));
    return blob_kl(
        d, [g](const Vector& x) { return g.value(x); },
        [g](const Vector& x) { return Vector(g.gradient(x)); }, epsilon);
  }

  static ObjectiveFunctional two_layer_net(Matrix data_x, Vector data_y) {
    if (data_x.rows() < 1 || data_x.cols() < 1 || data_x.rows() != data_y.size())
      throw std::invalid_argument("two_layer_net: need P >= 1 samples with matching targets");
    ObjectiveFunctional f;
    f.dim_ = data_x.cols() + 3;
    f.params_ = TwoLayerNet{std::move(data_x), std::move(data_y)};
    return f;
  }

  FunctionalKind kind() const { return static_cast<FunctionalKind>(params_.index()); }
  const Params& params() const { return params_; }
  Index dim() const { return dim_; }

  /// E∗ when known analytically.
  std::optional<double> known_optimum() const { return known_optimum_; }
  /// Minimizer support point when E∗ is attained by a Dirac.
  std::optional<Vector> known_minimizer() const {
    if (kind() == FunctionalKind::quadratic) return quad().b;
    return std::nullopt;
  }

  const QuadraticPotential& quad() const { return std::get<QuadraticPotential>(params_); }

  double evaluate(const EmpiricalMeasure& rho) const { return evaluate_points(rho.points()); }

  Matrix witness_gradient(const EmpiricalMeasure& rho, const EmpiricalMeasure& at) const {
    check_dim(at.dim());
    return gradient_at(rho.points(), at.points());
  }
  Matrix witness_gradient(const EmpiricalMeasure& rho) const { return gradient_points(rho.points()); }

  // Hot-path entry points used by the flows; no copying or re-validation.
  // Particles are processed in canonical order, so results do not depend on labels.
  double evaluate_points(const Eigen::Ref<const Matrix>& points) const {
    check_dim(points.cols());
    const Matrix x = gather_rows(points, canonical_order(points));
    const Index n = x.rows();
    return std::visit(
        [&](const auto& p) -> double {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, QuadraticPotential> || std::is_same_v<P, LogSumExpPotential>) {
            Vector per(n);
            for (Index i = 0; i < n; ++i) per(i) = p.value(x.row(i).transpose());
            return order_free_sum(per) / static_cast<double>(n);
          } else if constexpr (std::is_same_v<P, BlobKL>) {
            return blob_evaluate(p, x);
          } else {
            return net_evaluate(p, x);
          }
        },
        params_);
  }

  /// Witness gradient at the points of ρ itself.
  Matrix gradient_points(const Eigen::Ref<const Matrix>& points) const {
    check_dim(points.cols());
    const auto perm = canonical_order(points);
    const Matrix x = gather_rows(points, perm);
    const Matrix gs = std::visit(
        [&](const auto& p) -> Matrix {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, BlobKL>) {
            return blob_gradient_self(p, x);
          } else {
            return gradient_rows(p, x, x);
          }
        },
        params_);
    Matrix g(points.rows(), points.cols());
    scatter_rows(gs, perm, g);
    return g;
  }

  /// Witness gradient of E at ρ = rows of `x`, evaluated at rows of `at`.
  Matrix gradient_at(const Eigen::Ref<const Matrix>& points, const Eigen::Ref<const Matrix>& at) const {
    check_dim(points.cols());
    check_dim(at.cols());
    const Matrix x = gather_rows(points, canonical_order(points));
    return std::visit([&](const auto& p) { return gradient_rows(p, x, at); }, params_);
  }

  /// Network prediction g(x_p, ρ) at every data point (two_layer_net only).
  Vector predict(const Eigen::Ref<const Matrix>& particles) const {
    const auto& p = std::get<TwoLayerNet>(params_);
    return net_predict(p, gather_rows(particles, canonical_order(particles)), p.data_x);
  }

 private:
  ObjectiveFunctional() = default;

  // Rows of `at` are independent given the measure x.
  template <class P>
  static Matrix gradient_rows(const P& p, const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& at) {
    Matrix g(at.rows(), at.cols());
    if constexpr (std::is_same_v<P, QuadraticPotential>) {
      for (Index i = 0; i < at.rows(); ++i) g.row(i) = (p.A * (at.row(i).transpose() - p.b)).transpose();
    } else if constexpr (std::is_same_v<P, LogSumExpPotential>) {
      for (Index i = 0; i < at.rows(); ++i) g.row(i) = p.gradient(at.row(i).transpose()).transpose();
    } else if constexpr (std::is_same_v<P, BlobKL>) {
      g = blob_gradient(p, x, at);
    } else {
      g = net_gradient(p, x, at);
    }
    return g;
  }

  static Index dimension_of(const QuadraticPotential& p) { return p.b.size(); }
  static Index dimension_of(const LogSumExpPotential& p) { return p.W.cols(); }

  void check_dim(Index d) const {
    if (d != dim_)
      throw std::invalid_argument("functional " + std::string(to_string(kind())) + " expects dimension " +
                                  std::to_string(dim_) + ", got " + std::to_string(d));
  }

  // Pairwise kernel matrix K^ε(x_i − x_j) between two point sets.
  static Matrix blob_kernel(const BlobKL& p, const Eigen::Ref<const Matrix>& a,
                            const Eigen::Ref<const Matrix>& b) {
    const double c = p.kernel_scale();
    const double inv2e2 = 1.0 / (2.0 * p.epsilon * p.epsilon);
    Matrix k(a.rows(), b.rows());
    for (Index i = 0; i < a.rows(); ++i)
      for (Index j = 0; j < b.rows(); ++j) k(i, j) = c * std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv2e2);
    return k;
  }

  static Matrix blob_kernel_self(const BlobKL& p, const Eigen::Ref<const Matrix>& x) {
    const double c = p.kernel_scale();
    const double inv2e2 = 1.0 / (2.0 * p.epsilon * p.epsilon);
    const Index n = x.rows();
    Matrix k(n, n);
    for (Index i = 0; i < n; ++i) {
      k(i, i) = c;
      for (Index j = i + 1; j < n; ++j) {
        const double v = c * std::exp(-(x.row(i) - x.row(j)).squaredNorm() * inv2e2);
        k(i, j) = v;
        k(j, i) = v;
      }
    }
    return k;
  }

  static double blob_evaluate(const BlobKL& p, const Eigen::Ref<const Matrix>& x) {
    const Index n = x.rows();
    const Matrix k = blob_kernel_self(p, x);
    double s = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double density = k.row(i).sum() / static_cast<double>(n);
      s += std::log(density) + p.log_density(x.row(i).transpose());
    }
    return s / static_cast<double>(n);
  }

  // (1/N)Σ_j ∇K(x_i − x_j)(1/s_i + 1/s_j) + ∇g(x_i), ∇K(r) = −(r/ε²)K(r).
  static Matrix blob_gradient_self(const BlobKL& p, const Eigen::Ref<const Matrix>& x) {
    const Index n = x.rows(), d = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double inv_e2 = 1.0 / (p.epsilon * p.epsilon);
    const Matrix k = blob_kernel_self(p, x);
    const Vector inv_s = (k.rowwise().sum() * inv_n).cwiseInverse();
    Matrix g(n, d);
    for (Index i = 0; i < n; ++i) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
      for (Index j = 0; j < n; ++j) {
        if (j == i) continue;
        acc -= (k(i, j) * (inv_s(i) + inv_s(j)) * inv_e2) * (x.row(i) - x.row(j));
      }
      g.row(i) = acc * inv_n + p.log_density_gradient(x.row(i).transpose()).transpose();
    }
    return g;
  }

  static Matrix blob_gradient(const BlobKL& p, const Eigen::Ref<const Matrix>& x, const Eigen::Ref<const Matrix>& at) {
    const Index n = x.rows(), d = x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double inv_e2 = 1.0 / (p.epsilon * p.epsilon);
    const Vector inv_s = (blob_kernel_self(p, x).rowwise().sum() * inv_n).cwiseInverse();
    const Matrix k = blob_kernel(p, at, x);
    const Vector inv_s_at = (k.rowwise().sum() * inv_n).cwiseInverse();
    Matrix g(at.rows(), d);
    for (Index i = 0; i < at.rows(); ++i) {
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(d);
      for (Index j = 0; j < n; ++j)
        acc -= (k(i, j) * (inv_s_at(i) + inv_s(j)) * inv_e2) * (at.row(i) - x.row(j));
      g.row(i) = acc * inv_n + p.log_density_gradient(at.row(i).transpose()).transpose();
    }
    return g;
  }

  static Vector net_predict(const TwoLayerNet&, const Eigen::Ref<const Matrix>& z, const Matrix& data_x) {
    const Index n = z.rows(), dx = data_x.cols();
    const double inv_n = 1.0 / static_cast<double>(n);
    Vector out = Vector::Constant(data_x.rows(), z.col(1).sum() * inv_n);
    Vector pre(data_x.rows());
    for (Index i = 0; i < n; ++i) {
      pre.setConstant(z(i, 2 + dx));
      for (Index c = 0; c < dx; ++c) pre += z(i, 2 + c) * data_x.col(c);
      out.array() += (z(i, 0) * inv_n) * pre.array().max(0.0);
    }
    return out;
  }

  static double net_evaluate(const TwoLayerNet& p, const Eigen::Ref<const Matrix>& z) {
    const Vector r = net_predict(p, z, p.data_x) - p.data_y;
    return 0.5 * r.squaredNorm() / static_cast<double>(p.samples());
  }

  // (1/P)Σ_p r_p·(σ, 1, α σ′ x_p, α σ′) with σ′(0) = 0.
  static Matrix net_gradient(const TwoLayerNet& p, const Eigen::Ref<const Matrix>& z,
                             const Eigen::Ref<const Matrix>& at) {
    const Index dx = p.input_dim(), np = p.samples();
    const double inv_p = 1.0 / static_cast<double>(np);
    const Vector r = net_predict(p, z, p.data_x) - p.data_y;
    Matrix g(at.rows(), at.cols());
    const double* xs = p.data_x.data();
    const double* rs = r.data();
    std::vector<double> w(static_cast<std::size_t>(dx)), gx(static_cast<std::size_t>(dx));
    for (Index i = 0; i < at.rows(); ++i) {
      const double b = at(i, 2 + dx);
      double s_act = 0.0, s_gate = 0.0;
      if (dx == 1) {
        const double w0 = at(i, 2);
        double g0 = 0.0;
        for (Index k = 0; k < np; ++k) {
          const double s = b + w0 * xs[k];
          const double rk = s > 0.0 ? rs[k] : 0.0;
          s_act += s * rk;
          s_gate += rk;
          g0 += rk * xs[k];
        }
        gx[0] = g0;
      } else {
        for (Index c = 0; c < dx; ++c) w[static_cast<std::size_t>(c)] = at(i, 2 + c);
        std::fill(gx.begin(), gx.end(), 0.0);
        for (Index k = 0; k < np; ++k) {
          const double* xk = xs + k * dx;
          double s = b;
          for (Index c = 0; c < dx; ++c) s += w[static_cast<std::size_t>(c)] * xk[c];
          const double rk = s > 0.0 ? rs[k] : 0.0;
          s_act += s * rk;
          s_gate += rk;
          for (Index c = 0; c < dx; ++c) gx[static_cast<std::size_t>(c)] += rk * xk[c];
        }
      }
      const double alpha = at(i, 0);
      g(i, 0) = s_act * inv_p;
      for (Index c = 0; c < dx; ++c) g(i, 2 + c) = alpha * inv_p * gx[static_cast<std::size_t>(c)];
      g(i, 2 + dx) = alpha * s_gate * inv_p;
    }
    g.col(1).setConstant(r.sum() * inv_p);
    return g;
  }

  Params params_;
  Index dim_ = 0;
  std::optional<double> known_optimum_;
};

/// Mean squared error (1/P)Σ_p (y_p − g(x_p, ρ))² of a two-layer network.
inline double two_layer_mse(const ObjectiveFunctional& f, const EmpiricalMeasure& rho) {
  return 2.0 * f.evaluate(rho);
}

}  // namespace wflow
