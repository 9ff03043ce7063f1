#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "wflow/rng.hpp"
#include "wflow/transport.hpp"
#include "wflow/verify.hpp"

using namespace wflow;

namespace {

Matrix col(std::initializer_list<double> v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  Index k = 0;
  for (double x : v) m(k++, 0) = x;
  return m;
}

Matrix random_points(Index n, Index d, Pcg32& rng) {
  Matrix m(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index k = 0; k < d; ++k) m(i, k) = rng.normal();
  return m;
}

double brute_force(const Matrix& x, const Matrix& y) {
  std::vector<Index> p(static_cast<std::size_t>(x.rows()));
  std::iota(p.begin(), p.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (Index i = 0; i < x.rows(); ++i) c += (x.row(i) - y.row(p[static_cast<std::size_t>(i)])).squaredNorm();
    best = std::min(best, c / static_cast<double>(x.rows()));
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

ObjectiveFunctional half_norm(Index d) { return ObjectiveFunctional::quadratic(Matrix::Identity(d, d), Vector::Zero(d)); }

}  // namespace

TEST(W2, SameMeasureAnyOrder) {
  const Matrix x = col({0.3, -1.0, 2.5});
  const Matrix y = col({2.5, 0.3, -1.0});
  EXPECT_EQ(w2_squared(EmpiricalMeasure(x), EmpiricalMeasure(y)).cost, 0.0);
}

TEST(W2, OneDimensionalPair) {
  const auto plan = w2_squared(EmpiricalMeasure(col({0, 1})), EmpiricalMeasure(col({1, 2})));
  EXPECT_DOUBLE_EQ(plan.cost, 1.0);
  EXPECT_EQ(plan.permutation, (std::vector<Index>{0, 1}));
}

TEST(W2, SinglePoints) {
  EXPECT_DOUBLE_EQ(w2_squared(EmpiricalMeasure(col({0})), EmpiricalMeasure(col({3}))).cost, 9.0);
}

TEST(W2, UnequalCountsRejected) {
  EXPECT_THROW(w2_squared(EmpiricalMeasure(col({0, 1})), EmpiricalMeasure(col({3}))), std::invalid_argument);
}

TEST(W2, MatchesBruteForce) {
  Pcg32 rng(91);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.next_u32() % 6);
    const Index d = 1 + static_cast<Index>(rng.next_u32() % 3);
    const Matrix x = random_points(n, d, rng), y = random_points(n, d, rng);
    const auto plan = w2_squared(EmpiricalMeasure(x), EmpiricalMeasure(y));
    // the cost of the returned plan summed in brute-force order
    double c = 0;
    for (Index i = 0; i < n; ++i) c += (x.row(i) - y.row(plan.permutation[static_cast<std::size_t>(i)])).squaredNorm();
    c /= static_cast<double>(n);
    if (std::abs(c - brute_force(x, y)) > 1e-12 * std::max(1.0, c)) ++mismatches;
    std::vector<Index> sorted = plan.permutation;
    std::sort(sorted.begin(), sorted.end());
    for (Index i = 0; i < n; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  }
  EXPECT_EQ(mismatches, 0);
  EXPECT_EQ(verify::w2_mismatches(), 0u);
}

TEST(W2, Symmetric) {
  Pcg32 rng(5);
  const Matrix x = random_points(7, 2, rng), y = random_points(7, 2, rng);
  EXPECT_NEAR(w2_squared(EmpiricalMeasure(x), EmpiricalMeasure(y)).cost,
              w2_squared(EmpiricalMeasure(y), EmpiricalMeasure(x)).cost, 1e-14);
}

TEST(W2, TriangleInequality) {
  Pcg32 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const EmpiricalMeasure a(random_points(6, 2, rng)), b(random_points(6, 2, rng)), c(random_points(6, 2, rng));
    const double ab = std::sqrt(w2_squared(a, b).cost), bc = std::sqrt(w2_squared(b, c).cost),
                 ac = std::sqrt(w2_squared(a, c).cost);
    EXPECT_LE(ac, ab + bc + 1e-9);
  }
}

TEST(W2ToPoint, Examples) {
  const Vector p = Vector::Constant(1, 0.5);
  EXPECT_EQ(w2_squared_to_point(EmpiricalMeasure(col({0.5, 0.5})), p), 0.0);
  EXPECT_DOUBLE_EQ(w2_squared_to_point(EmpiricalMeasure(col({-1, 1})), Vector::Zero(1)), 1.0);
  Pcg32 rng(7);
  const Matrix x = random_points(5, 3, rng);
  const Vector q = random_points(3, 1, rng).col(0);
  const Matrix copies = q.transpose().replicate(5, 1);
  EXPECT_NEAR(w2_squared_to_point(EmpiricalMeasure(x), q), w2_squared(EmpiricalMeasure(x), EmpiricalMeasure(copies)).cost,
              1e-13);
}

TEST(LyapunovEnergy, Examples) {
  const auto f = half_norm(1);
  EXPECT_EQ(lyapunov_hb_energy(PhaseEnsemble(col({0}), col({0})), 0.5, f, 0.0).value, 0.0);
  const auto s = lyapunov_hb_energy(PhaseEnsemble(col({0}), col({2})), 0.5, f, 0.0);
  EXPECT_DOUBLE_EQ(s.value, 2.0);
  EXPECT_DOUBLE_EQ(s.kinetic, 2.0);
  Pcg32 rng(8);
  for (int k = 0; k < 10; ++k) {
    const PhaseEnsemble e(random_points(4, 1, rng), random_points(4, 1, rng), 1.5);
    EXPECT_GE(lyapunov_hb_energy(e, 0.5, f, 0.0).value, 0.0);
    EXPECT_GE(lyapunov_hb_energy(e, 0.5, f, 0.0, Form::undamped).value, 0.0);
  }
}

TEST(LyapunovEnergy, UndampedScale) {
  const auto f = half_norm(1);
  const PhaseEnsemble e(col({0}), col({2}), 2.0);
  EXPECT_NEAR(lyapunov_hb_energy(e, 0.5, f, 0.0, Form::undamped).value, 2.0 * std::exp(-2.0), 1e-15);
}

TEST(LyapunovConvex, Examples) {
  const auto f = half_norm(1);
  const Vector zero = Vector::Zero(1);
  EXPECT_EQ(lyapunov_hb_convex(PhaseEnsemble(col({0}), col({0})), 0.5, f, zero, 0.0).value, 0.0);
  const double a = 0.7;
  EXPECT_DOUBLE_EQ(lyapunov_hb_convex(PhaseEnsemble(col({0}), col({a})), a, f, zero, 0.0).value, 0.5);
}

TEST(LyapunovConvex, EmpiricalTarget) {
  const auto f = half_norm(1);
  const PhaseEnsemble e(col({0.0, 1.0}), col({0.0, 0.0}));
  const auto s = lyapunov_hb_convex(e, 1.0, f, EmpiricalMeasure(col({1.0, 0.0})), 0.25);
  EXPECT_DOUBLE_EQ(s.quadratic, 0.0);
  EXPECT_DOUBLE_EQ(s.gap, 0.0);
  EXPECT_THROW(lyapunov_hb_convex(e, 1.0, f, EmpiricalMeasure(col({1.0})), 0.0), std::invalid_argument);
}

TEST(LyapunovStrong, ReducesToConvexAtUnitModulus) {
  const auto f = half_norm(2);
  Pcg32 rng(9);
  const PhaseEnsemble e(random_points(3, 2, rng), random_points(3, 2, rng), 0.0);
  const Vector y = random_points(2, 1, rng).col(0);
  const auto strong = lyapunov_hb_strong(e, 1.0, f, y, 0.0);
  const auto convex = lyapunov_hb_convex(e, 1.0, f, y, 0.0);
  EXPECT_NEAR(strong.value, convex.value, 1e-14);
  const PhaseEnsemble later(e.positions(), e.velocities(), 2.0);
  EXPECT_NEAR(lyapunov_hb_strong(later, 0.25, f, y, 0.0).value,
              std::exp(0.5 * 2.0) * lyapunov_hb_strong(e, 0.25, f, y, 0.0).value, 1e-12);
}

TEST(LyapunovVaf, Examples) {
  const auto f = half_norm(1);
  const auto s = nesterov_schedule();
  const Vector zero = Vector::Zero(1);
  EXPECT_EQ(lyapunov_vaf(PhaseEnsemble(col({0}), col({0})), s, 1.0, f, zero, 0.0).value, 0.0);
  EXPECT_NEAR(lyapunov_vaf(PhaseEnsemble(col({0}), col({4})), s, 2.0, f, zero, 0.0, Form::undamped).value, 0.5, 1e-15);
  // u = e^{α−γ}v = 1 at t = 2
  EXPECT_NEAR(lyapunov_vaf(PhaseEnsemble(col({0}), col({1})), s, 2.0, f, zero, 0.0).value, 0.5, 1e-15);
  const double x = std::sqrt(0.2);  // ½x² = 0.1
  EXPECT_NEAR(lyapunov_vaf(PhaseEnsemble(col({x}), col({0})), s, 4.0, f, Vector::Constant(1, x), 0.0).gap, 0.4, 1e-14);
  EXPECT_THROW(lyapunov_vaf(PhaseEnsemble(col({0}), col({0})), s, 0.0, f, zero, 0.0), std::domain_error);
}

TEST(Lyapunov, ComponentsSumToValue) {
  Pcg32 rng(10);
  const auto f = std::make_shared<const ObjectiveFunctional>(
      ObjectiveFunctional::quadratic(make_spd_matrix(3, 0.2, 1.0, 3).matrix, Vector::Zero(3)));
  for (int k = 0; k < 20; ++k) {
    const PhaseEnsemble e(random_points(5, 3, rng), random_points(5, 3, rng), rng.uniform(0.1, 5.0));
    const Vector y = random_points(3, 1, rng).col(0);
    for (const auto& s : {lyapunov_hb_convex(e, 0.6, *f, y, 0.0), lyapunov_hb_strong(e, 0.3, *f, y, 0.0),
                          lyapunov_vaf(e, nesterov_schedule(), e.time(), *f, y, 0.0),
                          lyapunov_vaf(e, exponential_schedule(), e.time(), *f, EmpiricalMeasure(random_points(5, 3, rng)), 0.0)}) {
      EXPECT_NEAR(s.value, s.quadratic + s.cross + s.kinetic + s.gap, 1e-12 * std::max(1.0, std::abs(s.value)));
    }
  }
}

TEST(Lyapunov, MonotoneAlongRuns) {
  const auto rep = verify::lyapunov_monotonicity();
  EXPECT_LE(rep.energy, 1e-7);
  EXPECT_LE(rep.convex, 1e-7);
  EXPECT_LE(rep.strong, 1e-7);
  EXPECT_LE(rep.vaf, 1e-6);
  EXPECT_LE(rep.gap_bound, 0.0);
}
