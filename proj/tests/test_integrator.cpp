#include <gtest/gtest.h>

#include "wflow/integrator.hpp"
#include "wflow/verify.hpp"

using namespace wflow;

namespace {

IntegratorConfig config(double t1, double tol) {
  IntegratorConfig c;
  c.t_end = t1;
  c.rtol = c.atol = tol;
  return c;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out(k++) = x;
  return out;
}

auto oscillator = [](double, const Vector& y, Vector& dy) {
  dy.resize(2);
  dy << y(1), -y(0);
};

double oscillator_error(double tol, std::size_t* steps = nullptr) {
  const auto r = dopri5(oscillator, vec({1, 0}), config(2 * std::numbers::pi, tol));
  if (steps) *steps = r.accepted + r.rejected;
  return (r.y_final - vec({1, 0})).cwiseAbs().maxCoeff();
}

}  // namespace

TEST(Dopri5, ConstantSolutionIsExact) {
  auto zero = [](double, const Vector& y, Vector& dy) { dy = Vector::Zero(y.size()); };
  for (double tol : {1e-3, 1e-9}) {
    const auto r = dopri5(zero, vec({7}), config(3.0, tol));
    EXPECT_EQ(r.status, RunStatus::completed);
    EXPECT_EQ(r.y_final(0), 7.0);
    EXPECT_EQ(r.rejected, 0u);
  }
}

TEST(Dopri5, Exponential) {
  auto grow = [](double, const Vector& y, Vector& dy) { dy = y; };
  const auto r = dopri5(grow, vec({1}), config(1.0, 1e-6));
  EXPECT_EQ(r.t_final, 1.0);
  EXPECT_NEAR(r.y_final(0), std::exp(1.0), 1e-6);
}

TEST(Dopri5, HarmonicOscillatorPeriod) {
  const auto r = dopri5(oscillator, vec({1, 0}), config(2 * std::numbers::pi, 1e-6));
  EXPECT_LT((r.y_final - vec({1, 0})).cwiseAbs().maxCoeff(), 1e-5);
  EXPECT_LT(std::abs(0.5 * r.y_final.squaredNorm() - 0.5), 1e-5);
}

TEST(Dopri5, DenseOutputAtRecordTimes) {
  auto c = config(2.0, 1e-8);
  c.record_times = uniform_times(0.0, 2.0, 40);
  const auto r = dopri5(oscillator, vec({1, 0}), c);
  ASSERT_EQ(r.times.size(), 41u);
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    EXPECT_EQ(r.times[k], c.record_times[k]);
    EXPECT_NEAR(r.states[k](0), std::cos(r.times[k]), 1e-6);
    EXPECT_NEAR(r.states[k](1), -std::sin(r.times[k]), 1e-6);
  }
  EXPECT_LT(r.accepted, 40u);
}

TEST(InitialStep, ZeroDriftFallback) {
  auto zero = [](double, const Vector& y, Vector& dy) { dy = Vector::Zero(y.size()); };
  auto c = config(5.0, 1e-6);
  c.t_start = 1.0;
  const Vector y = vec({1, 2});
  EXPECT_DOUBLE_EQ(initial_step_heuristic(zero, y, Vector::Zero(2), c), 0.04);
}

TEST(InitialStep, GrowthFirstStepAccepted) {
  auto grow = [](double, const Vector& y, Vector& dy) { dy = y; };
  const auto c = config(1.0, 1e-6);
  const double h = initial_step_heuristic(grow, vec({1}), vec({1}), c);
  EXPECT_GT(h, 0.0);
  EXPECT_LE(h, 1.0);
  bool first_seen = false;
  std::size_t rejected_at_first = 99;
  dopri5(grow, vec({1}), c, [&](const StepView& s) {
    if (s.accepted == 1 && !first_seen) {
      first_seen = true;
      rejected_at_first = s.rejected;
    }
  });
  EXPECT_TRUE(first_seen);
  EXPECT_EQ(rejected_at_first, 0u);
}

TEST(InitialStep, StiffScaleGivesSmallStep) {
  auto stiff = [](double, const Vector& y, Vector& dy) { dy = -1000.0 * y; };
  const double h = initial_step_heuristic(stiff, vec({1}), vec({-1000}), config(1.0, 1e-6));
  EXPECT_GT(h, 0.0);
  EXPECT_LE(h, 1e-2);
}

TEST(Dopri5, FifthOrderConvergence) {
  auto grow = [](double, const Vector& y, Vector& dy) { dy = y; };
  std::vector<double> errs;
  for (double h : {0.1, 0.05, 0.025}) {
    auto c = config(1.0, 1e-6);
    c.fixed_step = h;
    const auto r = dopri5(grow, vec({1}), c);
    errs.push_back(std::abs(r.y_final(0) - std::exp(1.0)));
  }
  EXPECT_GE(errs[0] / errs[1], 24.0);
  EXPECT_GE(errs[1] / errs[2], 24.0);
}

TEST(Dopri5, TighterToleranceNeverWorse) {
  double prev_err = std::numeric_limits<double>::infinity();
  std::size_t prev_steps = 0;
  for (double tol : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8}) {
    std::size_t steps = 0;
    const double err = oscillator_error(tol, &steps);
    EXPECT_LE(err, prev_err) << tol;
    EXPECT_GE(steps, prev_steps) << tol;
    prev_err = err;
    prev_steps = steps;
  }
}

TEST(Dopri5, MaxStepsKeepsPartialRecord) {
  auto c = config(100.0, 1e-10);
  c.max_steps = 20;
  c.record_times = uniform_times(0.0, 100.0, 100);
  const auto r = dopri5(oscillator, vec({1, 0}), c);
  EXPECT_EQ(r.status, RunStatus::max_steps);
  EXPECT_EQ(r.accepted + r.rejected, 20u);
  EXPECT_LT(r.t_final, 100.0);
  EXPECT_GE(r.times.size(), 1u);
  EXPECT_LT(r.times.size(), 101u);
}

TEST(Dopri5, RejectsBadConfig) {
  auto c = config(1.0, 1e-6);
  c.rtol = 0;
  EXPECT_THROW(dopri5(oscillator, vec({1, 0}), c), std::invalid_argument);
  c = config(1.0, 1e-6);
  c.t_start = 2.0;
  EXPECT_THROW(dopri5(oscillator, vec({1, 0}), c), std::invalid_argument);
  c = config(1.0, 1e-6);
  c.record_times = {0.5, 2.0};
  EXPECT_THROW(dopri5(oscillator, vec({1, 0}), c), std::invalid_argument);
}

TEST(Integrate, DeterministicBitForBit) {
  const auto f = verify::quadratic_fixture(3, 0.2, 1.0, 2);
  const auto field = DriftField::vaf(f, nesterov_schedule());
  const auto e = init_gaussian(8, 3, 4).with_time(0.01);
  const auto cfg = verify::tight_config(0.01, 5.0, 20, 1e-6);
  const auto a = integrate(field, e, cfg), b = integrate(field, e, cfg);
  EXPECT_EQ(a.accepted_steps, b.accepted_steps);
  EXPECT_EQ(a.rejected_steps, b.rejected_steps);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (std::size_t k = 0; k < a.states.size(); ++k) {
    EXPECT_EQ(a.states[k].positions(), b.states[k].positions());
    EXPECT_EQ(a.states[k].velocities(), b.states[k].velocities());
  }
  EXPECT_EQ(a.total_steps(), a.accepted_steps + a.rejected_steps);
}

TEST(Integrate, NonFiniteDriftNamesTimeAndParticle) {
  // exp(x) gradient blows up once a particle drifts far enough
  const Index n = 3;
  const auto f = std::make_shared<const ObjectiveFunctional>(ObjectiveFunctional::blob_kl(
      1, [](const Vector& x) { return -std::exp(x(0) * x(0)); },
      [](const Vector& x) {
        Vector g(1);
        g(0) = x(0) > 2.0 ? std::numeric_limits<double>::quiet_NaN() : -2 * x(0) * std::exp(x(0) * x(0));
        return g;
      },
      1.0));
  Matrix x(n, 1);
  x << 0.0, 0.5, 1.5;
  const PhaseEnsemble e(x, Matrix::Zero(n, 1));
  auto cfg = verify::tight_config(0.0, 10.0, 10, 1e-6);
  const auto r = integrate(DriftField::wgf(f), e, cfg);
  EXPECT_EQ(r.status, RunStatus::non_finite);
  ASSERT_TRUE(r.bad_particle);
  EXPECT_EQ(*r.bad_particle, 2);
  EXPECT_NE(r.message.find("t = "), std::string::npos);
  EXPECT_NE(r.message.find("particle 2"), std::string::npos);
}

// At rest on the minimizer the drift vanishes, so nothing but the force
// scale e^t can stop the run.
TEST(Integrate, ExponentialScheduleStopsCleanlyOnOverflow) {
  const auto f = std::make_shared<const ObjectiveFunctional>(
      ObjectiveFunctional::quadratic(Eigen::MatrixXd::Identity(2, 2), Vector::Zero(2)));
  const PhaseEnsemble e(Matrix::Zero(3, 2), Matrix::Zero(3, 2), 0.01);
  IntegratorConfig cfg;
  cfg.t_start = 0.01;
  cfg.t_end = 800.0;
  cfg.fixed_step = 0.5;
  cfg.record_times = uniform_times(0.01, 800.0, 17);
  const auto r = integrate(DriftField::vaf(f, exponential_schedule()), e, cfg);
  EXPECT_EQ(r.status, RunStatus::scale_overflow);
  EXPECT_NE(r.message.find("1e300"), std::string::npos) << r.message;
  EXPECT_GT(r.t_final, 680.0);
  EXPECT_LT(r.t_final, 700.0);
  ASSERT_EQ(r.states.size(), 15u);
  EXPECT_TRUE(r.states.back().positions().isZero(0.0));
}

// With a real force the oscillation frequency grows like e^{t/2}; the step
// budget runs out long before the scale guard.
TEST(Integrate, ExponentialScheduleExhaustsStepBudget) {
  const auto f = verify::quadratic_fixture(2, 0.5, 1.0, 3);
  const auto e = init_gaussian(2, 2, 5);
  IntegratorConfig cfg;
  cfg.t_end = 800.0;
  cfg.max_steps = 20000;
  cfg.record_times = uniform_times(0.0, 800.0, 801);
  const auto r = integrate(DriftField::vaf(f, exponential_schedule()), e, cfg);
  ASSERT_FALSE(r.states.empty());
  EXPECT_EQ(r.status, RunStatus::max_steps);
  EXPECT_EQ(r.total_steps(), 20000u);
  EXPECT_LT(r.t_final, 40.0);
  EXPECT_TRUE(all_finite(r.states.back().positions()));
}
