#include <gtest/gtest.h>

#include "wflow/rng.hpp"
#include "wflow/schedules.hpp"

using namespace wflow;

namespace {

void expect_derivatives_consistent(const Schedule& s, double t) {
  const double h = 1e-6 * std::max(1.0, t);
  auto check = [&](const ScalarFn& f, const ScalarFn& df, const char* what) {
    const double fd = (f(t + h) - f(t - h)) / (2 * h);
    const double an = df(t);
    EXPECT_LE(std::abs(fd - an), 1e-6 * std::max(1.0, std::abs(an))) << s.name << ' ' << what << " at t = " << t;
  };
  check(s.alpha, s.alpha_dot, "alpha");
  check(s.beta, s.beta_dot, "beta");
  check(s.gamma, s.gamma_dot, "gamma");
}

Schedule linear_schedule(double beta_rate) { return affine_log_schedule({}, {0, beta_rate, 0}, {0, 1, 0}, "lin"); }

}  // namespace

TEST(Nesterov, Examples) {
  const auto s = nesterov_schedule();
  const auto p2 = s.sample(2.0);
  EXPECT_DOUBLE_EQ(p2.damping, 1.5);
  EXPECT_EQ(p2.force_scale, 1.0);
  EXPECT_DOUBLE_EQ(s.sample(3.0).damping, 1.0);
}

TEST(Nesterov, ForceScaleIsOneEverywhere) {
  const auto s = nesterov_schedule();
  Pcg32 rng(1);
  for (int k = 0; k < 200; ++k) {
    const double t = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
    EXPECT_EQ(s.sample(t).force_scale, 1.0) << t;
    EXPECT_NEAR(2 * s.alpha(t) + s.beta(t), 0.0, 1e-12);
  }
}

TEST(Nesterov, DomainError) {
  const auto s = nesterov_schedule();
  EXPECT_THROW(s.sample(0.0), std::domain_error);
  EXPECT_THROW(s.sample(-1.0), std::domain_error);
}

TEST(Exponential, Examples) {
  const auto s = exponential_schedule();
  const auto p0 = s.sample(0.0);
  EXPECT_EQ(p0.damping, 1.0);
  EXPECT_EQ(p0.force_scale, 1.0);
  EXPECT_NEAR(s.sample(std::log(2.0)).force_scale, 2.0, 1e-15);
  EXPECT_NEAR(s.sample(5.0).rate_scale, 148.413159, 1e-5);
}

TEST(Exponential, DampingIsOneEverywhere) {
  const auto s = exponential_schedule();
  for (double t : {0.0, 0.1, 3.0, 50.0, 700.0}) EXPECT_EQ(s.sample(t).damping, 1.0);
}

TEST(Mirror, MatchesNesterovUpToBetaOffset) {
  const auto m = mirror_schedule(2.0), n = nesterov_schedule();
  for (double t : {0.1, 1.0, 2.0, 7.5}) {
    EXPECT_NEAR(m.alpha(t), n.alpha(t), 1e-15);
    EXPECT_NEAR(m.beta(t) - n.beta(t), 2 * std::log(t / 2) - std::log(t * t / 4), 1e-14);
    EXPECT_NEAR(m.beta(t), n.beta(t), 1e-14);
  }
}

TEST(Mirror, UnitRateAtOne) {
  const auto m = mirror_schedule(1.0);
  EXPECT_EQ(m.alpha(1.0), 0.0);
  EXPECT_EQ(m.beta(1.0), 0.0);
}

TEST(Mirror, GammaDotEqualsExpAlpha) {
  for (double r : {0.5, 2.0, 3.0}) {
    const auto m = mirror_schedule(r);
    for (double t : {0.01, 0.3, 1.0, 12.0}) {
      EXPECT_NEAR(m.gamma_dot(t), r / t, 1e-15 * r / t);
      EXPECT_NEAR(m.gamma_dot(t), std::exp(m.alpha(t)), 1e-12 * r / t);
    }
  }
  EXPECT_THROW(mirror_schedule(0.0), std::invalid_argument);
  EXPECT_THROW(mirror_schedule(2.0).sample(0.0), std::domain_error);
}

TEST(OptimalScaling, Examples) {
  EXPECT_TRUE(check_optimal_scaling(nesterov_schedule(), {0.5, 1, 2, 10}).pass);
  EXPECT_TRUE(check_optimal_scaling(linear_schedule(1.0), {0.5, 1, 2, 10}).pass);
  EXPECT_TRUE(check_optimal_scaling(exponential_schedule(), {0.5, 1, 2, 10}).pass);

  const auto bad = check_optimal_scaling(linear_schedule(2.0), {0.5, 1, 2, 10});
  EXPECT_FALSE(bad.pass);
  EXPECT_EQ(bad.violations.size(), 4u);
  ASSERT_TRUE(bad.first_violation());
  EXPECT_EQ(bad.first_violation()->t, 0.5);
  EXPECT_NE(bad.first_violation()->reason.find("beta_dot"), std::string::npos);
}

TEST(OptimalScaling, EmptyGrid) {
  EXPECT_THROW(check_optimal_scaling(nesterov_schedule(), {}), std::invalid_argument);
}

TEST(TimeDilate, IdentityLeavesScheduleUnchanged) {
  const auto s = nesterov_schedule();
  const auto d = time_dilate(s, identity_dilation());
  for (double t : {0.1, 1.0, 4.0}) {
    const auto a = s.sample(t), b = d.sample(t);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_EQ(a.beta, b.beta);
    EXPECT_EQ(a.gamma, b.gamma);
    EXPECT_EQ(a.alpha_dot, b.alpha_dot);
    EXPECT_EQ(a.beta_dot, b.beta_dot);
    EXPECT_EQ(a.gamma_dot, b.gamma_dot);
    EXPECT_EQ(a.force_scale, b.force_scale);
  }
}

TEST(TimeDilate, NesterovSquared) {
  const auto d = time_dilate(nesterov_schedule(), power_dilation(4.0));
  for (double t : {0.2, 1.0, 3.0}) {
    EXPECT_NEAR(d.beta(t), std::log(std::pow(t, 4) / 4), 1e-13);
    EXPECT_NEAR(d.alpha(t), std::log(2 / (t * t)) + std::log(2 * t), 1e-13);
  }
}

TEST(TimeDilate, PreservesOptimalScaling) {
  const std::vector<double> grid{0.5, 1, 2, 10};
  const auto n = nesterov_schedule();
  EXPECT_EQ(check_optimal_scaling(n, grid).pass, check_optimal_scaling(time_dilate(n, power_dilation(4)), grid).pass);
  EXPECT_TRUE(check_optimal_scaling(time_dilate(n, power_dilation(4)), grid).pass);
  const auto bad = linear_schedule(2.0);
  EXPECT_FALSE(check_optimal_scaling(time_dilate(bad, power_dilation(4)), grid).pass);
}

TEST(TimeDilate, BadTauDerivativeIsDomainError) {
  Dilation flat{[](double) { return 1.0; }, [](double) { return 0.0; }, [](double) { return 0.0; }, "flat"};
  const auto d = time_dilate(exponential_schedule(), flat);
  EXPECT_THROW(d.sample(1.0), std::domain_error);
}

TEST(TimeDilate, CompositionLaw) {
  const auto s = nesterov_schedule();
  const auto t1 = power_dilation(3.0), t2 = power_dilation(1.5);
  const auto twice = time_dilate(time_dilate(s, t1), t2);
  const auto once = time_dilate(s, compose(t1, t2));
  Pcg32 rng(4);
  for (int k = 0; k < 100; ++k) {
    const double t = rng.uniform(0.05, 5.0);
    const auto a = twice.sample(t), b = once.sample(t);
    EXPECT_NEAR(a.alpha, b.alpha, 1e-9);
    EXPECT_NEAR(a.beta, b.beta, 1e-9);
    EXPECT_NEAR(a.gamma, b.gamma, 1e-9);
    EXPECT_NEAR(a.alpha_dot, b.alpha_dot, 1e-9 * std::max(1.0, std::abs(b.alpha_dot)));
    EXPECT_NEAR(a.beta_dot, b.beta_dot, 1e-9 * std::max(1.0, std::abs(b.beta_dot)));
    EXPECT_NEAR(a.gamma_dot, b.gamma_dot, 1e-9 * std::max(1.0, std::abs(b.gamma_dot)));
  }
}

TEST(Derivatives, ConsistentOnRandomTimes) {
  std::vector<Schedule> all{nesterov_schedule(),
                            exponential_schedule(),
                            mirror_schedule(3.0),
                            mirror_schedule(0.7),
                            time_dilate(nesterov_schedule(), power_dilation(4)),
                            time_dilate(exponential_schedule(), power_dilation(3)),
                            affine_log_schedule({0.1, 0, -1}, {0, 0.5, 2}, {0, 0, 1})};
  Pcg32 rng(8);
  for (const auto& s : all)
    for (int k = 0; k < 100; ++k) expect_derivatives_consistent(s, rng.uniform(0.05, 20.0));
}
