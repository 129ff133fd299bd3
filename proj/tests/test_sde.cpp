#include "genbound/density.hpp"
#include "genbound/sde.hpp"

#include <gtest/gtest.h>

using namespace genbound;

namespace {

// RK4 on the moment ODEs r' = alpha r, v' = 2 alpha v + lambda^2 from (1, 0).
std::pair<double, double> integrate_moments(const SdeSpec& spec, double t, int steps) {
  double r = 1.0, v = 0.0;
  const double h = t / steps;
  auto f = [&](double s, double rr, double vv) {
    const double a = drift_coefficient(spec, s);
    return std::pair{a * rr, 2.0 * a * vv + lambda_sq(spec, s)};
  };
  for (int k = 0; k < steps; ++k) {
    const double s = k * h;
    auto [k1r, k1v] = f(s, r, v);
    auto [k2r, k2v] = f(s + h / 2, r + h / 2 * k1r, v + h / 2 * k1v);
    auto [k3r, k3v] = f(s + h / 2, r + h / 2 * k2r, v + h / 2 * k2v);
    auto [k4r, k4v] = f(s + h, r + h * k3r, v + h * k3v);
    r += h / 6 * (k1r + 2 * k2r + 2 * k3r + k4r);
    v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
  }
  return {r, v};
}

SdeSpec ve_spec(double T = 1.0) {
  SdeSpec s;
  s.kind = SdeKind::ve;
  s.horizon = T;
  return s;
}

}  // namespace

TEST(Marginal, MatchesMomentOde) {
  for (const SdeSpec& spec : {SdeSpec{}, ve_spec()}) {
    for (double t : {0.01, 0.3, 0.75, 1.0}) {
      const auto [r, v] = integrate_moments(spec, t, 20000);
      const MarginalStats ms = marginal(spec, t);
      EXPECT_NEAR(ms.r, r, 1e-9 * std::max(1.0, r)) << to_string(spec.kind) << " t=" << t;
      EXPECT_NEAR(ms.std * ms.std, v, 1e-8 * std::max(1.0, v)) << to_string(spec.kind) << " t=" << t;
    }
  }
}

TEST(Marginal, VpPreservesVariance) {
  const SdeSpec spec;
  for (double t : {1e-4, 0.1, 0.5, 1.0}) {
    const MarginalStats ms = marginal(spec, t);
    EXPECT_NEAR(ms.r * ms.r + ms.std * ms.std, 1.0, 1e-14);
  }
}

TEST(Marginal, RejectsOutOfRangeTimes) {
  const SdeSpec spec;
  EXPECT_THROW(marginal(spec, 0.0), std::out_of_range);
  EXPECT_THROW(marginal(spec, 1.5), std::out_of_range);
  EXPECT_THROW(lambda_sq(spec, -0.1), std::out_of_range);
  EXPECT_NO_THROW(lambda_sq(spec, 0.0));
}

TEST(Schedule, VpLambdaIsLinear) {
  const SdeSpec spec;
  EXPECT_DOUBLE_EQ(lambda_sq(spec, 0.0), 0.1);
  EXPECT_DOUBLE_EQ(lambda_sq(spec, 1.0), 20.0);
  EXPECT_NEAR(integrated_beta(spec, 1.0), 0.1 + 0.5 * 19.9, 1e-14);
}

TEST(SdeSpec, ValidateRejectsNonsense) {
  SdeSpec s;
  s.horizon = 0.0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  SdeSpec v = ve_spec();
  v.sigma_min = 2.0 * v.sigma_max;
  EXPECT_THROW(v.validate(), std::invalid_argument);
}

TEST(EncoderKl, MatchesGaussianKlOracle) {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    const Vector x = rng.normal_vector(3);
    const double T = rng.uniform(0.05, 1.0);
    for (SdeSpec spec : {SdeSpec{}, ve_spec()}) {
      spec.horizon = T;
      const MarginalStats ms = marginal(spec, T);
      const double pv = prior_std(spec) * prior_std(spec);
      const double oracle =
          gaussian_kl(ms.r * x, Vector::Constant(3, ms.std * ms.std), Vector::Zero(3), Vector::Constant(3, pv));
      EXPECT_NEAR(encoder_kl_to_prior(spec, x, T), oracle, 1e-10 * oracle);
    }
  }
}

TEST(EncoderKl, VeAtOriginIsZero) {
  EXPECT_EQ(encoder_kl_to_prior(ve_spec(), Vector::Zero(2), 1.0), 0.0);
}

TEST(EncoderKl, LargeTimeDecaysWithoutUnderflowTrouble) {
  SdeSpec spec;
  spec.horizon = 100.0;
  Vector x(2);
  x << 1.0, -1.0;
  const double kl = encoder_kl_to_prior(spec, x, 100.0);
  EXPECT_GE(kl, 0.0);
  EXPECT_TRUE(std::isfinite(kl));
  EXPECT_LT(kl, 1e-100);
  EXPECT_THROW(encoder_kl_to_prior(spec, x, 0.0), std::invalid_argument);
}

TEST(EncoderKl, DecreasesInTime) {
  Vector x(2);
  x << 0.8, 0.3;
  double prev = std::numeric_limits<double>::infinity();
  for (double T : {0.1, 0.2, 0.5, 1.0, 2.0, 5.0}) {
    SdeSpec spec;
    spec.horizon = T;
    const double kl = encoder_kl_to_prior(spec, x, T);
    EXPECT_LT(kl, prev);
    prev = kl;
  }
}

TEST(ForwardSample, MomentsMatchMarginal) {
  const SdeSpec spec;
  Vector x0(2);
  x0 << 1.0, -0.5;
  Rng rng(4);
  const MarginalStats ms = marginal(spec, 0.3);
  Vector sum = Vector::Zero(2);
  const int n = 20000;
  for (int i = 0; i < n; ++i) sum += forward_sample(spec, x0, 0.3, rng);
  const Vector mean = sum / n;
  EXPECT_NEAR(mean[0], ms.r * x0[0], 5.0 * ms.std / std::sqrt(n));
  EXPECT_NEAR(mean[1], ms.r * x0[1], 5.0 * ms.std / std::sqrt(n));
}

TEST(ConditionalScore, GaussianKernelGradient) {
  const SdeSpec spec;
  Vector x0(2), xt(2);
  x0 << 0.5, 0.2;
  xt << -0.1, 0.4;
  const MarginalStats ms = marginal(spec, 0.4);
  const Vector s = conditional_score(spec, xt, x0, 0.4);
  EXPECT_TRUE(s.isApprox(-(xt - ms.r * x0) / (ms.std * ms.std), 1e-14));
}
