#include "genbound/numerics.hpp"

#include <gtest/gtest.h>

using namespace genbound;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(43);
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(0, 0), derive_seed(0, 1));
  EXPECT_NE(derive_seed(0, 1), derive_seed(1, 0));
  EXPECT_EQ(derive_seed(5, 9), derive_seed(5, 9));
}

TEST(Rng, NormalMomentsWithinClt) {
  Rng rng(7);
  const std::size_t n = 100000;
  std::vector<double> xs(n);
  for (auto& x : xs) x = rng.normal();
  const Estimate e = summarize(xs);
  EXPECT_LT(std::abs(e.mean), 5.0 / std::sqrt(static_cast<double>(n)));
  const double var = sample_std(xs) * sample_std(xs);
  EXPECT_GE(var, 0.97);
  EXPECT_LE(var, 1.03);
}

TEST(Rng, IndexCoversRange) {
  Rng rng(1);
  std::vector<int> hits(5, 0);
  for (int i = 0; i < 5000; ++i) ++hits[rng.index(5)];
  for (int h : hits) EXPECT_GT(h, 800);
  EXPECT_THROW(rng.index(0), std::invalid_argument);
}

TEST(GaussianSample, RejectsDegenerateStd) {
  Rng rng(0);
  EXPECT_THROW(gaussian_sample(rng, 2, Vector::Zero(2), 0.0), std::invalid_argument);
  EXPECT_THROW(gaussian_sample(rng, 2, Vector::Zero(2), -1.0), std::invalid_argument);
  EXPECT_THROW(gaussian_sample(rng, 0, Vector::Zero(0), 1.0), std::invalid_argument);
}

TEST(GaussianSample, DeterministicOnFreshRngs) {
  Rng a(11), b(11);
  const Vector mean = Vector::Constant(3, 2.0);
  EXPECT_EQ(gaussian_sample(a, 3, mean, 0.5), gaussian_sample(b, 3, mean, 0.5));
}

TEST(GaussianSample, VarianceLawOfLargeNumbers) {
  Rng rng(3);
  std::vector<double> xs(100000);
  for (auto& x : xs) x = gaussian_sample(rng, 1, Vector::Zero(1), 1.0)[0];
  const double var = sample_std(xs) * sample_std(xs);
  EXPECT_GE(var, 0.97);
  EXPECT_LE(var, 1.03);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  AdamState st;
  Vector p(3);
  p << 1.0, -2.0, 0.5;
  const Vector before = p;
  for (int i = 0; i < 10; ++i) adam_step(st, p, Vector::Zero(3));
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 10u);
}

TEST(Adam, FirstStepMatchesHandFormula) {
  AdamState st;
  st.lr = 0.01;
  Vector p(3), g(3);
  p << 0.0, 1.0, -1.0;
  g << 0.3, -2.0, 1e-9;
  const Vector before = p;
  adam_step(st, p, g);
  // bias corrections cancel on step 1: m_hat = g, v_hat = g^2
  for (int i = 0; i < 3; ++i)
    EXPECT_NEAR(p[i] - before[i], -st.lr * g[i] / (std::abs(g[i]) + st.eps), 1e-15);
}

TEST(Adam, ConstantGradientMovesOppositeSign) {
  AdamState st;
  Vector p = Vector::Zero(2), g(2);
  g << 1.5, -0.25;
  double prev0 = 0.0, prev1 = 0.0;
  for (int i = 0; i < 50; ++i) {
    adam_step(st, p, g);
    EXPECT_LT(p[0], prev0);
    EXPECT_GT(p[1], prev1);
    prev0 = p[0];
    prev1 = p[1];
  }
}

TEST(Adam, ShapeMismatchThrows) {
  AdamState st;
  Vector p = Vector::Zero(3);
  EXPECT_THROW(adam_step(st, p, Vector::Zero(2)), std::invalid_argument);
  adam_step(st, p, Vector::Ones(3));
  Vector q = Vector::Zero(4);
  EXPECT_THROW(adam_step(st, q, Vector::Ones(4)), std::invalid_argument);
}

TEST(FiniteDiff, Quadratic) {
  Vector x(1);
  x << 3.0;
  const Vector g = finite_diff_grad([](const Vector& p) { return p[0] * p[0]; }, x, 1e-4);
  EXPECT_NEAR(g[0], 6.0, 1e-6);
}

TEST(FiniteDiff, ConstantIsZero) {
  const Vector g = finite_diff_grad([](const Vector&) { return 4.2; }, Vector::Ones(5), 1e-5);
  EXPECT_EQ(g, Vector::Zero(5));
  EXPECT_THROW(finite_diff_grad([](const Vector&) { return 0.0; }, Vector::Ones(1), 0.0), std::invalid_argument);
}

TEST(LogSumExp, StableForLargeInputs) {
  Vector v(3);
  v << 1000.0, 1000.0, -1e9;
  EXPECT_NEAR(log_sum_exp(v), 1000.0 + std::log(2.0), 1e-12);
  EXPECT_EQ(log_sum_exp(Vector()), -std::numeric_limits<double>::infinity());
}

TEST(Summarize, MeanAndStdError) {
  const std::vector<double> xs{1.0, 2.0, 3.0, 4.0};
  const Estimate e = summarize(xs);
  EXPECT_DOUBLE_EQ(e.mean, 2.5);
  EXPECT_NEAR(e.std_error, std::sqrt(5.0 / 3.0 / 4.0), 1e-15);
  EXPECT_EQ(e.count, 4u);
}
