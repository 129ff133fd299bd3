#include "genbound/datasets.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace genbound;

TEST(SwissRoll, NoiselessPointLiesOnSpiral) {
  const double scale = 0.1;
  const Dataset a = make_swiss_roll(1, 0.0, scale, 5);
  const Dataset b = make_swiss_roll(1, 0.0, scale, 5);
  EXPECT_EQ(a.points, b.points);
  const double x = a.points(0, 0), y = a.points(0, 1);
  const double radius = std::hypot(x, y) / scale;  // equals the angle
  EXPECT_GE(radius, 1.5 * std::numbers::pi - 1e-12);
  EXPECT_LE(radius, 4.5 * std::numbers::pi + 1e-12);
  EXPECT_NEAR(std::cos(radius) * radius * scale, x, 1e-12);
  EXPECT_NEAR(std::sin(radius) * radius * scale, y, 1e-12);
}

TEST(SwissRoll, DefaultsFitTheBox) {
  // extremal radius of the noiseless spiral is 4.5 pi * scale = 2
  EXPECT_NEAR(4.5 * std::numbers::pi * swiss_roll_defaults::scale, 2.0, 1e-12);
  const Dataset d = make_swiss_roll(200, 0);
  EXPECT_LE(d.points.cwiseAbs().maxCoeff(), 2.5);
  EXPECT_TRUE(d.points.allFinite());
}

TEST(SwissRoll, DeterministicAndSeedSensitive) {
  EXPECT_EQ(make_swiss_roll(50, 3).points, make_swiss_roll(50, 3).points);
  EXPECT_NE(make_swiss_roll(50, 3).points, make_swiss_roll(50, 4).points);
}

TEST(SwissRoll, RejectsBadArguments) {
  EXPECT_THROW(make_swiss_roll(0, 1), std::invalid_argument);
  EXPECT_THROW(make_swiss_roll(5, -0.1, 0.1, 1), std::invalid_argument);
  EXPECT_THROW(make_swiss_roll(5, 0.1, 0.0, 1), std::invalid_argument);
}

TEST(Gaussian, EmpiricalMeanWithinClt) {
  const Dataset d = make_gaussian(10000, Vector::Zero(2), Vector::Ones(2), 1);
  for (Eigen::Index j = 0; j < 2; ++j) EXPECT_LT(std::abs(d.points.col(j).mean()), 0.05);
  EXPECT_EQ(make_gaussian(1, Vector::Zero(2), Vector::Ones(2), 1).points.rows(), 1);
}

TEST(Gaussian, RejectsDegenerateCovariance) {
  Vector cov(2);
  cov << 0.0, 1.0;
  EXPECT_THROW(make_gaussian(5, Vector::Zero(2), cov, 0), std::invalid_argument);
}

TEST(Mixture, PointsClusterAroundCenters) {
  const Matrix centers = default_mixture_centers();
  const Dataset d = make_gaussian_mixture(400, centers, 0.3, 2);
  for (Eigen::Index i = 0; i < d.points.rows(); ++i) {
    double best = 1e9;
    for (Eigen::Index k = 0; k < centers.rows(); ++k) best = std::min(best, (d.points.row(i) - centers.row(k)).norm());
    EXPECT_LT(best, 0.3 * 6.0);
  }
}

TEST(Diameter, Basics) {
  Matrix two(2, 2);
  two << 0.0, 0.0, 3.0, 4.0;
  EXPECT_DOUBLE_EQ(diameter(two), 5.0);
  EXPECT_EQ(diameter(Matrix::Ones(1, 2)), 0.0);
}

TEST(Diameter, PermutationAndTranslationInvariant) {
  const Matrix p = make_swiss_roll(60, 9).points;
  const double d0 = diameter(p);
  EXPECT_GT(d0, 0.0);
  Matrix rev = p.colwise().reverse();
  EXPECT_DOUBLE_EQ(diameter(rev), d0);
  Matrix shifted = p;
  shifted.rowwise() += Eigen::RowVector2d(10.0, -3.0);
  EXPECT_NEAR(diameter(shifted), d0, 1e-12);
  EXPECT_EQ(diameter(p), d0);
}

TEST(PointFile, RoundTripIsBitExact) {
  const Dataset d = make_swiss_roll(37, 0.05, 0.13, 17);
  std::stringstream ss;
  write_points(ss, d, {"a comment"});
  std::vector<std::string> comments;
  const Dataset back = read_points(ss, &comments);
  EXPECT_EQ(back.points, d.points);
  EXPECT_EQ(back.generator, d.generator);
  EXPECT_EQ(back.seed, d.seed);
  EXPECT_EQ(back.params, d.params);
  ASSERT_EQ(comments.size(), 2u);
  EXPECT_EQ(comments[1], "a comment");

  std::stringstream again;
  write_points(again, back, {"a comment"});
  std::stringstream first;
  write_points(first, d, {"a comment"});
  EXPECT_EQ(again.str(), first.str());
}

TEST(PointFile, RejectsMalformedInput) {
  std::stringstream missing("generator swiss_roll\nm 2\nd 2\npoints\n1 2\n");
  EXPECT_THROW(read_points(missing), std::runtime_error);
  std::stringstream wide("m 1\nd 2\npoints\n1 2 3\n");
  EXPECT_THROW(read_points(wide), std::runtime_error);
  std::stringstream junk("m 1\nd 1\npoints\nabc\n");
  EXPECT_THROW(read_points(junk), std::runtime_error);
}
