#include "genbound/datasets.hpp"
#include "genbound/scorenet.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace genbound;

namespace {

ScoreNet small_net(std::uint64_t seed, Activation act = Activation::silu,
                   TimeEmbedding embed = TimeEmbedding::scalar_append) {
  ScoreNetConfig c;
  c.hidden = {6, 5};
  c.activation = act;
  c.time_embed = embed;
  c.time_frequencies = 2;
  Rng rng(seed);
  return ScoreNet(c, rng);
}

}  // namespace

TEST(Mlp, ParameterLayout) {
  Mlp mlp({3, 4, 2}, Activation::relu);
  EXPECT_EQ(mlp.num_params(), 3u * 4 + 4 + 4 * 2 + 2);
  Rng rng(1);
  mlp.init_uniform(rng);
  const Matrix x = Matrix::Random(5, 3);
  const Matrix h = (x * mlp.weight(0).transpose()).rowwise() + mlp.bias(0).transpose();
  const Matrix y = (h.cwiseMax(0.0) * mlp.weight(1).transpose()).rowwise() + mlp.bias(1).transpose();
  EXPECT_TRUE(mlp.forward(x).isApprox(y, 1e-14));
}

TEST(Mlp, InputGradientMatchesFiniteDifferences) {
  Mlp mlp({2, 7, 3}, Activation::silu);
  Rng rng(2);
  mlp.init_uniform(rng);
  Vector x(2);
  x << 0.3, -0.8;
  Vector w(3);
  w << 1.0, -2.0, 0.5;
  Mlp::Tape tape;
  const Matrix xin = x.transpose();
  mlp.forward(xin, tape);
  Vector grad = Vector::Zero(static_cast<Eigen::Index>(mlp.num_params()));
  const Matrix dx = mlp.backward(tape, w.transpose(), grad);
  const Vector fd = finite_diff_grad(
      [&](const Vector& p) { return (mlp.forward(Matrix(p.transpose())) * w)(0, 0); }, x, 1e-6);
  EXPECT_LT(relative_error(dx.row(0).transpose(), fd), 1e-8);
}

class DsmGradient : public ::testing::TestWithParam<std::tuple<Activation, TimeEmbedding>> {};

TEST_P(DsmGradient, BackpropMatchesFiniteDifferences) {
  const auto [act, embed] = GetParam();
  ScoreNet net = small_net(3, act, embed);
  const SdeSpec spec;
  Rng rng(4);
  const DsmDraw d = draw_dsm(make_swiss_roll(6, 1).points, 3, 1e-3, 1.0, rng);
  Vector g;
  dsm_loss_and_grad(net, spec, d, 1e-3, g);
  const Vector p0 = net.mlp().params();
  const Vector fd = finite_diff_grad(
      [&](const Vector& p) {
        net.mlp().params() = p;
        Vector unused;
        return dsm_loss_and_grad(net, spec, d, 1e-3, unused);
      },
      p0, 1e-5);
  EXPECT_LT(relative_error(g, fd), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Variants, DsmGradient,
                         ::testing::Combine(::testing::Values(Activation::silu, Activation::relu),
                                            ::testing::Values(TimeEmbedding::scalar_append,
                                                              TimeEmbedding::sinusoidal)));

TEST(Dsm, LossAndGradAgreesWithEstimator) {
  const ScoreNet net = small_net(5);
  const SdeSpec spec;
  const Matrix x0 = make_swiss_roll(10, 2).points;
  Rng a(8), b(8);
  const Estimate e = dsm_loss_estimate(net, spec, x0, a, 4, 1e-3);
  const DsmDraw d = draw_dsm(x0, 4, 1e-3, 1.0, b);
  Vector g;
  EXPECT_NEAR(dsm_loss_and_grad(net, spec, d, 1e-3, g), e.mean, 1e-12 * std::abs(e.mean));
}

TEST(Dsm, ZeroNetMatchesQuadrature) {
  // with s = 0 the loss is (1/2) int_eps^T lambda^2 d / std^2 dt
  ScoreNet net = small_net(6);
  net.mlp().zero_output_layer();
  const SdeSpec spec;
  const double eps = 1e-3;
  const int n = 20000;
  double integral = 0.0;
  const double a = std::log(eps), b = std::log(spec.horizon), h = (b - a) / n;
  for (int k = 0; k <= n; ++k) {
    const double t = std::exp(a + k * h);
    const double ms = marginal(spec, t).std;
    const double f = 0.5 * lambda_sq(spec, t) * 2.0 / (ms * ms) * t;
    integral += (k == 0 || k == n ? 1.0 : (k % 2 ? 4.0 : 2.0)) * f;
  }
  integral *= h / 3.0;
  Rng rng(9);
  const Estimate e = dsm_loss_estimate(net, spec, make_swiss_roll(50, 3).points, rng, 400, eps);
  EXPECT_NEAR(e.mean, integral, 4.0 * e.std_error);
}

TEST(Esm, EqualsDsmForSinglePoint) {
  const ScoreNet net = small_net(10);
  const SdeSpec spec;
  const Matrix one = make_swiss_roll(1, 4).points;
  for (int rep = 0; rep < 5; ++rep) {
    Rng a(100 + rep), b(200 + rep);
    const Estimate dsm = dsm_loss_estimate(net, spec, one, a, 20000, 1e-3);
    const Estimate esm = esm_loss_estimate(net, spec, one, b, 20000, 1e-3);
    EXPECT_LE(std::abs(dsm.mean - esm.mean), 3.0 * std::hypot(dsm.std_error, esm.std_error));
  }
}

TEST(Esm, MixtureScoreMatchesKdeScore) {
  const SdeSpec spec;
  const Matrix data = make_swiss_roll(15, 5).points;
  Rng rng(1);
  const Matrix xt = rng.normal_matrix(4, 2);
  Vector t(4);
  t << 0.01, 0.2, 0.5, 1.0;
  const Matrix s = empirical_mixture_score(spec, data, xt, t);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const MarginalStats ms = marginal(spec, t[i]);
    KdeModel mix{ms.r * data, ms.std};
    EXPECT_LT(relative_error(s.row(i).transpose(), kde_score(mix, xt.row(i).transpose())), 1e-10);
  }
}

TEST(Esm, ExactScoreHasZeroLoss) {
  const SdeSpec spec;
  const Dataset data = make_swiss_roll(10, 3);
  const auto exact = [&](const Matrix& x, const Vector& t) { return empirical_mixture_score(spec, data.points, x, t); };
  Rng rng(2);
  EXPECT_NEAR(esm_loss_empirical(exact, spec, data, rng, 1000), 0.0, 1e-20);
}

TEST(Training, ReducesLossAndIsReproducible) {
  const SdeSpec spec;
  const Matrix data = make_swiss_roll(64, 1).points;
  TrainConfig tc;
  tc.iterations = 300;
  tc.batch_size = 32;
  tc.seed = 3;
  ScoreNet a = small_net(11), b = small_net(11);
  const auto ta = train_score(a, spec, data, tc);
  const auto tb = train_score(b, spec, data, tc);
  EXPECT_EQ(a.mlp().params(), b.mlp().params());
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) head += ta[i], tail += ta[ta.size() - 1 - i];
  EXPECT_LT(tail, head);
}

TEST(ScoreEval, RejectsNonFiniteInput) {
  const ScoreNet net = small_net(1);
  Vector x(2);
  x << std::nan(""), 0.0;
  EXPECT_THROW(score_eval(net, x, 0.5), std::invalid_argument);
  EXPECT_THROW(score_eval(net, Vector::Zero(2), std::numeric_limits<double>::infinity()), std::invalid_argument);
}

TEST(ScoreNorms, ProfileMaxAndLength) {
  const ScoreNet net = small_net(2);
  const SdeSpec spec;
  Rng rng(3);
  const std::vector<double> grid{0.0, 0.25, 0.5, 0.75};
  const auto p = forward_probe_score_norms(net, spec, make_swiss_roll(20, 1).points, grid, 1e-3, rng);
  ASSERT_EQ(p.per_step.size(), grid.size());
  EXPECT_EQ(p.max, *std::max_element(p.per_step.begin(), p.per_step.end()));
}

TEST(ModelFile, RoundTrip) {
  const ScoreNet net = small_net(4, Activation::relu, TimeEmbedding::sinusoidal);
  std::stringstream ss;
  write_score_net(ss, net, {"hello"});
  std::vector<std::string> comments;
  const ScoreNet back = read_score_net(ss, &comments);
  EXPECT_EQ(back.mlp().params(), net.mlp().params());
  EXPECT_EQ(back.mlp().dims(), net.mlp().dims());
  EXPECT_EQ(back.time_embedding(), TimeEmbedding::sinusoidal);
  EXPECT_EQ(back.time_frequencies(), 2u);
  EXPECT_EQ(comments.back(), "hello");
}

TEST(ModelFile, RejectsWrongParameterCount) {
  std::stringstream ss("layer_dims 3 2\nactivation silu\ndata_dim 2\ntime_embed scalar_append\n"
                       "time_frequencies 0\nparams 1\n0.5\n");
  EXPECT_THROW(read_score_net(ss), std::runtime_error);
}
