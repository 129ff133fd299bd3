#include "genbound/datasets.hpp"
#include "genbound/vae.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace genbound;

namespace {

VaeModel small_vae(std::uint64_t seed, std::size_t latent = 1) {
  VaeConfig c;
  c.latent_dim = latent;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  Rng rng(seed);
  return VaeModel(c, rng);
}

Matrix mixture(std::size_t m, std::uint64_t seed) {
  return make_gaussian_mixture(m, default_mixture_centers(), 0.3, seed).points;
}

double brute_force_linear(const Matrix& phi, const Matrix& theta, const Matrix& ref, double sigma, const Matrix& x,
                          double R) {
  const double d = static_cast<double>(phi.rows()), dl = static_cast<double>(phi.cols());
  const double m = static_cast<double>(x.rows());
  double quad = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    quad += xi.dot(phi * phi.transpose() * xi);
  }
  double diff = 0.0;
  for (Eigen::Index a = 0; a < theta.size(); ++a) diff += std::pow(theta.data()[a] - ref.data()[a], 2);
  const double s2 = sigma * sigma;
  const double rad = 0.5 * (s2 - 1.0) * dl - dl * std::log(s2) + quad / (d * m) + s2 * diff / (2.0 * d * m);
  return std::sqrt(2.0) * R * std::sqrt(rad);
}

}  // namespace

TEST(Vae, ElboGradientMatchesFiniteDifferences) {
  for (std::size_t latent : {1u, 2u}) {
    VaeModel model = small_vae(1, latent);
    const Matrix x = mixture(7, 2);
    Rng rng(3);
    const Matrix eps = rng.normal_matrix(7, latent);
    VaeGrad g;
    vae_loss_and_grad(model, x, eps, 0.7, g);
    const Vector e0 = model.encoder().params(), d0 = model.decoder().params();
    auto loss_at = [&](const Vector& e, const Vector& d) {
      model.encoder().params() = e;
      model.decoder().params() = d;
      VaeGrad unused;
      return vae_loss_and_grad(model, x, eps, 0.7, unused);
    };
    const Vector fe = finite_diff_grad([&](const Vector& p) { return loss_at(p, d0); }, e0, 1e-5);
    const Vector fd = finite_diff_grad([&](const Vector& p) { return loss_at(e0, p); }, d0, 1e-5);
    EXPECT_LT(relative_error(g.encoder, fe), 1e-4);
    EXPECT_LT(relative_error(g.decoder, fd), 1e-4);
  }
}

TEST(Vae, BetaZeroDropsKl) {
  const VaeModel model = small_vae(2);
  const Matrix x = mixture(5, 1);
  Rng rng(1);
  const Matrix eps = rng.normal_matrix(5, 1);
  VaeGrad g;
  const double with = vae_loss_and_grad(model, x, eps, 1.0, g);
  const double without = vae_loss_and_grad(model, x, eps, 0.0, g);
  EXPECT_NEAR(with - without, encoder_kl(model.encode(x)).mean(), 1e-12);
}

TEST(Vae, TrainingIsReproducibleAndImproves) {
  const Matrix data = mixture(128, 4);
  VaeTrainConfig tc;
  tc.iterations = 1500;
  tc.seed = 9;
  VaeModel a = small_vae(5), b = small_vae(5);
  const auto trace = train_vae(a, data, tc);
  train_vae(b, data, tc);
  EXPECT_EQ(a.encoder().params(), b.encoder().params());
  EXPECT_EQ(a.decoder().params(), b.decoder().params());
  // 100-step window means trend downwards
  auto window = [&](std::size_t start) {
    double s = 0.0;
    for (std::size_t i = start; i < start + 100; ++i) s += trace[i];
    return s / 100.0;
  };
  EXPECT_LT(window(trace.size() - 100), window(0));
  EXPECT_EQ(a.reference_decoder().params(), small_vae(5).reference_decoder().params());
}

TEST(Cmi, ZeroAtReferenceAndPositiveAfterTraining) {
  VaeModel model = small_vae(6);
  const Matrix data = mixture(64, 2);
  Rng rng(1);
  EXPECT_EQ(cmi_upper_bound(model, data, 20, rng), 0.0);
  VaeTrainConfig tc;
  tc.iterations = 200;
  train_vae(model, data, tc);
  const double after = cmi_upper_bound(model, data, 20, rng);
  EXPECT_GT(after, 0.0);
  model.reset_decoder_to_reference();
  EXPECT_EQ(cmi_upper_bound(model, data, 20, rng), 0.0);
}

TEST(Cmi, NormalizationFlag) {
  VaeModel model = small_vae(7);
  const Matrix data = mixture(32, 3);
  VaeTrainConfig tc;
  tc.iterations = 100;
  train_vae(model, data, tc);
  Rng a(5), b(5);
  const double per_m = cmi_upper_bound(model, data, 10, a, CmiNormalization::per_m);
  const double per_m2 = cmi_upper_bound(model, data, 10, b, CmiNormalization::per_m_squared);
  EXPECT_NEAR(per_m2 * 32.0, per_m, 1e-14 * per_m);
}

TEST(Lipschitz, LinearMapApproachesSpectralNormFromBelow) {
  Mlp lin({2, 3}, Activation::silu);
  Rng rng(1);
  lin.init_uniform(rng);
  const Matrix W = lin.weight(0);
  const double spectral = Eigen::JacobiSVD<Matrix>(W).singularValues()[0];
  const double est = lipschitz_estimate([&](const Matrix& z) { return lin.forward(z); }, 2, 10000, rng);
  EXPECT_LE(est, spectral * (1.0 + 1e-9));
  EXPECT_GT(est, 0.95 * spectral);
}

TEST(PacBayes, FormulaAndValidation) {
  EXPECT_NEAR(pacbayes_bound(1.0, 4.0, 0.5, 2.0), 1.0 + (2.0 / std::sqrt(2.0) + std::sqrt(2.0) * 0.5) * 2.0, 1e-14);
  EXPECT_THROW(pacbayes_bound(1.0, 1.0, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(pacbayes_bound(1.0, 1.0, 1.0, 0.0), std::invalid_argument);
}

TEST(MiRoot, MonotoneInEachTerm) {
  std::vector<double> kl{0.1, 0.5, 2.0}, cmi{0.01, 0.0, 0.3};
  const double base = mi_root_term(1.5, kl, cmi);
  for (std::size_t i = 0; i < kl.size(); ++i) {
    auto k2 = kl, c2 = cmi;
    k2[i] += 0.2;
    c2[i] += 0.2;
    EXPECT_GT(mi_root_term(1.5, k2, cmi), base);
    EXPECT_GT(mi_root_term(1.5, kl, c2), base);
  }
  EXPECT_NEAR(mi_root_term(3.0, kl, cmi), 2.0 * base, 1e-14);
}

TEST(W1Bound, DoublingROnlyScalesRootPart) {
  VaeModel model = small_vae(8);
  const Matrix data = mixture(40, 1);
  VaeTrainConfig tc;
  tc.iterations = 200;
  train_vae(model, data, tc);
  Rng a(3), b(3);
  VaeBoundOptions opt;
  opt.num_mc = 10;
  opt.lipschitz_pairs = 100;
  const VaeBoundReport r1 = vae_w1_bound(model, data, 1.0, a, opt);
  const VaeBoundReport r2 = vae_w1_bound(model, data, 2.0, b, opt);
  EXPECT_EQ(r1.recon, r2.recon);
  EXPECT_NEAR(r2.mi_bound_total - r2.recon, 2.0 * (r1.mi_bound_total - r1.recon), 1e-12);
  EXPECT_GE(r1.kl_avg, 0.0);
  EXPECT_GE(r1.cmi_ub, 0.0);
  EXPECT_LE(r1.mi_bound_total, r1.mi_split_total + 1e-12);
}

TEST(W1Bound, SinglePointKlInClosedForm) {
  VaeModel model = small_vae(9);
  const Matrix x = mixture(1, 2);
  Rng rng(1);
  VaeBoundOptions opt;
  opt.num_mc = 5;
  opt.lipschitz_pairs = 10;
  const VaeBoundReport r = vae_w1_bound(model, x, 1.0, rng, opt);
  const auto e = model.encode(x);
  const double mu = e.mu(0, 0), ls = e.log_sigma(0, 0);
  EXPECT_NEAR(r.kl_avg, 0.5 * (std::exp(2 * ls) + mu * mu - 1.0 - 2.0 * ls), 1e-14);
  EXPECT_EQ(r.cmi_ub, 0.0);
  EXPECT_NEAR(r.mi_bound_total, r.recon + std::sqrt(2.0) * std::sqrt(r.kl_avg), 1e-12);
}

TEST(W1Bound, ComparisonConditionImpliesTighter) {
  VaeModel model = small_vae(10);
  const Matrix data = mixture(60, 5);
  VaeTrainConfig tc;
  tc.iterations = 300;
  train_vae(model, data, tc);
  Rng rng(2);
  VaeBoundOptions opt;
  opt.num_mc = 10;
  opt.lipschitz_pairs = 500;
  const VaeBoundReport r = vae_w1_bound(model, data, diameter(data) / 2.0, rng, opt);
  const BoundComparison c = compare_with_pacbayes(r);
  EXPECT_TRUE(c.condition);
  EXPECT_TRUE(c.mi_tighter);
  EXPECT_GT(r.K_theta, 0.0);
  EXPECT_DOUBLE_EQ(r.Delta, diameter(data));
}

TEST(LinearVae, TrivialInstances) {
  const std::size_t d = 3, dl = 2, m = 4;
  Rng rng(1);
  const Matrix x = rng.normal_matrix(m, d);
  const Matrix ref = rng.normal_matrix(dl, d);
  EXPECT_EQ(linear_vae_bound(Matrix::Zero(d, dl), ref, ref, 1.0, x, 2.0), 0.0);
  // |theta - ref|^2 = 2 d m gives a unit radicand
  Matrix theta = ref;
  theta(0, 0) += std::sqrt(2.0 * d * m);
  EXPECT_NEAR(linear_vae_bound(Matrix::Zero(d, dl), theta, ref, 1.0, x, 2.0), std::sqrt(2.0) * 2.0, 1e-14);
  EXPECT_THROW(linear_vae_bound(Matrix::Zero(d, dl), ref, ref, 0.0, x, 1.0), std::invalid_argument);
  EXPECT_THROW(linear_vae_bound(Matrix::Zero(d, dl), ref, ref, std::sqrt(2.0), x, 1.0), std::domain_error);
}

TEST(LinearVae, MatchesBruteForce) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t d = 2 + rng.index(5), dl = 1 + rng.index(3), m = 1 + rng.index(30);
    const Matrix phi = rng.normal_matrix(d, dl), theta = rng.normal_matrix(dl, d), ref = rng.normal_matrix(dl, d);
    const Matrix x = rng.normal_matrix(m, d);
    const double sigma = rng.uniform(0.2, 1.0), R = rng.uniform(0.1, 4.0);
    const double want = brute_force_linear(phi, theta, ref, sigma, x, R);
    EXPECT_NEAR(linear_vae_bound(phi, theta, ref, sigma, x, R), want, 1e-12 * want);
  }
}

TEST(VaeFile, RoundTripKeepsAllThreeNetworks) {
  VaeModel model = small_vae(11, 2);
  VaeTrainConfig tc;
  tc.iterations = 20;
  train_vae(model, mixture(20, 1), tc);
  std::stringstream ss;
  write_vae(ss, model, {"note"});
  const VaeModel back = read_vae(ss);
  EXPECT_EQ(back.latent_dim(), 2u);
  EXPECT_EQ(back.encoder().params(), model.encoder().params());
  EXPECT_EQ(back.decoder().params(), model.decoder().params());
  EXPECT_EQ(back.reference_decoder().params(), model.reference_decoder().params());
  EXPECT_NE(back.decoder().params(), back.reference_decoder().params());
}

TEST(GenerationError, BoundHoldsOnMixture) {
  const Matrix train = mixture(200, 0), test = mixture(1000, 77);
  VaeModel model = small_vae(12);
  VaeTrainConfig tc;
  tc.iterations = 2000;
  train_vae(model, train, tc);
  Rng rng(4);
  VaeBoundOptions opt;
  opt.num_mc = 50;
  opt.lipschitz_pairs = 1000;
  const VaeBoundReport r = vae_w1_bound(model, train, diameter(train) / 2.0, rng, opt);
  const Estimate gen = vae_generation_error(model, test, 5000, rng);
  EXPECT_GE(r.mi_bound_total, gen.mean - 3.0 * std::hypot(gen.std_error, r.recon_stderr));
}
