#pragma once

#include "genbound/datasets.hpp"
#include "genbound/mlp.hpp"
#include "genbound/numerics.hpp"
#include "genbound/scorenet.hpp"

#include <istream>
#include <ostream>
#include <vector>

namespace genbound {

struct VaeConfig {
  std::size_t data_dim = 2;
  std::size_t latent_dim = 1;
  std::vector<std::size_t> encoder_hidden{64, 64};
  std::vector<std::size_t> decoder_hidden{64, 64};
  Activation activation = Activation::silu;
};

/// Gaussian encoder N(mu(x), diag(sigma(x)^2)), unit-covariance Gaussian
/// decoder N(mu_theta(z), I), and a frozen copy of the decoder taken at
/// initialization that serves as the data-free reference generator.
class VaeModel {
 public:
  struct Encoded {
    Matrix mu;
    Matrix log_sigma;
  };

  VaeModel() = default;

  VaeModel(const VaeConfig& cfg, Rng& rng) : latent_(cfg.latent_dim) {
    require(cfg.data_dim >= 1 && cfg.latent_dim >= 1, "VaeModel: dims must be >= 1");
    std::vector<std::size_t> enc{cfg.data_dim};
    enc.insert(enc.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
    enc.push_back(2 * cfg.latent_dim);
    std::vector<std::size_t> dec{cfg.latent_dim};
    dec.insert(dec.end(), cfg.decoder_hidden.begin(), cfg.decoder_hidden.end());
    dec.push_back(cfg.data_dim);
    encoder_ = Mlp(enc, cfg.activation);
    decoder_ = Mlp(dec, cfg.activation);
    encoder_.init_uniform(rng);
    decoder_.init_uniform(rng);
    reference_ = decoder_;
  }

  VaeModel(Mlp encoder, Mlp decoder, Mlp reference, std::size_t latent_dim)
      : encoder_(std::move(encoder)), decoder_(std::move(decoder)), reference_(std::move(reference)),
        latent_(latent_dim) {
    require(encoder_.output_dim() == 2 * latent_ && decoder_.input_dim() == latent_ &&
                reference_.dims() == decoder_.dims() && decoder_.output_dim() == encoder_.input_dim(),
            "VaeModel: inconsistent network shapes");
  }

  std::size_t data_dim() const { return encoder_.input_dim(); }
  std::size_t latent_dim() const { return latent_; }

  Mlp& encoder() { return encoder_; }
  Mlp& decoder() { return decoder_; }
  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }
  const Mlp& reference_decoder() const { return reference_; }

  /// Resets the trainable decoder to the reference weights.
  void reset_decoder_to_reference() { decoder_.params() = reference_.params(); }

  Encoded encode(const Matrix& x) const { return split(encoder_.forward(x)); }

  Encoded split(const Matrix& out) const {
    const auto l = static_cast<Eigen::Index>(latent_);
    return {out.leftCols(l), out.rightCols(l)};
  }

  Matrix decode(const Matrix& z) const { return decoder_.forward(z); }
  Matrix decode_reference(const Matrix& z) const { return reference_.forward(z); }

 private:
  Mlp encoder_;
  Mlp decoder_;
  Mlp reference_;
  std::size_t latent_ = 1;
};

/// Closed-form KL(N(mu, diag(exp(2 log_sigma))) || N(0, I)) per row.
inline Vector encoder_kl(const VaeModel::Encoded& e) {
  const Eigen::ArrayXXd s2 = (2.0 * e.log_sigma.array()).exp();
  return (0.5 * (s2 + e.mu.array().square() - 1.0 - 2.0 * e.log_sigma.array())).rowwise().sum().matrix();
}

struct VaeTrainConfig {
  std::size_t iterations = 3000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double beta = 1.0;
  std::uint64_t seed = 0;
};

struct VaeGrad {
  Vector encoder;
  Vector decoder;
};

/// beta-VAE objective for a fixed reparametrization noise draw:
///   mean_i [ |x_i - mu_theta(mu_i + sigma_i eps_i)|^2 / 2 + (d/2) log 2 pi ] + beta mean_i KL_i.
inline double vae_loss_and_grad(const VaeModel& model, const Matrix& x, const Matrix& eps, double beta, VaeGrad& grad) {
  require(eps.rows() == x.rows() && static_cast<std::size_t>(eps.cols()) == model.latent_dim(),
          "vae_loss: noise shape mismatch");
  const double n = static_cast<double>(x.rows());
  const double d = static_cast<double>(x.cols());

  Mlp::Tape enc_tape, dec_tape;
  const VaeModel::Encoded e = model.split(model.encoder().forward(x, enc_tape));
  const Matrix sigma = e.log_sigma.array().exp().matrix();
  const Matrix z = e.mu + sigma.cwiseProduct(eps);
  const Matrix xhat = model.decoder().forward(z, dec_tape);
  const Matrix resid = xhat - x;
  const Vector kl = encoder_kl(e);
  const double loss = 0.5 * resid.squaredNorm() / n + 0.5 * d * std::log(2.0 * std::numbers::pi) + beta * kl.mean();

  grad.encoder = Vector::Zero(static_cast<Eigen::Index>(model.encoder().num_params()));
  grad.decoder = Vector::Zero(static_cast<Eigen::Index>(model.decoder().num_params()));
  const Matrix dz = model.decoder().backward(dec_tape, resid / n, grad.decoder);
  const auto l = static_cast<Eigen::Index>(model.latent_dim());
  Matrix d_enc(x.rows(), 2 * l);
  d_enc.leftCols(l) = dz + (beta / n) * e.mu;
  d_enc.rightCols(l) = dz.cwiseProduct(sigma).cwiseProduct(eps) +
                       (beta / n) * (sigma.array().square() - 1.0).matrix();
  model.encoder().backward(enc_tape, d_enc, grad.encoder);
  return loss;
}

/// Adam on both networks; the reference decoder never changes.
inline std::vector<double> train_vae(VaeModel& model, const Matrix& data, const VaeTrainConfig& cfg) {
  require(cfg.iterations >= 1 && cfg.batch_size >= 1 && data.rows() >= 1, "train_vae: invalid config");
  require(cfg.beta >= 0.0, "train_vae: beta must be >= 0");
  Rng rng(derive_seed(cfg.seed, 0x766165ULL));
  AdamState enc_adam, dec_adam;
  enc_adam.lr = dec_adam.lr = cfg.lr;
  std::vector<double> trace;
  trace.reserve(cfg.iterations);
  Matrix batch(static_cast<Eigen::Index>(cfg.batch_size), data.cols());
  VaeGrad g;
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (Eigen::Index b = 0; b < batch.rows(); ++b)
      batch.row(b) = data.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows()))));
    const Matrix eps = rng.normal_matrix(cfg.batch_size, model.latent_dim());
    const double loss = vae_loss_and_grad(model, batch, eps, cfg.beta, g);
    if (!std::isfinite(loss) || !g.encoder.allFinite() || !g.decoder.allFinite())
      throw DivergenceError("train_vae: non-finite loss", it);
    adam_step(enc_adam, model.encoder().params(), g.encoder);
    adam_step(dec_adam, model.decoder().params(), g.decoder);
    trace.push_back(loss);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Bounds
// ---------------------------------------------------------------------------

enum class CmiNormalization { per_m, per_m_squared };

inline std::string to_string(CmiNormalization c) { return c == CmiNormalization::per_m ? "per_m" : "per_m_squared"; }

inline CmiNormalization parse_cmi_normalization(std::string_view s) {
  if (s == "per_m") return CmiNormalization::per_m;
  if (s == "per_m_squared") return CmiNormalization::per_m_squared;
  throw std::invalid_argument("unknown cmi normalization: " + std::string(s));
}

/// Per-example E_{z ~ E_phi(x_i)} KL(G_theta(z) || G_theta_ref(z)) = E |mu_theta(z) - mu_ref(z)|^2 / 2.
inline Vector generator_divergence_per_example(const VaeModel& model, const Matrix& data, std::size_t num_mc, Rng& rng) {
  require(num_mc >= 1, "cmi: num_mc must be >= 1");
  const VaeModel::Encoded e = model.encode(data);
  const Matrix sigma = e.log_sigma.array().exp().matrix();
  Vector out = Vector::Zero(data.rows());
  for (std::size_t k = 0; k < num_mc; ++k) {
    const Matrix z = e.mu + sigma.cwiseProduct(rng.normal_matrix(static_cast<std::size_t>(data.rows()), model.latent_dim()));
    out += 0.5 * (model.decode(z) - model.decode_reference(z)).rowwise().squaredNorm();
  }
  return out / static_cast<double>(num_mc);
}

/// Per-example CMI upper bound: the generator divergence divided by m
/// (per_m) or by m^2 (per_m_squared).
inline Vector cmi_per_example(const VaeModel& model, const Matrix& data, std::size_t num_mc, Rng& rng,
                              CmiNormalization norm = CmiNormalization::per_m) {
  const double m = static_cast<double>(data.rows());
  const double scale = norm == CmiNormalization::per_m ? 1.0 / m : 1.0 / (m * m);
  return scale * generator_divergence_per_example(model, data, num_mc, rng);
}

/// (1/m) sum_i I(X_hat_i; X_i | Z_i) <= (1/m) (1/m) sum_i E_z KL(G_theta(z) || G_ref(z)).
inline double cmi_upper_bound(const VaeModel& model, const Matrix& data, std::size_t num_mc, Rng& rng,
                              CmiNormalization norm = CmiNormalization::per_m) {
  return cmi_per_example(model, data, num_mc, rng, norm).mean();
}

/// Empirical Lipschitz lower bound of mu_theta: max |mu(z) - mu(z')| / |z - z'|
/// over prior pairs; half the pairs are local (z' = z + 1e-3 u).
template <class Map>
double lipschitz_estimate(const Map& f, std::size_t latent_dim, std::size_t num_pairs, Rng& rng) {
  require(num_pairs >= 1, "lipschitz_estimate: need at least one pair");
  const std::size_t n_global = (num_pairs + 1) / 2;
  const std::size_t n_local = num_pairs - n_global;
  const Matrix z1 = rng.normal_matrix(num_pairs, latent_dim);
  Matrix z2(z1.rows(), z1.cols());
  z2.topRows(static_cast<Eigen::Index>(n_global)) = rng.normal_matrix(n_global, latent_dim);
  if (n_local > 0)
    z2.bottomRows(static_cast<Eigen::Index>(n_local)) =
        z1.bottomRows(static_cast<Eigen::Index>(n_local)) + 1e-3 * rng.normal_matrix(n_local, latent_dim);
  const Matrix f1 = f(z1);
  const Matrix f2 = f(z2);
  double best = 0.0;
  for (Eigen::Index i = 0; i < z1.rows(); ++i) {
    const double dz = (z1.row(i) - z2.row(i)).norm();
    if (dz > 0.0) best = std::max(best, (f1.row(i) - f2.row(i)).norm() / dz);
  }
  return best;
}

struct VaeBoundReport {
  double recon = 0.0;  // E |X_hat - X_i| over the encode/decode round trip
  double recon_stderr = 0.0;
  double kl_avg = 0.0;
  double cmi_ub = 0.0;
  double R = 0.0;
  double mi_bound_total = 0.0;
  double mi_split_total = 0.0;  // recon + sqrt-KL part + sqrt-CMI part
  double pacbayes_total = 0.0;
  double K_theta = 0.0;  // empirical lower bound on the decoder Lipschitz constant
  double Delta = 0.0;
  CmiNormalization cmi_normalization = CmiNormalization::per_m;
  std::vector<double> kl_per_example;
  std::vector<double> cmi_per_example;
};

/// sqrt(2) R / m * sum_i sqrt(kl_i + cmi_i).
inline double mi_root_term(double R, const std::vector<double>& kl, const std::vector<double>& cmi) {
  require(kl.size() == cmi.size() && !kl.empty(), "mi_root_term: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < kl.size(); ++i) s += std::sqrt(kl[i] + cmi[i]);
  return std::numbers::sqrt2 * R * s / static_cast<double>(kl.size());
}

/// recon + (Delta / sqrt(2) + sqrt(2) K) sqrt(mean KL).
inline double pacbayes_bound(double recon, double kl_avg, double K_theta, double Delta) {
  require(K_theta > 0.0 && Delta > 0.0, "pacbayes_bound: K_theta and Delta must be > 0");
  return recon + (Delta / std::numbers::sqrt2 + std::numbers::sqrt2 * K_theta) * std::sqrt(kl_avg);
}

/// Mean |X_hat - X_i| with z ~ E_phi(x_i), X_hat ~ N(mu_theta(z), I).
inline Estimate vae_reconstruction_error(const VaeModel& model, const Matrix& data, std::size_t num_mc, Rng& rng) {
  const VaeModel::Encoded e = model.encode(data);
  const Matrix sigma = e.log_sigma.array().exp().matrix();
  std::vector<double> per_example(static_cast<std::size_t>(data.rows()), 0.0);
  for (std::size_t k = 0; k < num_mc; ++k) {
    const Matrix z = e.mu + sigma.cwiseProduct(rng.normal_matrix(static_cast<std::size_t>(data.rows()), model.latent_dim()));
    const Matrix xhat = model.decode(z) + rng.normal_matrix(static_cast<std::size_t>(data.rows()), model.data_dim());
    const Vector dist = (xhat - data).rowwise().norm();
    for (Eigen::Index i = 0; i < dist.size(); ++i) per_example[static_cast<std::size_t>(i)] += dist[i] / static_cast<double>(num_mc);
  }
  return summarize(per_example);
}

/// Generation error E |X_hat - X| with X from `test`, Z ~ N(0, I), X_hat ~ G_theta(Z).
inline Estimate vae_generation_error(const VaeModel& model, const Matrix& test, std::size_t num_mc, Rng& rng) {
  require(test.rows() >= 1 && num_mc >= 2, "vae_generation_error: need test points and samples");
  const Matrix z = rng.normal_matrix(num_mc, model.latent_dim());
  const Matrix xhat = model.decode(z) + rng.normal_matrix(num_mc, model.data_dim());
  std::vector<double> d(num_mc);
  for (std::size_t k = 0; k < num_mc; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(test.rows())));
    d[k] = (xhat.row(static_cast<Eigen::Index>(k)) - test.row(i)).norm();
  }
  return summarize(d);
}

struct VaeBoundOptions {
  std::size_t num_mc = 100;
  std::size_t lipschitz_pairs = 10000;
  CmiNormalization cmi_normalization = CmiNormalization::per_m;
};

/// W1 bound recon + (sqrt(2) R / m) sum_i sqrt(KL_i + CMI_i) with the
/// PAC-Bayes comparison evaluated on the same recon and KL values.
inline VaeBoundReport vae_w1_bound(const VaeModel& model, const Matrix& data, double R, Rng& rng,
                                   const VaeBoundOptions& opt = {}) {
  require(R > 0.0, "vae_w1_bound: R must be > 0");
  VaeBoundReport rep;
  rep.R = R;
  rep.cmi_normalization = opt.cmi_normalization;
  const Estimate recon = vae_reconstruction_error(model, data, opt.num_mc, rng);
  rep.recon = recon.mean;
  rep.recon_stderr = recon.std_error;

  const Vector kl = encoder_kl(model.encode(data));
  rep.kl_per_example.assign(kl.data(), kl.data() + kl.size());
  rep.kl_avg = kl.mean();

  const Vector cmi = cmi_per_example(model, data, opt.num_mc, rng, opt.cmi_normalization);
  rep.cmi_per_example.assign(cmi.data(), cmi.data() + cmi.size());
  rep.cmi_ub = cmi.mean();

  rep.mi_bound_total = rep.recon + mi_root_term(R, rep.kl_per_example, rep.cmi_per_example);
  const std::vector<double> zeros(rep.kl_per_example.size(), 0.0);
  rep.mi_split_total = rep.recon + mi_root_term(R, rep.kl_per_example, zeros) +
                       mi_root_term(R, rep.cmi_per_example, zeros);

  rep.Delta = diameter(data);
  rep.K_theta = lipschitz_estimate([&](const Matrix& z) { return model.decode(z); }, model.latent_dim(),
                                   opt.lipschitz_pairs, rng);
  // a single point or a constant decoder leaves the comparison bound undefined
  rep.pacbayes_total = rep.Delta > 0.0 && rep.K_theta > 0.0
                           ? pacbayes_bound(rep.recon, rep.kl_avg, rep.K_theta, rep.Delta)
                           : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

/// Result of comparing the MI bound without its CMI part to the PAC-Bayes
/// bound on identical recon/KL inputs.
struct BoundComparison {
  bool condition = false;  // sqrt(2) R <= Delta / sqrt(2) + sqrt(2) K
  double mi_without_cmi = 0.0;
  double pacbayes = 0.0;
  bool mi_tighter = false;
};

inline BoundComparison compare_with_pacbayes(const VaeBoundReport& rep) {
  BoundComparison c;
  c.condition = std::numbers::sqrt2 * rep.R <= rep.Delta / std::numbers::sqrt2 + std::numbers::sqrt2 * rep.K_theta;
  const std::vector<double> zeros(rep.kl_per_example.size(), 0.0);
  c.mi_without_cmi = rep.recon + mi_root_term(rep.R, rep.kl_per_example, zeros);
  c.pacbayes = rep.pacbayes_total;
  c.mi_tighter = c.mi_without_cmi <= c.pacbayes;
  return c;
}

/// Closed form for the linear VAE with mu_phi(x) = phi^T x / sqrt(d),
/// mu_theta(z) = theta^T z / sqrt(d) and encoder variance sigma^2:
///   sqrt(2) R sqrt( (sigma^2 - 1) d'/2 - d' log sigma^2
///                   + (1/(d m)) sum_i x_i^T phi phi^T x_i + sigma^2/(2 d m) |theta - theta_ref|^2 ).
inline double linear_vae_bound(const Matrix& phi, const Matrix& theta, const Matrix& theta_ref, double sigma,
                               const Matrix& data, double R) {
  if (!(sigma > 0.0)) throw std::invalid_argument("linear_vae_bound: sigma must be > 0");
  const auto d = static_cast<double>(phi.rows());
  const auto dl = static_cast<double>(phi.cols());
  const auto m = static_cast<double>(data.rows());
  require(data.cols() == phi.rows() && theta.rows() == phi.cols() && theta.cols() == phi.rows() &&
              theta_ref.rows() == theta.rows() && theta_ref.cols() == theta.cols() && data.rows() >= 1,
          "linear_vae_bound: shape mismatch");
  const double s2 = sigma * sigma;
  const double encoder_quad = (data * phi).squaredNorm() / (d * m);
  const double radicand = 0.5 * (s2 - 1.0) * dl - dl * std::log(s2) + encoder_quad +
                          s2 / (2.0 * d * m) * (theta - theta_ref).squaredNorm();
  if (radicand < 0.0) throw std::domain_error("linear_vae_bound: negative radicand");
  return std::numbers::sqrt2 * R * std::sqrt(radicand);
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

inline void write_vae(std::ostream& os, const VaeModel& model, const std::vector<std::string>& comments = {}) {
  os << "# genbound vae v1\n";
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "latent_dim " << model.latent_dim() << "\n";
  os << "section encoder\n";
  detail::write_mlp(os, model.encoder());
  detail::write_params(os, model.encoder().params());
  os << "section decoder\n";
  detail::write_mlp(os, model.decoder());
  detail::write_params(os, model.decoder().params());
  os << "section reference_decoder\n";
  detail::write_mlp(os, model.reference_decoder());
  detail::write_params(os, model.reference_decoder().params());
}

inline VaeModel read_vae(std::istream& is, std::vector<std::string>* comments = nullptr) {
  const auto enc = detail::read_mlp_block(is, comments);
  const auto dec = detail::read_mlp_block(is, comments);
  const auto ref = detail::read_mlp_block(is, comments);
  std::size_t latent = 0;
  for (const auto& [k, v] : enc.extra)
    if (k == "latent_dim" && v.size() == 1) latent = std::stoull(v[0]);
  auto has_section = [](const detail::MlpBlock& b, const char* name) {
    for (const auto& [k, v] : b.extra)
      if (k == "section" && v.size() == 1 && v[0] == name) return true;
    return false;
  };
  if (!has_section(enc, "encoder") || !has_section(dec, "decoder") || !has_section(ref, "reference_decoder"))
    throw std::runtime_error("vae file: missing section header");
  return VaeModel(detail::build_mlp(enc), detail::build_mlp(dec), detail::build_mlp(ref), latent);
}

}  // namespace genbound
