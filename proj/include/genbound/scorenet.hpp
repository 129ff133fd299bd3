#pragma once

#include "genbound/datasets.hpp"
#include "genbound/density.hpp"
#include "genbound/mlp.hpp"
#include "genbound/numerics.hpp"
#include "genbound/sde.hpp"

#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace genbound {

enum class TimeEmbedding { scalar_append, sinusoidal };

inline std::string to_string(TimeEmbedding e) {
  return e == TimeEmbedding::scalar_append ? "scalar_append" : "sinusoidal";
}

inline TimeEmbedding parse_time_embedding(std::string_view s) {
  if (s == "scalar_append") return TimeEmbedding::scalar_append;
  if (s == "sinusoidal") return TimeEmbedding::sinusoidal;
  throw std::invalid_argument("unknown time embedding: " + std::string(s));
}

struct ScoreNetConfig {
  std::size_t data_dim = 2;
  std::vector<std::size_t> hidden{128, 128, 128};
  Activation activation = Activation::silu;
  TimeEmbedding time_embed = TimeEmbedding::scalar_append;
  std::size_t time_frequencies = 4;  // sinusoidal only: sin/cos(2^j t), j < k
};

/// Time-conditioned score model s(x, t): an MLP on [x, embed(t)] -> R^d.
class ScoreNet {
 public:
  ScoreNet() = default;

  ScoreNet(const ScoreNetConfig& cfg, Rng& rng)
      : dim_(cfg.data_dim), embed_(cfg.time_embed),
        freqs_(cfg.time_embed == TimeEmbedding::sinusoidal ? cfg.time_frequencies : 0) {
    require(dim_ >= 1, "ScoreNet: data_dim must be >= 1");
    std::vector<std::size_t> dims{input_width()};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(dim_);
    mlp_ = Mlp(dims, cfg.activation);
    mlp_.init_uniform(rng);
  }

  ScoreNet(Mlp mlp, std::size_t data_dim, TimeEmbedding embed, std::size_t freqs)
      : mlp_(std::move(mlp)), dim_(data_dim), embed_(embed), freqs_(freqs) {
    require(mlp_.input_dim() == input_width() && mlp_.output_dim() == dim_, "ScoreNet: layer dims inconsistent");
  }

  std::size_t data_dim() const { return dim_; }
  TimeEmbedding time_embedding() const { return embed_; }
  std::size_t time_frequencies() const { return freqs_; }
  std::size_t input_width() const { return dim_ + (embed_ == TimeEmbedding::scalar_append ? 1 : 2 * freqs_); }

  Mlp& mlp() { return mlp_; }
  const Mlp& mlp() const { return mlp_; }

  Matrix embed(const Matrix& x, const Vector& t) const {
    require(static_cast<std::size_t>(x.cols()) == dim_ && x.rows() == t.size(), "ScoreNet: input shape mismatch");
    Matrix in(x.rows(), static_cast<Eigen::Index>(input_width()));
    in.leftCols(x.cols()) = x;
    if (embed_ == TimeEmbedding::scalar_append) {
      in.col(x.cols()) = t;
    } else {
      for (std::size_t j = 0; j < freqs_; ++j) {
        const double w = std::ldexp(1.0, static_cast<int>(j));
        const auto c = x.cols() + 2 * static_cast<Eigen::Index>(j);
        in.col(c) = (w * t.array()).sin().matrix();
        in.col(c + 1) = (w * t.array()).cos().matrix();
      }
    }
    return in;
  }

  /// Batched evaluation; row i is s(x_i, t_i).
  Matrix operator()(const Matrix& x, const Vector& t) const { return mlp_.forward(embed(x, t)); }

  Matrix forward(const Matrix& x, const Vector& t, Mlp::Tape& tape) const { return mlp_.forward(embed(x, t), tape); }

  void backward(const Mlp::Tape& tape, const Matrix& d_out, Eigen::Ref<Vector> grad) const {
    mlp_.backward(tape, d_out, grad);
  }

 private:
  Mlp mlp_;
  std::size_t dim_ = 0;
  TimeEmbedding embed_ = TimeEmbedding::scalar_append;
  std::size_t freqs_ = 0;
};

inline Vector score_eval(const ScoreNet& net, const Vector& x, double t) {
  if (!x.allFinite() || !std::isfinite(t)) throw std::invalid_argument("score_eval: non-finite input");
  require(t > 0.0, "score_eval: t must be > 0");
  Matrix xs = x.transpose();
  Vector ts = Vector::Constant(1, t);
  return net(xs, ts).row(0).transpose();
}

struct TrainConfig {
  std::size_t iterations = 10000;
  std::size_t batch_size = 128;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double eps_t = 0.0;  // minimum sampled time; <= 0 selects 1e-3 * horizon

  double min_time(double horizon) const { return eps_t > 0.0 ? eps_t : 1e-3 * horizon; }
};

// ---------------------------------------------------------------------------
// Denoising score matching
// ---------------------------------------------------------------------------

/// One Monte Carlo draw set for the DSM loss: clean points, times, noise.
struct DsmDraw {
  Matrix x0;
  Vector t;
  Matrix noise;
};

/// x0 rows are repeated num_t times, t ~ U(eps, T) i.i.d.
inline DsmDraw draw_dsm(const Matrix& x0, std::size_t num_t, double eps, double T, Rng& rng) {
  const auto n = x0.rows() * static_cast<Eigen::Index>(num_t);
  DsmDraw d;
  d.x0.resize(n, x0.cols());
  d.t.resize(n);
  for (Eigen::Index i = 0; i < x0.rows(); ++i)
    for (std::size_t k = 0; k < num_t; ++k) {
      const auto row = i * static_cast<Eigen::Index>(num_t) + static_cast<Eigen::Index>(k);
      d.x0.row(row) = x0.row(i);
      d.t[row] = rng.uniform(eps, T);
    }
  d.noise = rng.normal_matrix(static_cast<std::size_t>(n), static_cast<std::size_t>(x0.cols()));
  return d;
}

struct NoisedBatch {
  Matrix xt;
  Matrix target;   // conditional score
  Vector weight;   // lambda^2(t)
};

inline NoisedBatch noise_batch(const SdeSpec& spec, const DsmDraw& d) {
  NoisedBatch b;
  b.xt.resize(d.x0.rows(), d.x0.cols());
  b.target.resize(d.x0.rows(), d.x0.cols());
  b.weight.resize(d.x0.rows());
  for (Eigen::Index i = 0; i < d.x0.rows(); ++i) {
    const MarginalStats ms = marginal(spec, d.t[i]);
    b.xt.row(i) = ms.r * d.x0.row(i) + ms.std * d.noise.row(i);
    b.target.row(i) = -d.noise.row(i) / ms.std;
    b.weight[i] = lambda_sq(spec, d.t[i]);
  }
  return b;
}

/// Per-draw terms (T - eps)/2 * lambda^2(t) |target - s|^2; their mean is the loss.
template <class Score>
std::vector<double> dsm_terms(const Score& score, const SdeSpec& spec, const DsmDraw& d, double eps) {
  const NoisedBatch b = noise_batch(spec, d);
  const Matrix s = score(b.xt, d.t);
  const Vector sq = (b.target - s).rowwise().squaredNorm();
  std::vector<double> out(static_cast<std::size_t>(sq.size()));
  const double span = spec.horizon - eps;
  for (Eigen::Index i = 0; i < sq.size(); ++i) out[static_cast<std::size_t>(i)] = 0.5 * span * b.weight[i] * sq[i];
  return out;
}

/// Monte Carlo DSM loss with num_t time draws per batch point.
template <class Score>
Estimate dsm_loss_estimate(const Score& score, const SdeSpec& spec, const Matrix& batch, Rng& rng,
                           std::size_t num_t, double eps) {
  if (batch.rows() == 0) throw std::invalid_argument("dsm_loss: empty batch");
  require(num_t >= 1, "dsm_loss: num_t must be >= 1");
  require(eps > 0.0 && eps < spec.horizon, "dsm_loss: need 0 < eps < T");
  const DsmDraw d = draw_dsm(batch, num_t, eps, spec.horizon, rng);
  const auto terms = dsm_terms(score, spec, d, eps);
  return summarize(terms);
}

template <class Score>
double dsm_loss(const Score& score, const SdeSpec& spec, const Matrix& batch, Rng& rng, std::size_t num_t) {
  return dsm_loss_estimate(score, spec, batch, rng, num_t, 1e-3 * spec.horizon).mean;
}

/// Loss and its exact parameter gradient for a fixed draw.
inline double dsm_loss_and_grad(const ScoreNet& net, const SdeSpec& spec, const DsmDraw& d, double eps,
                                Vector& grad) {
  const NoisedBatch b = noise_batch(spec, d);
  Mlp::Tape tape;
  const Matrix s = net.forward(b.xt, d.t, tape);
  const Matrix resid = s - b.target;
  const double span = spec.horizon - eps;
  const double n = static_cast<double>(resid.rows());
  const double loss = 0.5 * span * (b.weight.array() * resid.rowwise().squaredNorm().array()).sum() / n;
  const Matrix d_out = (span / n) * (resid.array().colwise() * b.weight.array()).matrix();
  grad = Vector::Zero(static_cast<Eigen::Index>(net.mlp().num_params()));
  net.backward(tape, d_out, grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Explicit score matching against the empirical mixture
// ---------------------------------------------------------------------------

/// Exact score of p_hat_t = (1/m) sum_i N(r(t) X_i, std(t)^2 I) at each row of
/// xt, where row i has its own time t[i]. Log-sum-exp responsibilities.
inline Matrix empirical_mixture_score(const SdeSpec& spec, const Matrix& data, const Matrix& xt, const Vector& t) {
  const Vector data_sq = data.rowwise().squaredNorm();
  Matrix out(xt.rows(), xt.cols());
  constexpr Eigen::Index chunk = 1024;
  for (Eigen::Index start = 0; start < xt.rows(); start += chunk) {
    const Eigen::Index len = std::min(chunk, xt.rows() - start);
    const Matrix dots = data * xt.middleRows(start, len).transpose();  // m x len
    for (Eigen::Index k = 0; k < len; ++k) {
      const Eigen::Index row = start + k;
      const MarginalStats ms = marginal(spec, t[row]);
      const double var = ms.std * ms.std;
      const double xsq = xt.row(row).squaredNorm();
      Vector logk = -((xsq + ms.r * ms.r * data_sq.array() - 2.0 * ms.r * dots.col(k).array()).max(0.0)) / (2.0 * var);
      const double mx = logk.maxCoeff();
      Vector w = (logk.array() - mx).exp();
      w /= w.sum();
      const Vector mean = ms.r * (data.transpose() * w);
      out.row(row) = -(xt.row(row) - mean.transpose()) / var;
    }
  }
  return out;
}

/// Stratified-in-time Monte Carlo estimate of the empirical ESM loss
/// (1/2) int_eps^T lambda^2(t) E_{X_t ~ p_hat_t} |grad log p_hat_t - s|^2 dt.
template <class Score>
Estimate esm_loss_estimate(const Score& score, const SdeSpec& spec, const Matrix& data, Rng& rng,
                           std::size_t num_samples, double eps) {
  require(data.rows() >= 1, "esm_loss: empty dataset");
  require(num_samples >= 2, "esm_loss: need at least two samples");
  require(eps > 0.0 && eps < spec.horizon, "esm_loss: need 0 < eps < T");
  const auto n = static_cast<Eigen::Index>(num_samples);
  const double span = spec.horizon - eps;
  Vector t(n);
  Matrix xt(n, data.cols());
  Vector w(n);
  for (Eigen::Index j = 0; j < n; ++j) {
    t[j] = eps + span * (static_cast<double>(j) + rng.uniform()) / static_cast<double>(n);
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows())));
    const MarginalStats ms = marginal(spec, t[j]);
    for (Eigen::Index c = 0; c < data.cols(); ++c) xt(j, c) = ms.r * data(i, c) + ms.std * rng.normal();
    w[j] = lambda_sq(spec, t[j]);
  }
  const Matrix target = empirical_mixture_score(spec, data, xt, t);
  const Matrix s = score(xt, t);
  const Vector sq = (target - s).rowwise().squaredNorm();
  std::vector<double> terms(num_samples);
  for (Eigen::Index j = 0; j < n; ++j) terms[static_cast<std::size_t>(j)] = 0.5 * span * w[j] * sq[j];
  return summarize(terms);
}

template <class Score>
double esm_loss_empirical(const Score& score, const SdeSpec& spec, const Dataset& data, Rng& rng,
                          std::size_t num_samples) {
  return esm_loss_estimate(score, spec, data.points, rng, num_samples, 1e-3 * spec.horizon).mean;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Adam on minibatch DSM; returns the per-iteration loss trace.
inline std::vector<double> train_score(ScoreNet& net, const SdeSpec& spec, const Matrix& data, const TrainConfig& cfg) {
  spec.validate();
  require(cfg.iterations >= 1 && cfg.batch_size >= 1, "train_score: invalid config");
  require(data.rows() >= 1, "train_score: empty dataset");
  const double eps = cfg.min_time(spec.horizon);
  require(eps > 0.0 && eps < spec.horizon, "train_score: need 0 < eps_t < T");

  Rng rng(derive_seed(cfg.seed, 0x7472616eULL));
  AdamState adam;
  adam.lr = cfg.lr;
  std::vector<double> trace;
  trace.reserve(cfg.iterations);
  Vector grad;
  Matrix batch(static_cast<Eigen::Index>(cfg.batch_size), data.cols());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    for (Eigen::Index b = 0; b < batch.rows(); ++b)
      batch.row(b) = data.row(static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows()))));
    const DsmDraw d = draw_dsm(batch, 1, eps, spec.horizon, rng);
    const double loss = dsm_loss_and_grad(net, spec, d, eps, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) throw DivergenceError("train_score: non-finite loss", it);
    adam_step(adam, net.mlp().params(), grad);
    trace.push_back(loss);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Score norms
// ---------------------------------------------------------------------------

struct ScoreNormProfile {
  std::vector<double> per_step;
  double max = 0.0;
};

/// L_k = max over probes of |s(x, t_k)|.
template <class Score>
ScoreNormProfile max_score_norm(const Score& score, const Matrix& probes, const std::vector<double>& t_grid) {
  require(probes.rows() >= 1 && !t_grid.empty(), "max_score_norm: need probes and times");
  ScoreNormProfile p;
  for (double tk : t_grid) {
    const Vector ts = Vector::Constant(probes.rows(), tk);
    const double l = score(probes, ts).rowwise().norm().maxCoeff();
    p.per_step.push_back(l);
    p.max = std::max(p.max, l);
  }
  return p;
}

/// As max_score_norm, with fresh forward-process samples of `data` drawn at
/// each grid time (times are floored at `floor`).
template <class Score>
ScoreNormProfile forward_probe_score_norms(const Score& score, const SdeSpec& spec, const Matrix& data,
                                           const std::vector<double>& t_grid, double floor, Rng& rng) {
  require(data.rows() >= 1 && !t_grid.empty(), "forward_probe_score_norms: need data and times");
  ScoreNormProfile p;
  for (double tk : t_grid) {
    const double t = std::max(tk, floor);
    const MarginalStats ms = marginal(spec, t);
    const Matrix probes = ms.r * data + ms.std * rng.normal_matrix(static_cast<std::size_t>(data.rows()),
                                                                     static_cast<std::size_t>(data.cols()));
    const Vector ts = Vector::Constant(probes.rows(), t);
    const double l = score(probes, ts).rowwise().norm().maxCoeff();
    p.per_step.push_back(l);
    p.max = std::max(p.max, l);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Model files
// ---------------------------------------------------------------------------

namespace detail {

inline void write_mlp(std::ostream& os, const Mlp& mlp) {
  os << "layer_dims";
  for (auto d : mlp.dims()) os << ' ' << d;
  os << "\nactivation " << to_string(mlp.activation()) << "\n";
}

inline void write_params(std::ostream& os, const Vector& p) {
  os << "params " << p.size() << "\n";
  for (Eigen::Index i = 0; i < p.size(); ++i) os << format_real(p[i]) << "\n";
}

/// Reads "key v..." lines until `params`, then the parameter block.
struct MlpBlock {
  std::vector<std::size_t> dims;
  Activation act = Activation::silu;
  std::vector<std::pair<std::string, std::vector<std::string>>> extra;
  Vector params;
};

inline std::string next_content_line(std::istream& is, std::vector<std::string>* comments) {
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comments) comments->push_back(line.size() > 2 ? line.substr(2) : std::string());
      continue;
    }
    return line;
  }
  throw std::runtime_error("model file: unexpected end of file");
}

inline MlpBlock read_mlp_block(std::istream& is, std::vector<std::string>* comments) {
  MlpBlock b;
  for (;;) {
    auto toks = split_ws(next_content_line(is, comments));
    if (toks.empty()) continue;
    if (toks[0] == "layer_dims") {
      for (std::size_t i = 1; i < toks.size(); ++i) b.dims.push_back(std::stoull(toks[i]));
    } else if (toks[0] == "activation" && toks.size() == 2) {
      b.act = parse_activation(toks[1]);
    } else if (toks[0] == "params" && toks.size() == 2) {
      const std::size_t n = std::stoull(toks[1]);
      b.params.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i)
        b.params[static_cast<Eigen::Index>(i)] = parse_real(next_content_line(is, comments));
      return b;
    } else {
      b.extra.emplace_back(toks[0], std::vector<std::string>(toks.begin() + 1, toks.end()));
    }
  }
}

inline Mlp build_mlp(const MlpBlock& b) {
  Mlp mlp(b.dims, b.act);
  if (mlp.num_params() != static_cast<std::size_t>(b.params.size()))
    throw std::runtime_error("model file: parameter count does not match layer_dims");
  mlp.params() = b.params;
  return mlp;
}

}  // namespace detail

inline void write_score_net(std::ostream& os, const ScoreNet& net, const std::vector<std::string>& comments = {}) {
  os << "# genbound scorenet v1\n";
  for (const auto& c : comments) os << "# " << c << "\n";
  detail::write_mlp(os, net.mlp());
  os << "data_dim " << net.data_dim() << "\n";
  os << "time_embed " << to_string(net.time_embedding()) << "\n";
  os << "time_frequencies " << net.time_frequencies() << "\n";
  detail::write_params(os, net.mlp().params());
}

inline ScoreNet read_score_net(std::istream& is, std::vector<std::string>* comments = nullptr) {
  const auto b = detail::read_mlp_block(is, comments);
  std::size_t dim = 0, freqs = 0;
  TimeEmbedding embed = TimeEmbedding::scalar_append;
  for (const auto& [k, v] : b.extra) {
    if (v.size() != 1) throw std::runtime_error("model file: malformed line " + k);
    if (k == "data_dim") dim = std::stoull(v[0]);
    else if (k == "time_embed") embed = parse_time_embedding(v[0]);
    else if (k == "time_frequencies") freqs = std::stoull(v[0]);
    else throw std::runtime_error("model file: unknown key " + k);
  }
  return ScoreNet(detail::build_mlp(b), dim, embed, freqs);
}

}  // namespace genbound
