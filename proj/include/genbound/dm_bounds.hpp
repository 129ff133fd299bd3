#pragma once

#include "genbound/datasets.hpp"
#include "genbound/density.hpp"
#include "genbound/numerics.hpp"
#include "genbound/sampler.hpp"
#include "genbound/scorenet.hpp"
#include "genbound/sde.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace genbound {

// ---------------------------------------------------------------------------
// Encoder and generator terms
// ---------------------------------------------------------------------------

/// T2 = (sqrt(2) R / m) sum_i sqrt(KL(E_T(X_i) || pi)).
inline double t2_term(const SdeSpec& spec, const Matrix& data, double T, double R) {
  require(R > 0.0, "t2_term: R must be > 0");
  require(data.rows() >= 1, "t2_term: empty dataset");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) sum += std::sqrt(encoder_kl_to_prior(spec, data.row(i).transpose(), T));
  return std::numbers::sqrt2 * R * sum / static_cast<double>(data.rows());
}

/// Times (k-1) T / N, k = 1..N, at which the generator MI bound evaluates lambda^2.
inline std::vector<double> t3_time_grid(double T, std::size_t N) {
  std::vector<double> g(N);
  for (std::size_t k = 0; k < N; ++k) g[k] = static_cast<double>(k) * T / static_cast<double>(N);
  return g;
}

/// Per-step refinement sum_k (T/N) lambda^2((k-1)T/N) L_k^2 / (2m).
/// A single-element L is broadcast to every step.
inline double t3_mi_bound(const SdeSpec& spec, double T, std::size_t N, const std::vector<double>& L_per_step,
                          std::size_t m) {
  require(N >= 1 && m >= 1, "t3_mi_bound: need N >= 1 and m >= 1");
  require(L_per_step.size() == N || L_per_step.size() == 1, "t3_mi_bound: need N or 1 score norms");
  const SdeSpec s = spec.with_horizon(T);
  const double tau = T / static_cast<double>(N);
  double sum = 0.0;
  for (std::size_t k = 1; k <= N; ++k) {
    const double L = L_per_step.size() == 1 ? L_per_step[0] : L_per_step[k - 1];
    require(L >= 0.0, "t3_mi_bound: score norms must be >= 0");
    sum += tau * lambda_sq(s, static_cast<double>(k - 1) * tau) * L * L;
  }
  return sum / (2.0 * static_cast<double>(m));
}

/// The uniform-L closed form T L^2 sum_k lambda^2((k-1)T/N) / (2 m N).
inline double t3_mi_bound_uniform(const SdeSpec& spec, double T, std::size_t N, double L, std::size_t m) {
  const SdeSpec s = spec.with_horizon(T);
  double lam = 0.0;
  for (std::size_t k = 1; k <= N; ++k) lam += lambda_sq(s, static_cast<double>(k - 1) * T / static_cast<double>(N));
  return T * L * L * lam / (2.0 * static_cast<double>(m) * static_cast<double>(N));
}

inline double t3_term(double R, double mi_value) { return std::numbers::sqrt2 * R * std::sqrt(mi_value); }

// ---------------------------------------------------------------------------
// Sub-Gaussian proxy
// ---------------------------------------------------------------------------

enum class RStrategy { diameter, empirical_std };

inline std::string to_string(RStrategy s) { return s == RStrategy::diameter ? "diameter" : "empirical_std"; }

inline RStrategy parse_r_strategy(std::string_view s) {
  if (s == "diameter") return RStrategy::diameter;
  if (s == "empirical_std") return RStrategy::empirical_std;
  throw std::invalid_argument("unknown R strategy: " + std::string(s));
}

struct REstimate {
  double value = 0.0;
  RStrategy strategy = RStrategy::diameter;
  std::size_t num_probes = 0;
};

/// Bounded-support heuristic R = diameter(data U probes) / 2.
inline REstimate estimate_R_diameter(const Matrix& data, const Matrix& probes = Matrix()) {
  Matrix all(data.rows() + probes.rows(), data.cols());
  all.topRows(data.rows()) = data;
  if (probes.rows() > 0) all.bottomRows(probes.rows()) = probes;
  return {diameter(all) / 2.0, RStrategy::diameter, static_cast<std::size_t>(probes.rows())};
}

/// R = sample std of decoupled loss values.
inline REstimate estimate_R_empirical_std(std::span<const double> loss_samples) {
  require(loss_samples.size() >= 2, "estimate_R: need at least two loss samples");
  return {sample_std(loss_samples), RStrategy::empirical_std, loss_samples.size()};
}

/// Generates num_mc probe samples with the reverse chain and applies the
/// chosen strategy. For empirical_std the loss sample is |X_hat - X| with X
/// drawn independently from the data.
template <class Score>
REstimate estimate_R(const SdeSpec& spec, const Score& score, const Matrix& data, Rng& rng, std::size_t num_mc,
                     RStrategy strategy, const SamplerConfig& sampler) {
  require(num_mc >= 10, "estimate_R: num_mc must be >= 10");
  const Matrix probes = backward_sample(score, spec, sampler, rng, num_mc, static_cast<std::size_t>(data.cols())).samples;
  if (strategy == RStrategy::diameter) return estimate_R_diameter(data, probes);
  std::vector<double> losses(num_mc);
  for (std::size_t k = 0; k < num_mc; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(data.rows())));
    losses[k] = (probes.row(static_cast<Eigen::Index>(k)) - data.row(i)).norm();
  }
  return estimate_R_empirical_std(losses);
}

// ---------------------------------------------------------------------------
// Full bound runs
// ---------------------------------------------------------------------------

enum class T3Mode { per_step, uniform };

inline std::string to_string(T3Mode m) { return m == T3Mode::per_step ? "per_step" : "uniform"; }

inline T3Mode parse_t3_mode(std::string_view s) {
  if (s == "per_step") return T3Mode::per_step;
  if (s == "uniform") return T3Mode::uniform;
  throw std::invalid_argument("unknown t3 mode: " + std::string(s));
}

using DataGenerator = std::function<Dataset(std::size_t m, std::uint64_t seed)>;

struct DmBoundConfig {
  SdeSpec sde;
  ScoreNetConfig net;
  TrainConfig train;
  SamplerConfig sampler;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t t1_num_mc = 1000;
  std::size_t esm_samples = 100000;
  T3Mode t3_mode = T3Mode::per_step;
  bool combined_root = false;
  bool compute_test_kl = true;
  std::size_t generated_samples = 1000;
};

/// Everything computed for one (T, m, seed).
struct SeedTerms {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double t1 = 0.0, t1_stderr = 0.0;
  double esm = 0.0, esm_stderr = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double t3_mi = 0.0;  // pre-root MI bound
  double rhs = 0.0;
  double rhs_combined = 0.0;  // t1 + esm + sqrt(2) R sqrt(mean KL + MI)
  std::optional<double> test_kl, test_kl_stderr;
  double final_loss = 0.0;
  std::vector<double> L_per_step;
  double L_max = 0.0;
};

struct TermSummary {
  double mean = 0.0;
  double std = 0.0;
  double stderr_ = 0.0;
};

inline TermSummary summarize_term(const std::vector<double>& v) {
  TermSummary s;
  if (v.empty()) return s;
  const Estimate e = summarize(v);
  s.mean = e.mean;
  s.stderr_ = e.std_error;
  s.std = sample_std(v);
  return s;
}

struct DmBoundReport {
  double T = 0.0;
  std::size_t m = 0;
  REstimate R;
  T3Mode t3_mode = T3Mode::per_step;
  std::vector<SeedTerms> per_seed;
  std::size_t num_ok = 0;
  TermSummary t1, esm, t2, t3, rhs, rhs_combined, L_max;
  std::optional<TermSummary> test_kl;
  std::string probe_set = "forward-process samples of the training set at each grid time";
};

/// Bound terms for an already trained score net on `data`. Streams for the
/// estimators are derived from `seed`.
inline void dm_bound_terms(const DmBoundConfig& cfg, const ScoreNet& net, const Matrix& data, double T, double R,
                           std::uint64_t seed, const Matrix* test_points, SeedTerms& st) {
  const SdeSpec spec = cfg.sde.with_horizon(T);
  const auto m = static_cast<std::size_t>(data.rows());
  const double eps = cfg.train.min_time(T);

  Rng t1_rng(derive_seed(seed, 2));
  const Estimate t1 = t1_estimate(spec, data, T, cfg.t1_num_mc, t1_rng);
  st.t1 = t1.mean;
  st.t1_stderr = t1.std_error;

  Rng esm_rng(derive_seed(seed, 3));
  const Estimate esm = esm_loss_estimate(net, spec, data, esm_rng, cfg.esm_samples, eps);
  st.esm = esm.mean;
  st.esm_stderr = esm.std_error;

  st.t2 = t2_term(spec, data, T, R);

  const std::size_t N = cfg.sampler.num_steps;
  Rng l_rng(derive_seed(seed, 4));
  const auto profile = forward_probe_score_norms(net, spec, data, t3_time_grid(T, N), eps, l_rng);
  st.L_per_step = profile.per_step;
  st.L_max = profile.max;
  st.t3_mi = cfg.t3_mode == T3Mode::per_step ? t3_mi_bound(spec, T, N, profile.per_step, m)
                                             : t3_mi_bound_uniform(spec, T, N, profile.max, m);
  st.t3 = t3_term(R, st.t3_mi);
  st.rhs = st.t1 + st.esm + st.t2 + st.t3;

  double kl_mean = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) kl_mean += encoder_kl_to_prior(spec, data.row(i).transpose(), T);
  kl_mean /= static_cast<double>(m);
  st.rhs_combined = st.t1 + st.esm + t3_term(R, kl_mean + st.t3_mi);

  if (cfg.compute_test_kl && test_points != nullptr) {
    Rng gen_rng(derive_seed(seed, 5));
    const Matrix generated =
        backward_sample(net, spec, cfg.sampler, gen_rng, cfg.generated_samples, static_cast<std::size_t>(data.cols()))
            .samples;
    const Estimate kl = kde_test_kl(*test_points, generated);
    st.test_kl = kl.mean;
    st.test_kl_stderr = kl.std_error;
  }
  st.ok = std::isfinite(st.rhs);
  if (!st.ok) st.error = "non-finite bound terms";
}

/// Term assembly for one seed: draw the training set, train, estimate.
inline SeedTerms dm_bound_seed(const DmBoundConfig& cfg, const DataGenerator& gen, double T, std::size_t m,
                               std::uint64_t seed, double R, const Matrix* test_points) {
  SeedTerms st;
  st.seed = seed;
  try {
    const SdeSpec spec = cfg.sde.with_horizon(T);
    const Dataset data = gen(m, seed);
    Rng init_rng(derive_seed(seed, 1));
    ScoreNet net(cfg.net, init_rng);
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.train.seed, seed);
    const auto trace = train_score(net, spec, data.points, tc);
    st.final_loss = trace.back();
    dm_bound_terms(cfg, net, data.points, T, R, seed, test_points, st);
  } catch (const DivergenceError& e) {
    st.ok = false;
    st.error = e.what();
  }
  return st;
}

/// Aggregates per-seed terms over the seeds that succeeded.
inline DmBoundReport aggregate_report(double T, std::size_t m, const REstimate& R, T3Mode mode,
                                      std::vector<SeedTerms> per_seed) {
  DmBoundReport rep;
  rep.T = T;
  rep.m = m;
  rep.R = R;
  rep.t3_mode = mode;
  rep.per_seed = std::move(per_seed);
  std::vector<double> t1, esm, t2, t3, rhs, rhsc, lmax, kl, kl_se;
  for (const auto& s : rep.per_seed) {
    if (!s.ok) continue;
    t1.push_back(s.t1);
    esm.push_back(s.esm);
    t2.push_back(s.t2);
    t3.push_back(s.t3);
    rhs.push_back(s.rhs);
    rhsc.push_back(s.rhs_combined);
    lmax.push_back(s.L_max);
    if (s.test_kl) {
      kl.push_back(*s.test_kl);
      kl_se.push_back(*s.test_kl_stderr);
    }
  }
  rep.num_ok = rhs.size();
  rep.t1 = summarize_term(t1);
  rep.esm = summarize_term(esm);
  rep.t2 = summarize_term(t2);
  rep.t3 = summarize_term(t3);
  rep.rhs = summarize_term(rhs);
  rep.rhs_combined = summarize_term(rhsc);
  rep.L_max = summarize_term(lmax);
  if (!kl.empty()) {
    TermSummary s = summarize_term(kl);
    // larger of the between-seed error and the pooled within-seed error
    double pooled = 0.0;
    for (double e : kl_se) pooled += e * e;
    pooled = std::sqrt(pooled) / static_cast<double>(kl_se.size());
    s.stderr_ = std::max(s.stderr_, pooled);
    rep.test_kl = s;
  }
  return rep;
}

/// R used across a sweep: half the diameter of the seed-0 training set.
inline REstimate sweep_R(const DataGenerator& gen, std::size_t m, std::uint64_t seed0) {
  return estimate_R_diameter(gen(m, seed0).points);
}

/// Per seed: fresh training set of size m, train, estimate T1, ESM, T2, T3,
/// assemble rhs; optionally the test-data KL of backward samples against
/// `test_points`. Divergent seeds are excluded from the aggregate.
inline DmBoundReport dm_bound_run(const DmBoundConfig& cfg, const DataGenerator& gen, double T, std::size_t m,
                                  std::optional<REstimate> R = std::nullopt, const Matrix* test_points = nullptr) {
  require(!cfg.seeds.empty(), "dm_bound_run: need at least one seed");
  const REstimate r = R ? *R : sweep_R(gen, m, cfg.seeds.front());
  std::vector<SeedTerms> per_seed;
  for (std::uint64_t s : cfg.seeds) per_seed.push_back(dm_bound_seed(cfg, gen, T, m, s, r.value, test_points));
  return aggregate_report(T, m, r, cfg.t3_mode, std::move(per_seed));
}

// ---------------------------------------------------------------------------
// Report output
// ---------------------------------------------------------------------------

inline constexpr const char* kDmCsvHeader = "T,m,seed,t1,esm,t2,t3,rhs,test_kl,test_kl_stderr,R,L_max";

inline std::string csv_real(std::optional<double> v) { return v ? format_real(*v) : std::string("nan"); }

/// Seed rows followed by one aggregate row (seed = "mean").
inline void write_dm_csv_rows(std::ostream& os, const DmBoundReport& rep) {
  for (const auto& s : rep.per_seed) {
    os << format_real(rep.T) << ',' << rep.m << ',' << s.seed << ',';
    if (s.ok) {
      os << format_real(s.t1) << ',' << format_real(s.esm) << ',' << format_real(s.t2) << ',' << format_real(s.t3)
         << ',' << format_real(s.rhs) << ',' << csv_real(s.test_kl) << ',' << csv_real(s.test_kl_stderr) << ','
         << format_real(rep.R.value) << ',' << format_real(s.L_max) << '\n';
    } else {
      os << "nan,nan,nan,nan,nan,nan,nan," << format_real(rep.R.value) << ",nan\n";
    }
  }
  os << format_real(rep.T) << ',' << rep.m << ",mean," << format_real(rep.t1.mean) << ',' << format_real(rep.esm.mean)
     << ',' << format_real(rep.t2.mean) << ',' << format_real(rep.t3.mean) << ',' << format_real(rep.rhs.mean) << ','
     << csv_real(rep.test_kl ? std::optional<double>(rep.test_kl->mean) : std::nullopt) << ','
     << csv_real(rep.test_kl ? std::optional<double>(rep.test_kl->stderr_) : std::nullopt) << ','
     << format_real(rep.R.value) << ',' << format_real(rep.L_max.mean) << '\n';
}

inline void write_dm_text_report(std::ostream& os, const DmBoundReport& rep) {
  auto term = [&](const char* name, const TermSummary& s) {
    os << name << " mean " << format_real(s.mean) << " std " << format_real(s.std) << " stderr "
       << format_real(s.stderr_) << "\n";
  };
  os << "T " << format_real(rep.T) << "\n";
  os << "m " << rep.m << "\n";
  os << "R " << format_real(rep.R.value) << " strategy " << to_string(rep.R.strategy) << " probes "
     << rep.R.num_probes << "\n";
  os << "t3_mode " << to_string(rep.t3_mode) << "\n";
  os << "score_norm_probes " << rep.probe_set << "\n";
  os << "seeds_ok " << rep.num_ok << " of " << rep.per_seed.size() << "\n";
  term("t1", rep.t1);
  term("esm", rep.esm);
  term("t2", rep.t2);
  term("t3", rep.t3);
  term("rhs", rep.rhs);
  term("rhs_combined_root", rep.rhs_combined);
  term("L_max", rep.L_max);
  if (rep.test_kl) term("test_kl", *rep.test_kl);
  for (const auto& s : rep.per_seed) {
    os << "seed " << s.seed << (s.ok ? " ok" : " failed");
    if (!s.ok) {
      os << " error \"" << s.error << "\"\n";
      continue;
    }
    os << " t1 " << format_real(s.t1) << " t1_stderr " << format_real(s.t1_stderr) << " esm " << format_real(s.esm)
       << " esm_stderr " << format_real(s.esm_stderr) << " t2 " << format_real(s.t2) << " t3 " << format_real(s.t3)
       << " t3_mi " << format_real(s.t3_mi) << " rhs " << format_real(s.rhs) << " final_loss "
       << format_real(s.final_loss) << " L_max " << format_real(s.L_max);
    if (s.test_kl) os << " test_kl " << format_real(*s.test_kl) << " test_kl_stderr " << format_real(*s.test_kl_stderr);
    os << "\n";
  }
}

}  // namespace genbound
