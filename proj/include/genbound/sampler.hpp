#pragma once

#include "genbound/numerics.hpp"
#include "genbound/sde.hpp"

#include <vector>

namespace genbound {

struct SamplerConfig {
  std::size_t num_steps = 1000;
  std::uint64_t seed = 0;
  bool record_trajectory = false;
};

/// Coefficients of one reverse Euler-Maruyama step taken from time t to t - tau:
///   x <- contraction * x + drift_scale * s(x, t) + noise_std * eps.
struct StepCoefficients {
  double t = 0.0;
  double contraction = 1.0;  // 1 - tau * alpha(t)
  double drift_scale = 0.0;  // tau * lambda^2(t)
  double noise_std = 0.0;    // sqrt(tau) * lambda(t)
};

/// Step k (1-based) runs from t_{k-1} = T - (k-1) tau to t_k = T - k tau; the
/// score is never evaluated at t = 0, the last evaluation is at t = tau.
inline std::vector<StepCoefficients> reverse_schedule(const SdeSpec& spec, std::size_t num_steps) {
  require(num_steps >= 1, "reverse_schedule: need at least one step");
  spec.validate();
  const double T = spec.horizon;
  const double tau = T / static_cast<double>(num_steps);
  std::vector<StepCoefficients> out(num_steps);
  for (std::size_t k = 1; k <= num_steps; ++k) {
    StepCoefficients& c = out[k - 1];
    c.t = T - tau * static_cast<double>(k - 1);
    const double l2 = lambda_sq(spec, c.t);
    c.contraction = 1.0 - tau * drift_coefficient(spec, c.t);
    c.drift_scale = tau * l2;
    c.noise_std = std::sqrt(tau * l2);
  }
  return out;
}

struct SampleResult {
  Matrix samples;
  std::vector<Matrix> trajectory;  // state before each step, then the final state
};

/// Runs the reverse chain from the given starting states. Row i uses its own
/// noise stream derived from (base_seed, i).
template <class Score>
SampleResult run_reverse_chain(const Score& score, const std::vector<StepCoefficients>& schedule, Matrix x,
                               std::uint64_t base_seed, bool record) {
  std::vector<Rng> streams;
  streams.reserve(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    streams.emplace_back(derive_seed(base_seed, static_cast<std::uint64_t>(i)));

  SampleResult res;
  Matrix noise(x.rows(), x.cols());
  Vector ts(x.rows());
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    const StepCoefficients& c = schedule[k];
    if (record) res.trajectory.push_back(x);
    ts.setConstant(c.t);
    const Matrix s = score(x, ts);
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = 0; j < x.cols(); ++j) noise(i, j) = streams[static_cast<std::size_t>(i)].normal();
    x = c.contraction * x + c.drift_scale * s + c.noise_std * noise;
    if (!x.allFinite()) throw DivergenceError("backward_sample: non-finite state", k + 1);
  }
  if (record) res.trajectory.push_back(x);
  res.samples = std::move(x);
  return res;
}

/// Draws n chains from the prior and runs num_steps reverse steps over [0, T].
template <class Score>
SampleResult backward_sample(const Score& score, const SdeSpec& spec, const SamplerConfig& cfg, Rng& rng,
                             std::size_t n_samples, std::size_t dim) {
  require(n_samples >= 1 && dim >= 1, "backward_sample: need at least one sample");
  const auto schedule = reverse_schedule(spec, cfg.num_steps);
  const std::uint64_t base = rng.next_u64();
  Matrix start(static_cast<Eigen::Index>(n_samples), static_cast<Eigen::Index>(dim));
  const double sd = prior_std(spec);
  for (Eigen::Index i = 0; i < start.rows(); ++i) {
    Rng prior_rng(derive_seed(base ^ 0x5eedULL, static_cast<std::uint64_t>(i)));
    for (Eigen::Index j = 0; j < start.cols(); ++j) start(i, j) = sd * prior_rng.normal();
  }
  return run_reverse_chain(score, schedule, std::move(start), base, cfg.record_trajectory);
}

/// Encode x0 to X_T with the exact forward marginal, then decode with the
/// reverse chain.
template <class Score>
Vector reconstruct(const Score& score, const SdeSpec& spec, const SamplerConfig& cfg, const Vector& x0, Rng& rng) {
  const Vector latent = forward_sample(spec, x0, spec.horizon, rng);
  const auto schedule = reverse_schedule(spec, cfg.num_steps);
  Matrix start = latent.transpose();
  return run_reverse_chain(score, schedule, std::move(start), rng.next_u64(), false).samples.row(0).transpose();
}

/// Batched reconstruction of every row of x0.
template <class Score>
Matrix reconstruct(const Score& score, const SdeSpec& spec, const SamplerConfig& cfg, const Matrix& x0, Rng& rng) {
  const MarginalStats ms = marginal(spec, spec.horizon);
  Matrix start = ms.r * x0 + ms.std * rng.normal_matrix(static_cast<std::size_t>(x0.rows()),
                                                         static_cast<std::size_t>(x0.cols()));
  const auto schedule = reverse_schedule(spec, cfg.num_steps);
  return run_reverse_chain(score, schedule, std::move(start), rng.next_u64(), false).samples;
}

}  // namespace genbound
