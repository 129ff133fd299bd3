#pragma once

#include "genbound/numerics.hpp"
#include "genbound/sde.hpp"

#include <optional>

namespace genbound {

/// Equal-weight mixture of isotropic Gaussians N(center_i, bandwidth^2 I).
/// Used both as a KDE and as the exact aggregated posterior of the forward
/// process (centers r(t) X_i, bandwidth std(t)).
struct KdeModel {
  Matrix centers;
  double bandwidth = 1.0;

  std::size_t size() const { return static_cast<std::size_t>(centers.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(centers.cols()); }
};

/// Scott's rule with the geometric mean of per-dimension sample std.
inline double scott_bandwidth(const Matrix& points) {
  const auto n = static_cast<double>(points.rows());
  const auto d = static_cast<double>(points.cols());
  double log_sd = 0.0;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    const double mean = points.col(j).mean();
    const double var = n > 1 ? (points.col(j).array() - mean).square().sum() / (n - 1.0) : 0.0;
    log_sd += 0.5 * std::log(var > 0.0 ? var : 1.0);
  }
  return std::pow(n, -1.0 / (d + 4.0)) * std::exp(log_sd / d);
}

/// bandwidth = nullopt selects Scott's rule.
inline KdeModel kde_fit(const Matrix& points, std::optional<double> bandwidth = std::nullopt) {
  if (points.rows() < 1) throw std::invalid_argument("kde_fit: need at least one point");
  KdeModel k;
  k.centers = points;
  k.bandwidth = bandwidth ? *bandwidth : scott_bandwidth(points);
  require(k.bandwidth > 0.0 && std::isfinite(k.bandwidth), "kde_fit: bandwidth must be > 0");
  return k;
}

namespace detail {

inline double gaussian_log_norm(double h, std::size_t d) {
  return -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * h * h);
}

/// Per-component unnormalized log-kernels -|x - c_i|^2 / (2 h^2).
inline Vector log_kernels(const KdeModel& model, const Eigen::Ref<const Vector>& x) {
  return -(model.centers.rowwise() - x.transpose()).rowwise().squaredNorm() / (2.0 * model.bandwidth * model.bandwidth);
}

}  // namespace detail

inline double kde_logpdf(const KdeModel& model, const Eigen::Ref<const Vector>& x) {
  const Vector lk = detail::log_kernels(model, x);
  return log_sum_exp(lk) - std::log(static_cast<double>(model.size())) +
         detail::gaussian_log_norm(model.bandwidth, model.dim());
}

inline Vector kde_logpdf_batch(const KdeModel& model, const Matrix& queries) {
  Vector out(queries.rows());
  for (Eigen::Index i = 0; i < queries.rows(); ++i) out[i] = kde_logpdf(model, queries.row(i).transpose());
  return out;
}

/// grad_x log of the mixture: -(x - sum_i w_i c_i) / h^2 with softmax weights.
inline Vector kde_score(const KdeModel& model, const Eigen::Ref<const Vector>& x) {
  Vector lk = detail::log_kernels(model, x);
  const double mx = lk.maxCoeff();
  Vector w = (lk.array() - mx).exp();
  w /= w.sum();
  const Vector mean = model.centers.transpose() * w;
  return -(x - mean) / (model.bandwidth * model.bandwidth);
}

/// KL(N(m1, diag v1) || N(m2, diag v2)).
inline double gaussian_kl(const Vector& mean1, const Vector& var1, const Vector& mean2, const Vector& var2) {
  require(mean1.size() == var1.size() && mean2.size() == var2.size() && mean1.size() == mean2.size(),
          "gaussian_kl: dimension mismatch");
  if (!((var1.array() > 0.0).all() && (var2.array() > 0.0).all()))
    throw std::invalid_argument("gaussian_kl: variances must be > 0");
  double kl = 0.0;
  for (Eigen::Index j = 0; j < mean1.size(); ++j) {
    const double diff = mean2[j] - mean1[j];
    // rho - 1 - log rho with rho = var1 / var2, written in delta = rho - 1
    const double delta = (var1[j] - var2[j]) / var2[j];
    double gap;
    if (std::abs(delta) < 1e-3) {
      gap = 0.0;
      for (int k = 8; k >= 2; --k) gap = delta * ((k % 2 == 0 ? 1.0 : -1.0) / k + gap);
      gap *= delta;
    } else {
      gap = delta - std::log1p(delta);
    }
    kl += diff * diff / var2[j] + gap;
  }
  return 0.5 * kl;
}

/// Mean of log p(x) - log q(x) over samples from p; not clipped at zero.
template <class LogP, class LogQ>
Estimate mc_kl_estimate(const Matrix& p_samples, LogP&& logp, LogQ&& logq) {
  if (p_samples.rows() < 2) throw std::invalid_argument("mc_kl_estimate: need at least two samples");
  std::vector<double> diffs(static_cast<std::size_t>(p_samples.rows()));
  for (Eigen::Index i = 0; i < p_samples.rows(); ++i) {
    const Vector x = p_samples.row(i).transpose();
    diffs[static_cast<std::size_t>(i)] = logp(x) - logq(x);
  }
  return summarize(diffs);
}

/// Test-data KL protocol: KDE on test points for p, KDE on generated points
/// for q, both evaluated at the test points.
inline Estimate kde_test_kl(const Matrix& test_points, const Matrix& generated,
                            std::optional<double> p_bandwidth = std::nullopt,
                            std::optional<double> q_bandwidth = std::nullopt) {
  const KdeModel p = kde_fit(test_points, p_bandwidth);
  const KdeModel q = kde_fit(generated, q_bandwidth);
  return mc_kl_estimate(
      test_points, [&](const Vector& x) { return kde_logpdf(p, x); },
      [&](const Vector& x) { return kde_logpdf(q, x); });
}

/// Aggregated posterior E_T # P_hat as an exact mixture.
inline KdeModel aggregated_posterior(const SdeSpec& spec, const Matrix& data, double T) {
  const MarginalStats ms = marginal(spec.with_horizon(T), T);
  KdeModel k;
  k.centers = ms.r * data;
  k.bandwidth = ms.std;
  return k;
}

/// T1 = -(1/m) sum_i KL(E_T(X_i) || E_T # P_hat), each KL estimated with
/// num_mc draws from E_T(X_i). Result is <= 0 up to Monte Carlo noise.
inline Estimate t1_estimate(const SdeSpec& spec, const Matrix& data, double T, std::size_t num_mc, Rng& rng) {
  require(data.rows() >= 1, "t1_estimate: empty dataset");
  require(num_mc >= 1, "t1_estimate: num_mc must be >= 1");
  const KdeModel mix = aggregated_posterior(spec, data, T);
  const auto m = mix.centers.rows();
  const auto d = mix.centers.cols();
  const double inv2s2 = 1.0 / (2.0 * mix.bandwidth * mix.bandwidth);
  const Vector center_sq = mix.centers.rowwise().squaredNorm();

  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(m) * num_mc);
  for (Eigen::Index i = 0; i < m; ++i) {
    Matrix z = mix.bandwidth * rng.normal_matrix(num_mc, static_cast<std::size_t>(d));
    z.rowwise() += mix.centers.row(i);
    // squared distances to every component via |z|^2 + |c|^2 - 2 c.z, one column per draw
    Matrix logk = -2.0 * (mix.centers * z.transpose());
    logk.colwise() += center_sq;
    logk.rowwise() += z.rowwise().squaredNorm().transpose();
    logk = -(logk.array().max(0.0) * inv2s2).matrix();
    for (Eigen::Index k = 0; k < logk.cols(); ++k) {
      const auto col = logk.col(k);
      const double own = col(i);
      const double mx = col.maxCoeff();
      const double mean_exp = (col.array() - mx).exp().sum() / static_cast<double>(m);
      // log p(z | X_i) - log p_hat(z)
      terms.push_back(own - mx - std::log(mean_exp));
    }
  }
  Estimate e = summarize(terms);
  e.mean = -e.mean;
  return e;
}

}  // namespace genbound
