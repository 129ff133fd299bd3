#pragma once

#include "genbound/numerics.hpp"

#include <string>
#include <string_view>

namespace genbound {

enum class SdeKind { vp, ve };

inline std::string to_string(SdeKind k) { return k == SdeKind::vp ? "vp" : "ve"; }

inline SdeKind parse_sde_kind(std::string_view s) {
  if (s == "vp" || s == "VP") return SdeKind::vp;
  if (s == "ve" || s == "VE") return SdeKind::ve;
  throw std::invalid_argument("unknown SDE kind: " + std::string(s));
}

/// Affine forward SDE dX = alpha(t) X dt + lambda(t) dW on [0, horizon].
///
/// VP: lambda^2(t) = beta0 + (beta1 - beta0) t, alpha = -lambda^2 / 2.
/// VE: sigma^2(t) = sigma_min^2 (sigma_max^2 / sigma_min^2)^t,
///     lambda^2 = d sigma^2 / dt, alpha = 0.
struct SdeSpec {
  SdeKind kind = SdeKind::vp;
  double beta0 = 0.1;
  double beta1 = 20.0;
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double horizon = 1.0;

  void validate() const {
    require(horizon > 0.0 && std::isfinite(horizon), "SdeSpec: horizon must be > 0");
    if (kind == SdeKind::vp) {
      require(beta0 > 0.0 && beta0 <= beta1, "SdeSpec: need 0 < beta0 <= beta1");
    } else {
      require(sigma_min > 0.0 && sigma_min < sigma_max, "SdeSpec: need 0 < sigma_min < sigma_max");
    }
  }

  SdeSpec with_horizon(double T) const {
    SdeSpec s = *this;
    s.horizon = T;
    s.validate();
    return s;
  }
};

struct MarginalStats {
  double t = 0.0;
  double r = 1.0;    // mean scale
  double std = 0.0;  // marginal standard deviation r(t) v(t)
};

namespace detail {

inline void check_time(const SdeSpec& spec, double t, bool allow_zero, const char* what) {
  const double slack = 1e-12 * spec.horizon;
  const bool lower_ok = allow_zero ? t >= 0.0 : t > 0.0;
  if (!(lower_ok && t <= spec.horizon + slack && std::isfinite(t)))
    throw std::out_of_range(std::string(what) + ": t outside the SDE time range");
}

inline double log_ratio_sq(const SdeSpec& s) { return 2.0 * std::log(s.sigma_max / s.sigma_min); }

// -(u + log(1 - u)) for u = exp(-beta); >= 0 and accurate at both ends.
inline double vp_entropy_gap(double beta) {
  const double u = std::exp(-beta);
  if (u < 1e-3) {
    const double u2 = u * u;
    return u2 / 2.0 + u2 * u / 3.0 + u2 * u2 / 4.0 + u2 * u2 * u / 5.0;
  }
  const double log1mu = beta < std::numbers::ln2 ? std::log(-std::expm1(-beta)) : std::log1p(-u);
  return -(u + log1mu);
}

}  // namespace detail

/// beta_t = int_0^t lambda^2 = beta0 t + (beta1 - beta0) t^2 / 2 (VP only).
inline double integrated_beta(const SdeSpec& spec, double t) {
  return spec.beta0 * t + 0.5 * (spec.beta1 - spec.beta0) * t * t;
}

inline double ve_sigma_sq(const SdeSpec& spec, double t) {
  return spec.sigma_min * spec.sigma_min * std::exp(t * detail::log_ratio_sq(spec));
}

inline double lambda_sq(const SdeSpec& spec, double t) {
  detail::check_time(spec, t, true, "lambda_sq");
  if (spec.kind == SdeKind::vp) return spec.beta0 + (spec.beta1 - spec.beta0) * t;
  return ve_sigma_sq(spec, t) * detail::log_ratio_sq(spec);
}

/// Linear drift coefficient alpha(t).
inline double drift_coefficient(const SdeSpec& spec, double t) {
  if (spec.kind == SdeKind::ve) return 0.0;
  return -0.5 * lambda_sq(spec, t);
}

inline MarginalStats marginal(const SdeSpec& spec, double t) {
  detail::check_time(spec, t, false, "marginal");
  MarginalStats ms;
  ms.t = t;
  if (spec.kind == SdeKind::vp) {
    const double b = integrated_beta(spec, t);
    ms.r = std::exp(-0.5 * b);
    ms.std = std::sqrt(-std::expm1(-b));
  } else {
    ms.r = 1.0;
    const double s0 = spec.sigma_min * spec.sigma_min;
    ms.std = std::sqrt(s0 * std::expm1(t * detail::log_ratio_sq(spec)));
  }
  return ms;
}

/// Standard deviation of the prior pi at the spec's horizon.
inline double prior_std(const SdeSpec& spec) {
  if (spec.kind == SdeKind::vp) return 1.0;
  return marginal(spec, spec.horizon).std;
}

/// KL(E_T(x) || pi) in closed form; T need not equal spec.horizon.
inline double encoder_kl_to_prior(const SdeSpec& spec, const Eigen::Ref<const Vector>& x, double T) {
  if (!(T > 0.0)) throw std::invalid_argument("encoder_kl_to_prior: T must be > 0");
  const double sq = x.squaredNorm();
  const double d = static_cast<double>(x.size());
  if (spec.kind == SdeKind::vp) {
    const double b = integrated_beta(spec, T);
    const double scaled = sq > 0.0 ? std::exp(-b + std::log(sq)) : 0.0;
    return 0.5 * (scaled + d * detail::vp_entropy_gap(b));
  }
  const double var = spec.sigma_min * spec.sigma_min * std::expm1(T * detail::log_ratio_sq(spec));
  return 0.5 * sq / var;
}

inline Vector prior_sample(const SdeSpec& spec, Rng& rng, std::size_t d) {
  require(d >= 1, "prior_sample: d must be >= 1");
  return prior_std(spec) * rng.normal_vector(d);
}

inline Matrix prior_sample(const SdeSpec& spec, Rng& rng, std::size_t n, std::size_t d) {
  return prior_std(spec) * rng.normal_matrix(n, d);
}

/// One-shot draw from the exact marginal r(t) x0 + std(t) eps.
inline Vector forward_sample(const SdeSpec& spec, const Eigen::Ref<const Vector>& x0, double t, Rng& rng) {
  const MarginalStats ms = marginal(spec, t);
  return ms.r * x0 + ms.std * rng.normal_vector(static_cast<std::size_t>(x0.size()));
}

/// grad_x log N(x; r x0, std^2 I) = -(x - r x0) / std^2.
inline Vector conditional_score(const SdeSpec& spec, const Eigen::Ref<const Vector>& xt,
                                const Eigen::Ref<const Vector>& x0, double t) {
  const MarginalStats ms = marginal(spec, t);
  return -(xt - ms.r * x0) / (ms.std * ms.std);
}

}  // namespace genbound
