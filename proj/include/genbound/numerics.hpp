#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace genbound {

using Matrix = Eigen::MatrixXd;  // rows are samples throughout the library
using Vector = Eigen::VectorXd;

/// Thrown when a training or sampling run produces non-finite values.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& x) {
  std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Mixes a base seed with a stream index into an independent 64-bit seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t s = seed ^ (0x632be59bd9b4e019ULL * (stream + 1));
  splitmix64(s);
  return splitmix64(s);
}

/// xoshiro256** with splitmix64 seeding and Box-Muller normals.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    require(n > 0, "Rng::index: empty range");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<std::size_t>(r % bound);
  }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  Vector normal_vector(std::size_t dim) {
    Vector v(static_cast<Eigen::Index>(dim));
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal();
    return v;
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols) {
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    // row-major fill order so that row i only depends on draws for rows < i
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = normal();
    return m;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::uint64_t seed_;
  std::uint64_t s_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// mean + std * eps with eps ~ N(0, I).
inline Vector gaussian_sample(Rng& rng, std::size_t dim, const Vector& mean, double std) {
  require(dim >= 1, "gaussian_sample: dim must be >= 1");
  require(std > 0.0 && std::isfinite(std), "gaussian_sample: std must be positive");
  require(static_cast<std::size_t>(mean.size()) == dim, "gaussian_sample: mean size mismatch");
  return mean + std * rng.normal_vector(dim);
}

// ---------------------------------------------------------------------------
// Monte Carlo summaries
// ---------------------------------------------------------------------------

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;
};

inline Estimate summarize(std::span<const double> xs) {
  Estimate e;
  e.count = xs.size();
  if (xs.empty()) return e;
  double sum = 0.0;
  for (double x : xs) sum += x;
  e.mean = sum / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - e.mean) * (x - e.mean);
    const double var = ss / static_cast<double>(xs.size() - 1);
    e.std_error = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return e;
}

inline double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const Estimate e = summarize(xs);
  return e.std_error * std::sqrt(static_cast<double>(xs.size()));
}

/// log(sum(exp(v))) without overflow; -inf for an empty or all -inf input.
inline double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) return -std::numeric_limits<double>::infinity();
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
  std::size_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector first_moment;
  Vector second_moment;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, Eigen::Ref<Vector> params, const Eigen::Ref<const Vector>& grads) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: gradient shape mismatch");
  if (state.first_moment.size() == 0) {
    state.first_moment = Vector::Zero(params.size());
    state.second_moment = Vector::Zero(params.size());
  }
  if (state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: moment buffers do not match parameters");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
  state.second_moment = state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  params.array() -= state.lr * (state.first_moment.array() / c1) /
                    ((state.second_moment.array() / c2).sqrt() + state.eps);
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of f at params.
template <class F>
Vector finite_diff_grad(F&& f, const Vector& params, double h) {
  require(h > 0.0, "finite_diff_grad: h must be positive");
  Vector p = params;
  Vector g(params.size());
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + h;
    const double fp = f(p);
    p[i] = orig - h;
    const double fm = f(p);
    p[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor); a single scale for the whole vector.
inline double relative_error(const Vector& a, const Vector& b, double floor = 1e-12) {
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), floor});
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

}  // namespace genbound
