#pragma once

#include "genbound/numerics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace genbound {

enum class Generator { swiss_roll, gaussian_mixture, gaussian, generated };

inline std::string to_string(Generator g) {
  switch (g) {
    case Generator::swiss_roll: return "swiss_roll";
    case Generator::gaussian_mixture: return "gaussian_mixture";
    case Generator::gaussian: return "gaussian";
    case Generator::generated: return "generated";
  }
  return "unknown";
}

inline Generator parse_generator(std::string_view s) {
  if (s == "swiss_roll" || s == "swiss-roll") return Generator::swiss_roll;
  if (s == "gaussian_mixture" || s == "gaussian-mixture") return Generator::gaussian_mixture;
  if (s == "gaussian") return Generator::gaussian;
  if (s == "generated") return Generator::generated;
  throw std::invalid_argument("unknown dataset generator: " + std::string(s));
}

/// An m x d point set together with what produced it.
struct Dataset {
  Matrix points;
  Generator generator = Generator::generated;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, double>> params;

  std::size_t size() const { return static_cast<std::size_t>(points.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(points.cols()); }
  Vector point(std::size_t i) const { return points.row(static_cast<Eigen::Index>(i)).transpose(); }

  bool operator==(const Dataset& o) const {
    return generator == o.generator && seed == o.seed && params == o.params &&
           points.rows() == o.points.rows() && points.cols() == o.points.cols() && points == o.points;
  }
};

namespace swiss_roll_defaults {
inline constexpr double noise_std = 0.05;
// maximal radius 4.5*pi*scale == 2
inline constexpr double scale = 2.0 / (4.5 * std::numbers::pi);
}  // namespace swiss_roll_defaults

/// Spiral with angle 1.5*pi*(1 + 2u), u ~ U(0, 1), plus isotropic noise.
inline Dataset make_swiss_roll(std::size_t m, double noise_std, double scale, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("make_swiss_roll: m must be >= 1");
  require(noise_std >= 0.0, "make_swiss_roll: noise_std must be >= 0");
  require(scale > 0.0, "make_swiss_roll: scale must be > 0");
  Rng rng(seed);
  Dataset ds;
  ds.generator = Generator::swiss_roll;
  ds.seed = seed;
  ds.params = {{"noise_std", noise_std}, {"scale", scale}};
  ds.points.resize(static_cast<Eigen::Index>(m), 2);
  for (Eigen::Index i = 0; i < ds.points.rows(); ++i) {
    const double u = rng.uniform();
    const double angle = 1.5 * std::numbers::pi * (1.0 + 2.0 * u);
    const double n0 = rng.normal();
    const double n1 = rng.normal();
    ds.points(i, 0) = scale * angle * std::cos(angle) + noise_std * n0;
    ds.points(i, 1) = scale * angle * std::sin(angle) + noise_std * n1;
  }
  return ds;
}

inline Dataset make_swiss_roll(std::size_t m, std::uint64_t seed) {
  return make_swiss_roll(m, swiss_roll_defaults::noise_std, swiss_roll_defaults::scale, seed);
}

/// i.i.d. draws from N(mean, diag(cov_diag)).
inline Dataset make_gaussian(std::size_t m, const Vector& mean, const Vector& cov_diag, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("make_gaussian: m must be >= 1");
  require(mean.size() >= 1 && mean.size() == cov_diag.size(), "make_gaussian: mean/cov size mismatch");
  for (Eigen::Index j = 0; j < cov_diag.size(); ++j)
    if (!(cov_diag[j] > 0.0)) throw std::invalid_argument("make_gaussian: variances must be > 0");
  Rng rng(seed);
  Dataset ds;
  ds.generator = Generator::gaussian;
  ds.seed = seed;
  for (Eigen::Index j = 0; j < mean.size(); ++j) {
    ds.params.emplace_back("mean" + std::to_string(j), mean[j]);
    ds.params.emplace_back("var" + std::to_string(j), cov_diag[j]);
  }
  const Vector sd = cov_diag.cwiseSqrt();
  ds.points.resize(static_cast<Eigen::Index>(m), mean.size());
  for (Eigen::Index i = 0; i < ds.points.rows(); ++i)
    for (Eigen::Index j = 0; j < mean.size(); ++j) ds.points(i, j) = mean[j] + sd[j] * rng.normal();
  return ds;
}

/// Equal-weight mixture of isotropic Gaussians centred at the rows of `centers`.
inline Dataset make_gaussian_mixture(std::size_t m, const Matrix& centers, double component_std,
                                     std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("make_gaussian_mixture: m must be >= 1");
  require(centers.rows() >= 1 && centers.cols() >= 1, "make_gaussian_mixture: need at least one center");
  require(component_std > 0.0, "make_gaussian_mixture: component_std must be > 0");
  Rng rng(seed);
  Dataset ds;
  ds.generator = Generator::gaussian_mixture;
  ds.seed = seed;
  ds.params.emplace_back("component_std", component_std);
  for (Eigen::Index k = 0; k < centers.rows(); ++k)
    for (Eigen::Index j = 0; j < centers.cols(); ++j)
      ds.params.emplace_back("center" + std::to_string(k) + "_" + std::to_string(j), centers(k, j));
  ds.points.resize(static_cast<Eigen::Index>(m), centers.cols());
  for (Eigen::Index i = 0; i < ds.points.rows(); ++i) {
    const auto k = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(centers.rows())));
    for (Eigen::Index j = 0; j < centers.cols(); ++j)
      ds.points(i, j) = centers(k, j) + component_std * rng.normal();
  }
  return ds;
}

/// Four clusters on the axes at distance 2 with std 0.3.
inline Matrix default_mixture_centers() {
  Matrix c(4, 2);
  c << 2.0, 0.0, -2.0, 0.0, 0.0, 2.0, 0.0, -2.0;
  return c;
}

/// Maximum pairwise Euclidean distance (exact O(m^2) scan).
inline double diameter(const Matrix& points) {
  double best = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i)
    for (Eigen::Index j = i + 1; j < points.rows(); ++j)
      best = std::max(best, (points.row(i) - points.row(j)).squaredNorm());
  return std::sqrt(best);
}

inline double diameter(const Dataset& data) { return diameter(data.points); }

// ---------------------------------------------------------------------------
// Point files
// ---------------------------------------------------------------------------

inline std::string format_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_real(std::string_view s) {
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end == tmp.c_str() || *end != '\0') throw std::runtime_error("malformed number: " + tmp);
  return v;
}

/// Header comments ("# ...") plus key lines, then one row per point.
inline void write_points(std::ostream& os, const Dataset& ds, const std::vector<std::string>& comments = {}) {
  os << "# genbound points v1\n";
  for (const auto& c : comments) os << "# " << c << "\n";
  os << "generator " << to_string(ds.generator) << "\n";
  os << "m " << ds.size() << "\n";
  os << "d " << ds.dim() << "\n";
  os << "seed " << ds.seed << "\n";
  for (const auto& [k, v] : ds.params) os << "param " << k << " " << format_real(v) << "\n";
  os << "points\n";
  for (Eigen::Index i = 0; i < ds.points.rows(); ++i) {
    for (Eigen::Index j = 0; j < ds.points.cols(); ++j) {
      if (j) os << ' ';
      os << format_real(ds.points(i, j));
    }
    os << '\n';
  }
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline Dataset read_points(std::istream& is, std::vector<std::string>* comments = nullptr) {
  Dataset ds;
  std::string line;
  std::size_t m = 0, d = 0;
  bool have_m = false, have_d = false, in_points = false;
  std::vector<double> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (comments) comments->push_back(line.size() > 2 ? line.substr(2) : std::string());
      continue;
    }
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    if (in_points) {
      if (toks.size() != d) throw std::runtime_error("point row has wrong width: " + line);
      for (const auto& t : toks) values.push_back(parse_real(t));
      continue;
    }
    const std::string& key = toks[0];
    if (key == "points") {
      if (!have_m || !have_d) throw std::runtime_error("point file: missing m or d before data");
      in_points = true;
    } else if (key == "generator" && toks.size() == 2) {
      ds.generator = parse_generator(toks[1]);
    } else if (key == "m" && toks.size() == 2) {
      m = std::stoull(toks[1]);
      have_m = true;
    } else if (key == "d" && toks.size() == 2) {
      d = std::stoull(toks[1]);
      have_d = true;
    } else if (key == "seed" && toks.size() == 2) {
      ds.seed = std::stoull(toks[1]);
    } else if (key == "param" && toks.size() == 3) {
      ds.params.emplace_back(toks[1], parse_real(toks[2]));
    } else {
      throw std::runtime_error("point file: unexpected line: " + line);
    }
  }
  if (!in_points) throw std::runtime_error("point file: no points section");
  if (values.size() != m * d) throw std::runtime_error("point file: expected m rows");
  ds.points.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j)
      ds.points(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * d + j];
  return ds;
}

inline void save_points(const std::string& path, const Dataset& ds, const std::vector<std::string>& comments = {}) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_points(os, ds, comments);
}

inline Dataset load_points(const std::string& path, std::vector<std::string>* comments = nullptr) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path);
  return read_points(is, comments);
}

}  // namespace genbound
