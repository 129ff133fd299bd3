#pragma once

#include "genbound/datasets.hpp"
#include "genbound/density.hpp"
#include "genbound/dm_bounds.hpp"
#include "genbound/sampler.hpp"
#include "genbound/scorenet.hpp"
#include "genbound/sde.hpp"
#include "genbound/vae.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace genbound::cli {

using json = nlohmann::json;

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kPartial = 3 };

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

struct DatasetConfig {
  Generator generator = Generator::swiss_roll;
  std::size_t m = 200;
  double noise_std = swiss_roll_defaults::noise_std;
  double scale = swiss_roll_defaults::scale;
  double mixture_std = 0.3;
  std::size_t test_size = 1000;
  std::uint64_t test_seed = 1000003;
};

struct BoundsConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t t1_num_mc = 1000;
  std::size_t esm_samples = 100000;
  T3Mode t3_mode = T3Mode::per_step;
  bool combined_root = false;
  bool compute_test_kl = true;
  std::size_t generated_samples = 1000;
  RStrategy r_strategy = RStrategy::diameter;
  std::size_t r_probes = 0;  // 0: R from the training set alone
};

struct VaeRunConfig {
  std::size_t latent_dim = 1;
  std::vector<std::size_t> hidden{64, 64};
  Activation activation = Activation::silu;
  std::size_t iterations = 3000;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  double beta = 1.0;
  std::size_t num_mc = 100;
  std::size_t lipschitz_pairs = 10000;
  CmiNormalization cmi_normalization = CmiNormalization::per_m;
  double R = 0.0;  // <= 0: half the training-set diameter
  std::size_t gen_error_samples = 10000;
};

struct SweepConfig {
  std::string axis = "T";
  std::vector<double> values{0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
  std::size_t workers = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  DatasetConfig dataset;
  SdeSpec sde;
  ScoreNetConfig scorenet;
  TrainConfig train;
  SamplerConfig sampler;
  BoundsConfig bounds;
  VaeRunConfig vae;
  SweepConfig sweep;
};

namespace detail {

/// Reads the fields of one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, path_ + "." + key);
  }

  template <class T, class Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (j_.contains(key)) {
      try {
        out = parse(s);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(path_ + "." + key + ": " + e.what());
      }
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key " + path_ + "." + k);
  }

 private:
  template <class T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(where + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i)
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      return out;
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["dataset"] = {{"generator", to_string(c.dataset.generator)}, {"m", c.dataset.m},
                  {"noise_std", c.dataset.noise_std},           {"scale", c.dataset.scale},
                  {"mixture_std", c.dataset.mixture_std},       {"test_size", c.dataset.test_size},
                  {"test_seed", c.dataset.test_seed}};
  j["sde"] = {{"kind", to_string(c.sde.kind)},     {"beta0", c.sde.beta0},         {"beta1", c.sde.beta1},
              {"sigma_min", c.sde.sigma_min}, {"sigma_max", c.sde.sigma_max}, {"T", c.sde.horizon}};
  j["scorenet"] = {{"hidden", c.scorenet.hidden},
                   {"activation", to_string(c.scorenet.activation)},
                   {"time_embedding", to_string(c.scorenet.time_embed)},
                   {"time_frequencies", c.scorenet.time_frequencies}};
  j["train"] = {{"iterations", c.train.iterations},
                {"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"min_time", c.train.eps_t}};
  j["sampler"] = {{"num_steps", c.sampler.num_steps}};
  j["bounds"] = {{"seeds", c.bounds.seeds},
                 {"t1_num_mc", c.bounds.t1_num_mc},
                 {"esm_samples", c.bounds.esm_samples},
                 {"t3_mode", to_string(c.bounds.t3_mode)},
                 {"combined_root", c.bounds.combined_root},
                 {"compute_test_kl", c.bounds.compute_test_kl},
                 {"generated_samples", c.bounds.generated_samples},
                 {"r_strategy", to_string(c.bounds.r_strategy)},
                 {"r_probes", c.bounds.r_probes}};
  j["vae"] = {{"latent_dim", c.vae.latent_dim},
              {"hidden", c.vae.hidden},
              {"activation", to_string(c.vae.activation)},
              {"iterations", c.vae.iterations},
              {"batch_size", c.vae.batch_size},
              {"lr", c.vae.lr},
              {"beta", c.vae.beta},
              {"num_mc", c.vae.num_mc},
              {"lipschitz_pairs", c.vae.lipschitz_pairs},
              {"cmi_normalization", to_string(c.vae.cmi_normalization)},
              {"R", c.vae.R},
              {"gen_error_samples", c.vae.gen_error_samples}};
  j["sweep"] = {{"axis", c.sweep.axis}, {"values", c.sweep.values}, {"workers", c.sweep.workers}};
  return j;
}

/// Canonical one-line echo; keys are sorted, so equal configs print equal.
inline std::string canonical_config(const RunConfig& c) { return config_to_json(c).dump(); }

inline void validate_config(const RunConfig& c) {
  auto check = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  check(c.dataset.m >= 1, "dataset.m must be >= 1");
  check(c.dataset.noise_std >= 0.0 && c.dataset.scale > 0.0 && c.dataset.mixture_std > 0.0,
        "dataset: noise_std >= 0, scale > 0, mixture_std > 0 required");
  check(c.dataset.test_size >= 2, "dataset.test_size must be >= 2");
  try {
    c.sde.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("sde: ") + e.what());
  }
  check(!c.scorenet.hidden.empty(), "scorenet.hidden must not be empty");
  check(c.train.iterations >= 1 && c.train.batch_size >= 1 && c.train.lr > 0.0, "train: invalid values");
  check(c.sampler.num_steps >= 1, "sampler.num_steps must be >= 1");
  check(!c.bounds.seeds.empty(), "bounds.seeds must not be empty");
  check(c.bounds.t1_num_mc >= 1 && c.bounds.esm_samples >= 2 && c.bounds.generated_samples >= 2,
        "bounds: sample counts too small");
  check(c.bounds.r_probes == 0 || c.bounds.r_probes >= 10, "bounds.r_probes must be 0 or >= 10");
  check(c.bounds.r_strategy == RStrategy::diameter || c.bounds.r_probes >= 10,
        "bounds.r_strategy empirical_std needs r_probes >= 10");
  check(c.vae.latent_dim >= 1 && c.vae.iterations >= 1 && c.vae.batch_size >= 1 && c.vae.lr > 0.0 &&
            c.vae.beta >= 0.0 && c.vae.num_mc >= 1 && c.vae.lipschitz_pairs >= 1 && c.vae.gen_error_samples >= 2,
        "vae: invalid values");
  check(c.sweep.axis == "T" || c.sweep.axis == "m", "sweep.axis must be \"T\" or \"m\"");
  check(!c.sweep.values.empty(), "sweep.values must not be empty");
  check(c.sweep.workers >= 1, "sweep.workers must be >= 1");
  for (double v : c.sweep.values) {
    check(v > 0.0, "sweep.values must be > 0");
    if (c.sweep.axis == "m") check(v == std::floor(v), "sweep.values must be integers for axis m");
  }
}

inline RunConfig config_from_json(const json& j) {
  RunConfig c;
  detail::ObjectReader top(j, "config");
  top.get("seed", c.seed);
  if (const json* s = top.child("dataset")) {
    detail::ObjectReader r(*s, "dataset");
    r.get_enum("generator", c.dataset.generator, parse_generator);
    r.get("m", c.dataset.m);
    r.get("noise_std", c.dataset.noise_std);
    r.get("scale", c.dataset.scale);
    r.get("mixture_std", c.dataset.mixture_std);
    r.get("test_size", c.dataset.test_size);
    r.get("test_seed", c.dataset.test_seed);
    r.finish();
  }
  if (const json* s = top.child("sde")) {
    detail::ObjectReader r(*s, "sde");
    r.get_enum("kind", c.sde.kind, parse_sde_kind);
    r.get("beta0", c.sde.beta0);
    r.get("beta1", c.sde.beta1);
    r.get("sigma_min", c.sde.sigma_min);
    r.get("sigma_max", c.sde.sigma_max);
    r.get("T", c.sde.horizon);
    r.finish();
  }
  if (const json* s = top.child("scorenet")) {
    detail::ObjectReader r(*s, "scorenet");
    r.get("hidden", c.scorenet.hidden);
    r.get_enum("activation", c.scorenet.activation, parse_activation);
    r.get_enum("time_embedding", c.scorenet.time_embed, parse_time_embedding);
    r.get("time_frequencies", c.scorenet.time_frequencies);
    r.finish();
  }
  if (const json* s = top.child("train")) {
    detail::ObjectReader r(*s, "train");
    r.get("iterations", c.train.iterations);
    r.get("batch_size", c.train.batch_size);
    r.get("lr", c.train.lr);
    r.get("min_time", c.train.eps_t);
    r.finish();
  }
  if (const json* s = top.child("sampler")) {
    detail::ObjectReader r(*s, "sampler");
    r.get("num_steps", c.sampler.num_steps);
    r.finish();
  }
  if (const json* s = top.child("bounds")) {
    detail::ObjectReader r(*s, "bounds");
    r.get("seeds", c.bounds.seeds);
    r.get("t1_num_mc", c.bounds.t1_num_mc);
    r.get("esm_samples", c.bounds.esm_samples);
    r.get_enum("t3_mode", c.bounds.t3_mode, parse_t3_mode);
    r.get("combined_root", c.bounds.combined_root);
    r.get("compute_test_kl", c.bounds.compute_test_kl);
    r.get("generated_samples", c.bounds.generated_samples);
    r.get_enum("r_strategy", c.bounds.r_strategy, parse_r_strategy);
    r.get("r_probes", c.bounds.r_probes);
    r.finish();
  }
  if (const json* s = top.child("vae")) {
    detail::ObjectReader r(*s, "vae");
    r.get("latent_dim", c.vae.latent_dim);
    r.get("hidden", c.vae.hidden);
    r.get_enum("activation", c.vae.activation, parse_activation);
    r.get("iterations", c.vae.iterations);
    r.get("batch_size", c.vae.batch_size);
    r.get("lr", c.vae.lr);
    r.get("beta", c.vae.beta);
    r.get("num_mc", c.vae.num_mc);
    r.get("lipschitz_pairs", c.vae.lipschitz_pairs);
    r.get_enum("cmi_normalization", c.vae.cmi_normalization, parse_cmi_normalization);
    r.get("R", c.vae.R);
    r.get("gen_error_samples", c.vae.gen_error_samples);
    r.finish();
  }
  if (const json* s = top.child("sweep")) {
    detail::ObjectReader r(*s, "sweep");
    r.get("axis", c.sweep.axis);
    r.get("values", c.sweep.values);
    r.get("workers", c.sweep.workers);
    r.finish();
  }
  top.finish();
  validate_config(c);
  return c;
}

inline RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end(), nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_config(const std::string& path) {
  if (path.empty()) {
    RunConfig c;
    validate_config(c);
    return c;
  }
  return parse_config(read_file(path));
}

/// 64-bit FNV-1a over raw bytes, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline Dataset make_dataset(const DatasetConfig& c, std::size_t m, std::uint64_t seed) {
  switch (c.generator) {
    case Generator::swiss_roll:
      return make_swiss_roll(m, c.noise_std, c.scale, seed);
    case Generator::gaussian_mixture:
      return make_gaussian_mixture(m, default_mixture_centers(), c.mixture_std, seed);
    case Generator::gaussian:
      return make_gaussian(m, Vector::Zero(2), Vector::Ones(2), seed);
    case Generator::generated:
      break;
  }
  throw ConfigError("dataset.generator: 'generated' cannot be drawn from a config");
}

inline DmBoundConfig dm_config(const RunConfig& c) {
  DmBoundConfig d;
  d.sde = c.sde;
  d.net = c.scorenet;
  d.train = c.train;
  d.train.seed = c.seed;
  d.sampler = c.sampler;
  d.sampler.seed = c.seed;
  d.seeds = c.bounds.seeds;
  d.t1_num_mc = c.bounds.t1_num_mc;
  d.esm_samples = c.bounds.esm_samples;
  d.t3_mode = c.bounds.t3_mode;
  d.combined_root = c.bounds.combined_root;
  d.compute_test_kl = c.bounds.compute_test_kl;
  d.generated_samples = c.bounds.generated_samples;
  return d;
}

inline std::vector<std::string> provenance(const RunConfig& c, const std::string& command) {
  return {"command " + command, "config " + canonical_config(c), "seed " + std::to_string(c.seed)};
}

// ---------------------------------------------------------------------------
// Sweep CSV and SVG
// ---------------------------------------------------------------------------

struct CsvRow {
  double T = 0.0;
  std::size_t m = 0;
  std::string seed;
  double t1, esm, t2, t3, rhs, test_kl, test_kl_stderr, R, L_max;
};

inline std::vector<CsvRow> read_dm_csv(std::istream& is) {
  std::vector<CsvRow> rows;
  std::string line;
  bool header = false;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != kDmCsvHeader) throw std::runtime_error("csv: unexpected header: " + line);
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 12) throw std::runtime_error("csv: expected 12 fields: " + line);
    CsvRow r;
    r.T = parse_real(f[0]);
    r.m = std::stoull(f[1]);
    r.seed = f[2];
    double* dst[] = {&r.t1, &r.esm, &r.t2, &r.t3, &r.rhs, &r.test_kl, &r.test_kl_stderr, &r.R, &r.L_max};
    for (std::size_t k = 0; k < 9; ++k) *dst[k] = parse_real(f[k + 3]);
    rows.push_back(r);
  }
  if (!header) throw std::runtime_error("csv: missing header");
  return rows;
}

struct AxisPoint {
  double x = 0.0;
  double rhs = 0.0, rhs_stderr = 0.0;
  double kl = 0.0, kl_stderr = 0.0;
};

/// One point per aggregate row; the rhs error bar comes from that cell's seed rows.
inline std::vector<AxisPoint> axis_points(const std::vector<CsvRow>& rows, const std::string& axis) {
  std::vector<AxisPoint> pts;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const CsvRow& a = rows[i];
    if (a.seed != "mean") continue;
    AxisPoint p;
    p.x = axis == "m" ? static_cast<double>(a.m) : a.T;
    p.rhs = a.rhs;
    p.kl = a.test_kl;
    p.kl_stderr = a.test_kl_stderr;
    std::vector<double> seeds;
    for (const CsvRow& s : rows)
      if (s.seed != "mean" && s.T == a.T && s.m == a.m && std::isfinite(s.rhs)) seeds.push_back(s.rhs);
    if (seeds.size() >= 2) p.rhs_stderr = summarize(seeds).std_error;
    pts.push_back(p);
  }
  return pts;
}

/// Point with the smallest finite aggregate rhs.
inline std::optional<AxisPoint> argmin_rhs(const std::vector<AxisPoint>& pts) {
  std::optional<AxisPoint> best;
  for (const auto& p : pts)
    if (std::isfinite(p.rhs) && (!best || p.rhs < best->rhs)) best = p;
  return best;
}

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '-': out += "&#45;"; break;  // keeps "--" out of comments
      default: out += c;
    }
  }
  return out;
}

/// Line chart of rhs and test_kl against the swept axis, built from CSV rows only.
inline void write_sweep_svg(std::ostream& os, const std::vector<CsvRow>& rows, const std::string& axis,
                            const std::vector<std::string>& comments = {}) {
  const auto pts = axis_points(rows, axis);
  const double W = 640, H = 420, left = 70, right = 150, top = 30, bottom = 60;
  const bool logx = axis == "m";
  auto fx = [&](double x) { return logx ? std::log10(x) : x; };

  double xlo = std::numeric_limits<double>::infinity(), xhi = -xlo, ylo = 0.0, yhi = 0.0;
  for (const auto& p : pts) {
    xlo = std::min(xlo, fx(p.x));
    xhi = std::max(xhi, fx(p.x));
    for (double v : {p.rhs + p.rhs_stderr, p.kl + p.kl_stderr})
      if (std::isfinite(v)) yhi = std::max(yhi, v);
    for (double v : {p.rhs - p.rhs_stderr, p.kl - p.kl_stderr})
      if (std::isfinite(v)) ylo = std::min(ylo, v);
  }
  if (pts.empty()) xlo = 0.0, xhi = 1.0;
  if (xhi - xlo <= 0.0) xlo -= 1.0, xhi += 1.0;
  if (yhi - ylo <= 0.0) yhi = ylo + 1.0;
  yhi += 0.05 * (yhi - ylo);

  auto px = [&](double x) { return left + (fx(x) - xlo) / (xhi - xlo) * (W - left - right); };
  auto py = [&](double y) { return H - bottom - (y - ylo) / (yhi - ylo) * (H - top - bottom); };
  auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  };

  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  for (const auto& c : comments) os << "<!-- " << xml_escape(c) << " -->\n";
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // axes
  os << "<line x1=\"" << left << "\" y1=\"" << H - bottom << "\" x2=\"" << W - right << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << H - bottom
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double y = ylo + (yhi - ylo) * k / 5.0;
    os << "<line x1=\"" << left - 4 << "\" y1=\"" << num(py(y)) << "\" x2=\"" << left << "\" y2=\"" << num(py(y))
       << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << left - 8 << "\" y=\"" << num(py(y) + 4) << "\" text-anchor=\"end\">" << num(y)
       << "</text>\n";
  }
  for (const auto& p : pts) {
    os << "<line x1=\"" << num(px(p.x)) << "\" y1=\"" << H - bottom << "\" x2=\"" << num(px(p.x)) << "\" y2=\""
       << H - bottom + 4 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << num(px(p.x)) << "\" y=\"" << H - bottom + 18 << "\" text-anchor=\"middle\">" << num(p.x)
       << "</text>\n";
  }
  os << "<text x=\"" << (left + W - right) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">"
     << (axis == "m" ? "training set size m" : "diffusion time T") << "</text>\n";

  auto series = [&](const char* name, const char* color, double AxisPoint::*val, double AxisPoint::*err, int slot) {
    std::string poly;
    for (const auto& p : pts) {
      if (!std::isfinite(p.*val)) continue;
      poly += num(px(p.x)) + "," + num(py(p.*val)) + " ";
    }
    if (!poly.empty()) {
      poly.pop_back();
      os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"" << poly << "\"/>\n";
    }
    for (const auto& p : pts) {
      if (!std::isfinite(p.*val)) continue;
      const double x = px(p.x);
      os << "<circle cx=\"" << num(x) << "\" cy=\"" << num(py(p.*val)) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
      if (std::isfinite(p.*err) && p.*err > 0.0) {
        const double y0 = py(p.*val - p.*err), y1 = py(p.*val + p.*err);
        os << "<line x1=\"" << num(x) << "\" y1=\"" << num(y0) << "\" x2=\"" << num(x) << "\" y2=\"" << num(y1)
           << "\" stroke=\"" << color << "\"/>\n";
        for (double y : {y0, y1})
          os << "<line x1=\"" << num(x - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(x + 4) << "\" y2=\""
             << num(y) << "\" stroke=\"" << color << "\"/>\n";
      }
    }
    const double ly = top + 20.0 * slot;
    os << "<line x1=\"" << W - right + 15 << "\" y1=\"" << ly << "\" x2=\"" << W - right + 40 << "\" y2=\"" << ly
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << W - right + 45 << "\" y=\"" << ly + 4 << "\">" << name << "</text>\n";
  };
  series("bound (rhs)", "#1f77b4", &AxisPoint::rhs, &AxisPoint::rhs_stderr, 0);
  series("test KL", "#d62728", &AxisPoint::kl, &AxisPoint::kl_stderr, 1);
  os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
};

/// Config file, then GENBOUND_SEED, then --seed.
inline RunConfig resolve_config(const CommonArgs& a) {
  RunConfig c = load_config(a.config_path);
  if (const char* env = std::getenv("GENBOUND_SEED"); env != nullptr && *env != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0') throw ConfigError("GENBOUND_SEED is not an unsigned integer");
    c.seed = v;
  }
  if (a.seed) c.seed = *a.seed;
  return c;
}

template <class Write>
void write_file(const std::string& path, Write&& write) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write(out);
  if (!out) throw std::runtime_error("error writing " + path);
}

inline ScoreNet load_score_net(const std::string& path) {
  std::istringstream in(read_file(path));
  return read_score_net(in);
}

inline VaeModel load_vae(const std::string& path) {
  std::istringstream in(read_file(path));
  return read_vae(in);
}

inline Matrix test_points_for(const RunConfig& c, const std::string& test_path) {
  if (!test_path.empty()) return load_points(test_path).points;
  return make_dataset(c.dataset, c.dataset.test_size, c.dataset.test_seed).points;
}

inline int cmd_gen_data(const RunConfig& c, const std::string& out_path, std::ostream& out) {
  const Dataset ds = make_dataset(c.dataset, c.dataset.m, c.seed);
  write_file(out_path, [&](std::ostream& os) { write_points(os, ds, provenance(c, "gen-data")); });
  out << "wrote " << ds.points.rows() << " points to " << out_path << "\n";
  return kOk;
}

inline int cmd_train_dm(const RunConfig& c, const std::string& data_path, const std::string& out_path,
                        std::ostream& out) {
  const std::string data_bytes = read_file(data_path);
  std::istringstream din(data_bytes);
  const Dataset data = read_points(din);
  ScoreNetConfig nc = c.scorenet;
  nc.data_dim = data.dim();
  Rng init(derive_seed(c.seed, 1));
  ScoreNet net(nc, init);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  const auto trace = train_score(net, c.sde, data.points, tc);
  auto comments = provenance(c, "train-dm");
  comments.push_back("data_hash fnv1a64:" + fnv1a_hex(data_bytes));
  comments.push_back("final_loss " + format_real(trace.back()));
  std::ostringstream model;
  write_score_net(model, net, comments);
  write_file(out_path, [&](std::ostream& os) { os << model.str(); });
  out << "final_loss " << format_real(trace.back()) << "\n";
  out << "model_hash fnv1a64:" << fnv1a_hex(model.str()) << "\n";
  return kOk;
}

inline int cmd_bound_dm(const RunConfig& c, const std::string& data_path, const std::string& model_path,
                        const std::string& test_path, const std::string& out_path, const std::string& csv_path,
                        std::ostream& out) {
  const Dataset data = load_points(data_path);
  const std::string model_bytes = read_file(model_path);
  std::istringstream min(model_bytes);
  const ScoreNet net = read_score_net(min);
  require(net.data_dim() == data.dim(), "bound-dm: model and data dimensions differ");
  const DmBoundConfig cfg = dm_config(c);
  const double T = c.sde.horizon;

  REstimate R = estimate_R_diameter(data.points);
  if (c.bounds.r_probes > 0) {
    Rng r_rng(derive_seed(c.seed, 6));
    R = estimate_R(c.sde, net, data.points, r_rng, c.bounds.r_probes, c.bounds.r_strategy, c.sampler);
  }
  require(R.value > 0.0, "bound-dm: R must be > 0 (degenerate dataset)");
  const Matrix test = test_points_for(c, test_path);
  SeedTerms st;
  st.seed = c.seed;
  dm_bound_terms(cfg, net, data.points, T, R.value, c.seed, c.bounds.compute_test_kl ? &test : nullptr, st);
  const DmBoundReport rep = aggregate_report(T, data.points.rows(), R, cfg.t3_mode, {st});

  auto comments = provenance(c, "bound-dm");
  comments.push_back("model_hash fnv1a64:" + fnv1a_hex(model_bytes));
  write_file(out_path, [&](std::ostream& os) {
    for (const auto& line : comments) os << "# " << line << "\n";
    os << "model_hash fnv1a64:" << fnv1a_hex(model_bytes) << "\n";
    write_dm_text_report(os, rep);
  });
  if (!csv_path.empty()) {
    write_file(csv_path, [&](std::ostream& os) {
      for (const auto& line : comments) os << "# " << line << "\n";
      os << kDmCsvHeader << "\n";
      write_dm_csv_rows(os, rep);
    });
  }
  out << "rhs " << format_real(st.rhs) << "\n";
  return st.ok ? kOk : kRuntime;
}

inline int cmd_sample(const RunConfig& c, const std::string& model_path, std::size_t n, const std::string& out_path,
                      std::ostream& out) {
  const std::string model_bytes = read_file(model_path);
  std::istringstream min(model_bytes);
  const ScoreNet net = read_score_net(min);
  Rng rng(derive_seed(c.seed, 5));
  SamplerConfig sc = c.sampler;
  sc.seed = c.seed;
  Dataset ds;
  ds.points = backward_sample(net, c.sde, sc, rng, n, net.data_dim()).samples;
  ds.generator = Generator::generated;
  ds.seed = c.seed;
  ds.params = {{"T", c.sde.horizon}, {"num_steps", static_cast<double>(sc.num_steps)}};
  auto comments = provenance(c, "sample");
  comments.push_back("model_hash fnv1a64:" + fnv1a_hex(model_bytes));
  write_file(out_path, [&](std::ostream& os) { write_points(os, ds, comments); });
  out << "wrote " << n << " samples to " << out_path << "\n";
  return kOk;
}

inline int cmd_train_vae(const RunConfig& c, const std::string& data_path, const std::string& out_path,
                         std::ostream& out) {
  const std::string data_bytes = read_file(data_path);
  std::istringstream din(data_bytes);
  const Dataset data = read_points(din);
  VaeConfig vc;
  vc.data_dim = data.dim();
  vc.latent_dim = c.vae.latent_dim;
  vc.encoder_hidden = vc.decoder_hidden = c.vae.hidden;
  vc.activation = c.vae.activation;
  Rng init(derive_seed(c.seed, 1));
  VaeModel model(vc, init);
  VaeTrainConfig tc;
  tc.iterations = c.vae.iterations;
  tc.batch_size = c.vae.batch_size;
  tc.lr = c.vae.lr;
  tc.beta = c.vae.beta;
  tc.seed = c.seed;
  const auto trace = train_vae(model, data.points, tc);
  auto comments = provenance(c, "train-vae");
  comments.push_back("data_hash fnv1a64:" + fnv1a_hex(data_bytes));
  comments.push_back("final_loss " + format_real(trace.back()));
  std::ostringstream s;
  write_vae(s, model, comments);
  write_file(out_path, [&](std::ostream& os) { os << s.str(); });
  out << "final_loss " << format_real(trace.back()) << "\n";
  out << "model_hash fnv1a64:" << fnv1a_hex(s.str()) << "\n";
  return kOk;
}

inline constexpr const char* kVaeCsvHeader =
    "m,recon,recon_stderr,kl_avg,cmi_ub,R,mi_bound_total,pacbayes_total,K_theta,Delta,mi_without_cmi,gen_error,"
    "gen_error_stderr";

inline int cmd_bound_vae(const RunConfig& c, const std::string& data_path, const std::string& model_path,
                         const std::string& test_path, const std::string& out_path, std::ostream& out) {
  const Dataset data = load_points(data_path);
  const std::string model_bytes = read_file(model_path);
  std::istringstream min(model_bytes);
  const VaeModel model = read_vae(min);
  require(model.data_dim() == data.dim(), "bound-vae: model and data dimensions differ");
  const double R = c.vae.R > 0.0 ? c.vae.R : diameter(data) / 2.0;
  Rng rng(derive_seed(c.seed, 7));
  VaeBoundOptions opt;
  opt.num_mc = c.vae.num_mc;
  opt.lipschitz_pairs = c.vae.lipschitz_pairs;
  opt.cmi_normalization = c.vae.cmi_normalization;
  const VaeBoundReport rep = vae_w1_bound(model, data.points, R, rng, opt);
  const BoundComparison cmp = compare_with_pacbayes(rep);
  const Matrix test = test_points_for(c, test_path);
  const Estimate gen = vae_generation_error(model, test, c.vae.gen_error_samples, rng);

  auto comments = provenance(c, "bound-vae");
  comments.push_back("model_hash fnv1a64:" + fnv1a_hex(model_bytes));
  comments.push_back("K_theta is an empirical lower bound on the decoder Lipschitz constant");
  comments.push_back("cmi_ub is an upper bound on the per-example conditional mutual information");
  write_file(out_path, [&](std::ostream& os) {
    for (const auto& line : comments) os << "# " << line << "\n";
    os << kVaeCsvHeader << "\n";
    os << data.points.rows() << ',' << format_real(rep.recon) << ',' << format_real(rep.recon_stderr) << ','
       << format_real(rep.kl_avg) << ',' << format_real(rep.cmi_ub) << ',' << format_real(rep.R) << ','
       << format_real(rep.mi_bound_total) << ',' << format_real(rep.pacbayes_total) << ','
       << format_real(rep.K_theta) << ',' << format_real(rep.Delta) << ',' << format_real(cmp.mi_without_cmi) << ','
       << format_real(gen.mean) << ',' << format_real(gen.std_error) << '\n';
  });
  out << "mi_bound_total " << format_real(rep.mi_bound_total) << "\n";
  out << "pacbayes_total " << format_real(rep.pacbayes_total) << "\n";
  return kOk;
}

/// Reads a sweep CSV and writes its chart.
inline int cmd_plot(const std::string& csv_path, const std::string& axis, const std::string& svg_path,
                    const std::vector<std::string>& comments = {}) {
  std::istringstream in(read_file(csv_path));
  const auto rows = read_dm_csv(in);
  write_file(svg_path, [&](std::ostream& os) { write_sweep_svg(os, rows, axis, comments); });
  return kOk;
}

inline int cmd_sweep(const RunConfig& c, const std::string& csv_path, const std::string& svg_path,
                     std::optional<std::size_t> workers_flag, std::ostream& out, std::ostream& err) {
  const DmBoundConfig cfg = dm_config(c);
  const DataGenerator gen = [&](std::size_t m, std::uint64_t seed) { return make_dataset(c.dataset, m, seed); };
  const bool over_T = c.sweep.axis == "T";

  struct Cell {
    double T;
    std::size_t m;
    REstimate R;
  };
  std::vector<Cell> cells;
  std::map<std::size_t, REstimate> r_by_m;
  for (double v : c.sweep.values) {
    Cell cell{over_T ? v : c.sde.horizon, over_T ? c.dataset.m : static_cast<std::size_t>(v), {}};
    if (!r_by_m.count(cell.m)) r_by_m[cell.m] = sweep_R(gen, cell.m, cfg.seeds.front());
    cell.R = r_by_m[cell.m];
    cells.push_back(cell);
  }
  const Matrix test = make_dataset(c.dataset, c.dataset.test_size, c.dataset.test_seed).points;

  // one job per (cell, seed); results land in a slot fixed by the job index
  const std::size_t n_seeds = cfg.seeds.size();
  const std::size_t n_jobs = cells.size() * n_seeds;
  std::vector<SeedTerms> results(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < n_jobs;) {
      const Cell& cell = cells[j / n_seeds];
      const std::uint64_t seed = cfg.seeds[j % n_seeds];
      try {
        results[j] = dm_bound_seed(cfg, gen, cell.T, cell.m, seed, cell.R.value, &test);
      } catch (const std::exception& e) {
        results[j].seed = seed;
        results[j].ok = false;
        results[j].error = e.what();
      }
    }
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(workers_flag.value_or(c.sweep.workers), n_jobs));
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  bool partial = false;
  const auto comments = provenance(c, "sweep");
  write_file(csv_path, [&](std::ostream& os) {
    for (const auto& line : comments) os << "# " << line << "\n";
    os << kDmCsvHeader << "\n";
    for (std::size_t k = 0; k < cells.size(); ++k) {
      std::vector<SeedTerms> per_seed(results.begin() + static_cast<std::ptrdiff_t>(k * n_seeds),
                                      results.begin() + static_cast<std::ptrdiff_t>((k + 1) * n_seeds));
      for (const auto& s : per_seed) {
        if (s.ok) continue;
        partial = true;
        err << "cell T=" << format_real(cells[k].T) << " m=" << cells[k].m << " seed " << s.seed
            << " failed: " << s.error << "\n";
      }
      write_dm_csv_rows(os, aggregate_report(cells[k].T, cells[k].m, cells[k].R, cfg.t3_mode, std::move(per_seed)));
    }
  });
  cmd_plot(csv_path, c.sweep.axis, svg_path, comments);

  std::istringstream in(read_file(csv_path));
  const auto best = argmin_rhs(axis_points(read_dm_csv(in), c.sweep.axis));
  if (best) out << (over_T ? "argmin_T " : "argmin_m ") << format_real(best->x) << "\n";
  return partial ? kPartial : kOk;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Train desk-scale diffusion models and VAEs and estimate their generalization bounds."};
  app.name("genbound");
  app.require_subcommand(1);

  CommonArgs common;
  std::optional<std::uint64_t> seed_flag;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed_flag, "Seed (overrides GENBOUND_SEED and the config)");
  };

  std::string out_path, data_path, model_path, test_path, csv_path, svg_path, dataset_name, axis = "T";
  std::optional<std::size_t> m_flag, workers;
  std::size_t n = 1000;

  auto* gen_data = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_common(gen_data);
  gen_data->add_option("--dataset", dataset_name, "swiss-roll, gaussian-mixture or gaussian");
  gen_data->add_option("--m", m_flag, "Number of points")->check(CLI::PositiveNumber);
  gen_data->add_option("--out", out_path, "Output point file")->required();

  auto* train_dm = app.add_subcommand("train-dm", "Train a score network with denoising score matching");
  add_common(train_dm);
  train_dm->add_option("--data", data_path, "Training point file")->required()->check(CLI::ExistingFile);
  train_dm->add_option("--out", out_path, "Output model file")->required();

  auto* bound_dm = app.add_subcommand("bound-dm", "Estimate the diffusion bound for a trained score network");
  add_common(bound_dm);
  bound_dm->add_option("--data", data_path, "Training point file")->required()->check(CLI::ExistingFile);
  bound_dm->add_option("--model", model_path, "Score network file")->required()->check(CLI::ExistingFile);
  bound_dm->add_option("--test", test_path, "Held-out point file for the test KL")->check(CLI::ExistingFile);
  bound_dm->add_option("--out", out_path, "Text report")->required();
  bound_dm->add_option("--csv", csv_path, "Optional CSV report");

  auto* sample = app.add_subcommand("sample", "Draw samples with the reverse-time sampler");
  add_common(sample);
  sample->add_option("--model", model_path, "Score network file")->required()->check(CLI::ExistingFile);
  sample->add_option("--n", n, "Number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--out", out_path, "Output point file")->required();

  auto* train_vae_cmd = app.add_subcommand("train-vae", "Train a Gaussian VAE");
  add_common(train_vae_cmd);
  train_vae_cmd->add_option("--data", data_path, "Training point file")->required()->check(CLI::ExistingFile);
  train_vae_cmd->add_option("--out", out_path, "Output model file")->required();

  auto* bound_vae = app.add_subcommand("bound-vae", "Estimate the VAE bound and the PAC-Bayes comparison");
  add_common(bound_vae);
  bound_vae->add_option("--data", data_path, "Training point file")->required()->check(CLI::ExistingFile);
  bound_vae->add_option("--model", model_path, "VAE model file")->required()->check(CLI::ExistingFile);
  bound_vae->add_option("--test", test_path, "Held-out point file for the generation error")
      ->check(CLI::ExistingFile);
  bound_vae->add_option("--out", out_path, "CSV report")->required();

  auto* sweep = app.add_subcommand("sweep", "Sweep T or m, writing a CSV report and an SVG chart");
  add_common(sweep);
  sweep->add_option("--csv", csv_path, "Output CSV")->required();
  sweep->add_option("--svg", svg_path, "Output SVG")->required();
  sweep->add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "Render a sweep CSV as SVG");
  plot->add_option("--csv", csv_path, "Sweep CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("--axis", axis, "T or m")->check(CLI::IsMember({"T", "m"}));
  plot->add_option("--out", out_path, "Output SVG")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    common.seed = seed_flag;
    if (plot->parsed()) return cmd_plot(csv_path, axis, out_path);
    RunConfig c = resolve_config(common);
    if (gen_data->parsed()) {
      if (!dataset_name.empty()) {
        try {
          c.dataset.generator = parse_generator(dataset_name);
        } catch (const std::invalid_argument& e) {
          err << "gen-data: " << e.what() << "\n";
          return kUsage;
        }
        if (c.dataset.generator == Generator::generated) {
          err << "gen-data: 'generated' is not a generator\n";
          return kUsage;
        }
      }
      if (m_flag) c.dataset.m = *m_flag;
      return cmd_gen_data(c, out_path, out);
    }
    if (train_dm->parsed()) return cmd_train_dm(c, data_path, out_path, out);
    if (bound_dm->parsed()) return cmd_bound_dm(c, data_path, model_path, test_path, out_path, csv_path, out);
    if (sample->parsed()) return cmd_sample(c, model_path, n, out_path, out);
    if (train_vae_cmd->parsed()) return cmd_train_vae(c, data_path, out_path, out);
    if (bound_vae->parsed()) return cmd_bound_vae(c, data_path, model_path, test_path, out_path, out);
    if (sweep->parsed()) return cmd_sweep(c, csv_path, svg_path, workers, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}

}  // namespace genbound::cli
