#pragma once

// Line-oriented run configuration:
//
//   # comment
//   [problem]
//   example = lasso_network
//   seed = 3
//   [integrator]
//   t_end = 500
//
// Sections may repeat ([smooth] and [nonsmooth] describe one block each for
// inline problems). Matrices are written row by row with ';' between rows.

#include "palflow/examples.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace palflow {

inline constexpr const char* kVersion = "0.1.0";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& msg) : std::runtime_error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct ConfigEntry {
  std::string key, value;
  int line = 0;
};

struct ConfigSection {
  std::string name;
  int line = 0;
  std::vector<ConfigEntry> entries;

  const ConfigEntry* find(const std::string& key) const {
    for (const auto& e : entries)
      if (e.key == key) return &e;
    return nullptr;
  }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries) {
      if (e.key == key) {
        e.value = value;
        return;
      }
    }
    entries.push_back({key, value, 0});
  }
};

struct Config {
  std::string source;
  std::vector<ConfigSection> sections;

  ConfigSection* first(const std::string& name) {
    for (auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  const ConfigSection* first(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  ConfigSection& ensure(const std::string& name) {
    if (auto* s = first(name)) return *s;
    sections.push_back({name, 0, {}});
    return sections.back();
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string where(const ConfigEntry& e) { return e.line > 0 ? " (line " + std::to_string(e.line) + ")" : ""; }

}  // namespace detail

inline Config parse_config(std::istream& is, std::string source = "<input>") {
  Config c;
  c.source = std::move(source);
  std::string raw;
  int ln = 0;
  while (std::getline(is, raw)) {
    ++ln;
    auto hash = raw.find('#');
    std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw ConfigError(line, "malformed section header '" + line + "' (line " + std::to_string(ln) + ")");
      }
      c.sections.push_back({detail::trim(line.substr(1, line.size() - 2)), ln, {}});
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(line, "expected 'key = value' but got '" + line + "' (line " + std::to_string(ln) + ")");
    }
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("", "empty key (line " + std::to_string(ln) + ")");
    if (c.sections.empty()) {
      throw ConfigError(key, "key '" + key + "' appears before any [section] (line " + std::to_string(ln) + ")");
    }
    auto& sec = c.sections.back();
    if (sec.find(key)) {
      throw ConfigError(key, "duplicate key '" + key + "' in [" + sec.name + "] (line " + std::to_string(ln) + ")");
    }
    sec.entries.push_back({key, value, ln});
  }
  return c;
}

inline Config load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot open config file " + path);
  return parse_config(is, path);
}

inline std::string serialize_config(const Config& c) {
  std::ostringstream os;
  for (std::size_t i = 0; i < c.sections.size(); ++i) {
    if (i) os << "\n";
    os << "[" << c.sections[i].name << "]\n";
    for (const auto& e : c.sections[i].entries) os << e.key << " = " << e.value << "\n";
  }
  return os.str();
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// ------------------------------------------------------------ value parsing

inline double config_double(const ConfigEntry& e) {
  const char* s = e.value.c_str();
  char* end = nullptr;
  double v = std::strtod(s, &end);
  if (end == s || detail::trim(end).size() > 0 || !std::isfinite(v)) {
    throw ConfigError(e.key, "invalid number for key '" + e.key + "': '" + e.value + "'" + detail::where(e));
  }
  return v;
}

inline std::uint64_t config_u64(const ConfigEntry& e) {
  const char* s = e.value.c_str();
  char* end = nullptr;
  if (e.value.empty() || e.value.front() == '-') {
    throw ConfigError(e.key, "invalid unsigned integer for key '" + e.key + "': '" + e.value + "'" + detail::where(e));
  }
  unsigned long long v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0') {
    throw ConfigError(e.key, "invalid unsigned integer for key '" + e.key + "': '" + e.value + "'" + detail::where(e));
  }
  return v;
}

inline bool config_bool(const ConfigEntry& e) {
  if (e.value == "true" || e.value == "1" || e.value == "yes") return true;
  if (e.value == "false" || e.value == "0" || e.value == "no") return false;
  throw ConfigError(e.key, "invalid boolean for key '" + e.key + "': '" + e.value + "'" + detail::where(e));
}

inline VectorXd config_vector(const ConfigEntry& e) {
  std::string s = e.value;
  for (auto& ch : s)
    if (ch == ',') ch = ' ';
  std::istringstream is(s);
  std::vector<double> v;
  std::string tok;
  while (is >> tok) {
    ConfigEntry t{e.key, tok, e.line};
    v.push_back(config_double(t));
  }
  return Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline MatrixXd config_matrix(const ConfigEntry& e) {
  std::vector<VectorXd> rows;
  std::stringstream ss(e.value);
  std::string row;
  while (std::getline(ss, row, ';')) {
    if (detail::trim(row).empty()) continue;
    rows.push_back(config_vector({e.key, row, e.line}));
  }
  if (rows.empty()) throw ConfigError(e.key, "empty matrix for key '" + e.key + "'" + detail::where(e));
  MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.cols()) {
      throw ConfigError(e.key, "ragged matrix rows for key '" + e.key + "'" + detail::where(e));
    }
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

// ------------------------------------------------------------- run spec

enum class V2Mode { automatic, on, off };

struct RunSpec {
  ExampleInstance ex;
  bool is_counterexample = false;
  bool distributed = false;
  double beta = 5.0;
  IntegratorConfig cfg;
  V2Mode v2 = V2Mode::automatic;
  bool svg = false;
  bool states = false;
};

/// Command-line overrides applied to the config before it is resolved.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<double> alpha, mu, t_end, stop_kkt;
  std::optional<std::string> method;
  bool svg = false;
};

namespace detail {

inline void check_keys(const ConfigSection& s, const std::set<std::string>& allowed) {
  for (const auto& e : s.entries) {
    if (!allowed.count(e.key)) {
      throw ConfigError(e.key, "unknown key '" + e.key + "' in [" + s.name + "]" + where(e));
    }
  }
}

inline const ConfigEntry& require(const ConfigSection& s, const std::string& key) {
  const auto* e = s.find(key);
  if (!e) throw ConfigError(key, "missing key '" + key + "' in [" + s.name + "] (line " + std::to_string(s.line) + ")");
  return *e;
}

inline std::optional<double> opt_double(const ConfigSection& s, const std::string& key) {
  const auto* e = s.find(key);
  if (!e) return std::nullopt;
  return config_double(*e);
}

inline SmoothBlock smooth_from_section(const ConfigSection& s) {
  check_keys(s, {"kind", "H", "c", "G", "h", "E", "lipschitz", "strong_convexity"});
  std::string kind = s.find("kind") ? s.find("kind")->value : "quadratic";
  SmoothBlock b;
  if (kind == "quadratic") {
    MatrixXd H = config_matrix(require(s, "H"));
    VectorXd c = s.find("c") ? config_vector(*s.find("c")) : VectorXd::Zero(H.rows());
    if (H.rows() != H.cols() || c.size() != H.rows()) throw ConfigError("H", "key 'H' must be square and match 'c'");
    b = make_quadratic_block(H, c);
  } else if (kind == "least_squares") {
    MatrixXd G = config_matrix(require(s, "G"));
    VectorXd h = config_vector(require(s, "h"));
    if (h.size() != G.rows()) throw ConfigError("h", "key 'h' must have one entry per row of 'G'");
    b = make_least_squares_block(G, h);
  } else {
    throw ConfigError("kind", "invalid value for key 'kind' in [smooth]: '" + kind + "'" + where(*s.find("kind")));
  }
  if (const auto* e = s.find("lipschitz")) {
    if (e->value == "none") b.lipschitz = kNaN;
    else if (e->value != "auto") b.lipschitz = config_double(*e);
  }
  if (const auto* e = s.find("strong_convexity")) {
    if (e->value != "auto") b.strong_convexity = config_double(*e);
  }
  return b;
}

inline ProximableFunction nonsmooth_from_section(const ConfigSection& s) {
  check_keys(s, {"kind", "dim", "weight", "center", "modulus", "groups", "eta", "F"});
  const auto& ke = require(s, "kind");
  const auto& de = require(s, "dim");
  auto dim = static_cast<Eigen::Index>(config_u64(de));
  double w = s.find("weight") ? config_double(*s.find("weight")) : 1.0;
  const std::string& kind = ke.value;
  if (kind == "l1") return make_l1(dim, w);
  if (kind == "nonneg") return make_indicator(Orthant::nonneg, dim);
  if (kind == "nonpos") return make_indicator(Orthant::nonpos, dim);
  if (kind == "zero") return make_zero(dim);
  if (kind == "quadratic") {
    VectorXd c = s.find("center") ? config_vector(*s.find("center")) : VectorXd::Zero(dim);
    double m = config_double(require(s, "modulus"));
    if (c.size() != dim) throw ConfigError("center", "key 'center' must have dim entries");
    return make_quadratic(c, m);
  }
  if (kind == "group_lasso") {
    VectorXd sizes = config_vector(require(s, "groups"));
    GroupPartition part;
    part.eta = s.find("eta") ? config_double(*s.find("eta")) : 0.0;
    Eigen::Index off = 0;
    for (Eigen::Index k = 0; k < sizes.size(); ++k) {
      auto len = static_cast<Eigen::Index>(sizes[k]);
      std::vector<Eigen::Index> g;
      for (Eigen::Index i = 0; i < len; ++i) g.push_back(off + i);
      off += len;
      part.groups.push_back(g);
      part.weights.push_back(w);
    }
    try {
      return make_group_lasso(dim, part);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError("groups", std::string("invalid value for key 'groups': ") + ex.what());
    }
  }
  throw ConfigError("kind", "invalid value for key 'kind' in [nonsmooth]: '" + kind + "'" + where(ke));
}

inline ExampleInstance inline_problem(const Config& c, const ConfigSection& pr) {
  ExampleInstance ex;
  ex.name = "inline";
  auto& P = ex.prob;
  P.q = config_vector(require(pr, "q"));
  P.mu = opt_double(pr, "mu").value_or(1.0);
  P.alpha = opt_double(pr, "alpha").value_or(1.0);
  P.E = BlockOperator(P.p());
  P.F = BlockOperator(P.p());
  for (const auto& s : c.sections) {
    if (s.name == "smooth") {
      auto b = smooth_from_section(s);
      MatrixXd E = config_matrix(require(s, "E"));
      if (E.rows() != P.p() || E.cols() != b.dim()) {
        throw ConfigError("E", "key 'E' must be dim(q) x dim(x_i)" + where(*s.find("E")));
      }
      P.smooth.push_back(b);
      P.E.push_back(LinearOperator::from_dense(E));
    } else if (s.name == "nonsmooth") {
      auto g = nonsmooth_from_section(s);
      MatrixXd F = config_matrix(require(s, "F"));
      if (F.rows() != P.p() || F.cols() != g.dim()) {
        throw ConfigError("F", "key 'F' must be dim(q) x dim(z_j)" + where(*s.find("F")));
      }
      P.g.blocks.push_back(g);
      P.F.push_back(LinearOperator::from_dense(F));
    }
  }
  if (P.smooth.empty() && P.g.blocks.empty()) throw ConfigError("smooth", "inline problem needs a [smooth] or [nonsmooth] section");
  try {
    P.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("problem", std::string("problem does not validate: ") + e.what());
  }
  ex.init = PrimalDualState::zeros(P);
  ex.t_end = 1000.0;
  return ex;
}

}  // namespace detail

/// Applies command-line overrides to the config text, so the manifest
/// records what was actually run.
inline void apply_overrides(Config& c, const Overrides& o) {
  auto& pr = c.ensure("problem");
  if (o.seed) pr.set("seed", std::to_string(*o.seed));
  if (o.alpha) pr.set("alpha", format_double(*o.alpha));
  if (o.mu) pr.set("mu", format_double(*o.mu));
  if (o.t_end || o.stop_kkt || o.method) {
    auto& in = c.ensure("integrator");
    if (o.t_end) in.set("t_end", format_double(*o.t_end));
    if (o.stop_kkt) in.set("stop_kkt", format_double(*o.stop_kkt));
    if (o.method) in.set("method", *o.method);
  }
  if (o.svg) c.ensure("output").set("svg", "true");
}

/// Builds the run. Throws ConfigError naming the offending key.
inline RunSpec resolve_run(const Config& c) {
  for (const auto& s : c.sections) {
    static const std::set<std::string> known = {"problem", "integrator", "output", "smooth", "nonsmooth"};
    if (!known.count(s.name)) {
      throw ConfigError(s.name, "unknown section [" + s.name + "] (line " + std::to_string(s.line) + ")");
    }
  }
  const ConfigSection* pr = c.first("problem");
  if (!pr) throw ConfigError("problem", "missing [problem] section");
  RunSpec rs;
  const auto& ee = detail::require(*pr, "example");
  if (ee.value == "inline") {
    detail::check_keys(*pr, {"example", "q", "mu", "alpha"});
    rs.ex = detail::inline_problem(c, *pr);
  } else {
    detail::check_keys(*pr, {"example", "scale", "seed", "beta", "mu", "alpha", "distributed"});
    auto kind = parse_example_kind(ee.value);
    if (!kind) throw ConfigError("example", "invalid value for key 'example': '" + ee.value + "'" + detail::where(ee));
    ExampleSpec spec;
    spec.which = *kind;
    if (const auto* e = pr->find("scale")) {
      if (e->value == "paper") spec.paper_scale = true;
      else if (e->value != "desk") throw ConfigError("scale", "invalid value for key 'scale': '" + e->value + "'" + detail::where(*e));
    }
    if (const auto* e = pr->find("seed")) spec.seed = config_u64(*e);
    if (const auto* e = pr->find("beta")) {
      spec.beta = config_double(*e);
      if (!(spec.beta > 0.0)) throw ConfigError("beta", "key 'beta' must be > 0" + detail::where(*e));
    }
    spec.mu = detail::opt_double(*pr, "mu");
    spec.alpha = detail::opt_double(*pr, "alpha");
    if (spec.mu && !(*spec.mu > 0.0)) throw ConfigError("mu", "key 'mu' must be > 0");
    if (spec.alpha && !(*spec.alpha > 0.0)) throw ConfigError("alpha", "key 'alpha' must be > 0");
    if (const auto* e = pr->find("distributed")) {
      rs.distributed = config_bool(*e);
      if (rs.distributed && spec.which != ExampleKind::lasso_network) {
        throw ConfigError("distributed", "key 'distributed' applies to lasso_network only" + detail::where(*e));
      }
    }
    rs.ex = make_example(spec);
    rs.is_counterexample = spec.which == ExampleKind::counterexample;
    rs.beta = spec.beta;
  }

  rs.cfg.t_end = rs.ex.t_end;
  if (const auto* in = c.first("integrator")) {
    detail::check_keys(*in, {"method", "h", "rel_tol", "abs_tol", "t_end", "stop_kkt", "record_dt", "max_steps", "v2"});
    if (const auto* e = in->find("method")) {
      auto m = parse_method(e->value);
      if (!m) throw ConfigError("method", "invalid value for key 'method': '" + e->value + "'" + detail::where(*e));
      rs.cfg.method = *m;
    }
    if (auto v = detail::opt_double(*in, "h")) rs.cfg.h = *v;
    if (auto v = detail::opt_double(*in, "rel_tol")) rs.cfg.rel_tol = *v;
    if (auto v = detail::opt_double(*in, "abs_tol")) rs.cfg.abs_tol = *v;
    if (auto v = detail::opt_double(*in, "t_end")) rs.cfg.t_end = *v;
    if (auto v = detail::opt_double(*in, "stop_kkt")) rs.cfg.stop_kkt = *v;
    if (auto v = detail::opt_double(*in, "record_dt")) rs.cfg.record_dt = *v;
    if (const auto* e = in->find("max_steps")) rs.cfg.max_steps = static_cast<long>(config_u64(*e));
    if (const auto* e = in->find("v2")) {
      if (e->value == "auto") rs.v2 = V2Mode::automatic;
      else if (e->value == "on") rs.v2 = V2Mode::on;
      else if (e->value == "off") rs.v2 = V2Mode::off;
      else throw ConfigError("v2", "invalid value for key 'v2': '" + e->value + "'" + detail::where(*e));
    }
  }
  if (!(rs.cfg.record_dt > 0.0)) rs.cfg.record_dt = (rs.cfg.t_end - rs.cfg.t0) / 2000.0;
  try {
    rs.cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("integrator", std::string("invalid [integrator]: ") + e.what());
  }
  if (const auto* out = c.first("output")) {
    detail::check_keys(*out, {"svg", "states"});
    if (const auto* e = out->find("svg")) rs.svg = config_bool(*e);
    if (const auto* e = out->find("states")) rs.states = config_bool(*e);
  }
  return rs;
}

/// The resolved config: every integrator setting written out, so a manifest
/// reproduces the run without relying on defaults.
inline Config resolved_config(Config c, const RunSpec& rs) {
  auto& in = c.ensure("integrator");
  in.set("method", to_string(rs.cfg.method));
  in.set("h", format_double(rs.cfg.h));
  in.set("rel_tol", format_double(rs.cfg.rel_tol));
  in.set("abs_tol", format_double(rs.cfg.abs_tol));
  in.set("t_end", format_double(rs.cfg.t_end));
  in.set("stop_kkt", format_double(rs.cfg.stop_kkt));
  in.set("record_dt", format_double(rs.cfg.record_dt));
  in.set("max_steps", std::to_string(rs.cfg.max_steps));
  in.set("v2", rs.v2 == V2Mode::on ? "on" : rs.v2 == V2Mode::off ? "off" : "auto");
  auto& pr = c.ensure("problem");
  if (pr.find("example") && pr.find("example")->value != "inline") {
    if (!pr.find("seed")) pr.set("seed", "1");
    pr.set("mu", format_double(rs.ex.prob.mu));
    pr.set("alpha", format_double(rs.ex.prob.alpha));
  }
  return c;
}

}  // namespace palflow
