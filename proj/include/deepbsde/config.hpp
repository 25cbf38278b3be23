#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "deepbsde/models.hpp"
#include "deepbsde/trainer.hpp"

namespace deepbsde {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key/value run configuration ("section.key = value" lines, '#'
// comments). Unknown and duplicate keys are errors: a silently ignored
// hyperparameter typo is worse than a failed run. Every omitted train.*
// key keeps its default.
struct FileConfig {
  std::string kind;  // cir1d | cir_multi | frozen_test
  std::vector<double> a{1.0};
  std::vector<double> b{1.0};
  std::vector<double> sigma{1.0};
  std::vector<double> x0{1.0};
  double T = 1.0;
  int n = 1;
  int d = 1;
  std::optional<std::uint64_t> param_seed;
  bool coeffs_given = false;  // any of a/b/sigma set explicitly
  double g_const = 1.0;
  TrainConfig train;
  std::string output_dir = "out";
};

namespace cfgdetail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t pos = 0;
    const double out = std::stod(std::string(v), &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value for '" + std::string(key) + "': " + std::string(v));
  }
}

inline long parse_long(std::string_view key, std::string_view v) {
  long out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: bad integer value for '" + std::string(key) + "': " + std::string(v));
  return out;
}

inline std::uint64_t parse_u64(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("config: bad unsigned value for '" + std::string(key) + "': " + std::string(v));
  return out;
}

inline std::vector<double> parse_vector(std::string_view key, std::string_view v) {
  std::vector<double> out;
  std::size_t start = 0;
  const std::string s(v);
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    const std::string_view item = trim(std::string_view(s).substr(start, comma - start));
    if (item.empty()) throw ConfigError("config: empty element in '" + std::string(key) + "'");
    out.push_back(parse_double(key, item));
    start = comma + 1;
    if (comma == s.size()) break;
  }
  return out;
}

inline std::vector<long> parse_long_vector(std::string_view key, std::string_view v) {
  std::vector<long> out;
  for (double x : parse_vector(key, v)) out.push_back(static_cast<long>(x));
  return out;
}

}  // namespace cfgdetail

inline FileConfig parse_config_text(std::string_view text) {
  FileConfig cfg;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string_view line = cfgdetail::trim(text.substr(start, nl - start));
    ++line_no;
    start = nl + 1;
    if (line.empty() || line.front() == '#') {
      if (nl == text.size()) break;
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not 'key = value'");
    const std::string key{cfgdetail::trim(line.substr(0, eq))};
    const std::string_view val = cfgdetail::trim(line.substr(eq + 1));
    if (val.empty()) throw ConfigError("config: empty value for '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config: duplicate key '" + key + "'");

    using namespace cfgdetail;
    if (key == "problem.kind") {
      cfg.kind = std::string(val);
      if (cfg.kind != "cir1d" && cfg.kind != "cir_multi" && cfg.kind != "frozen_test")
        throw ConfigError("config: unknown problem.kind '" + cfg.kind + "'");
    } else if (key == "problem.a") {
      cfg.a = parse_vector(key, val);
      cfg.coeffs_given = true;
    } else if (key == "problem.b") {
      cfg.b = parse_vector(key, val);
      cfg.coeffs_given = true;
    } else if (key == "problem.sigma") {
      cfg.sigma = parse_vector(key, val);
      cfg.coeffs_given = true;
    } else if (key == "problem.x0") {
      cfg.x0 = parse_vector(key, val);
    } else if (key == "problem.T") {
      cfg.T = parse_double(key, val);
    } else if (key == "problem.n") {
      cfg.n = static_cast<int>(parse_long(key, val));
    } else if (key == "problem.d") {
      cfg.d = static_cast<int>(parse_long(key, val));
    } else if (key == "problem.param_seed") {
      cfg.param_seed = parse_u64(key, val);
    } else if (key == "problem.g_const") {
      cfg.g_const = parse_double(key, val);
    } else if (key == "train.M") {
      cfg.train.M = parse_long(key, val);
    } else if (key == "train.N") {
      cfg.train.N = static_cast<int>(parse_long(key, val));
    } else if (key == "train.iterations") {
      cfg.train.iterations = parse_long(key, val);
    } else if (key == "train.repeats") {
      cfg.train.repeats = static_cast<int>(parse_long(key, val));
    } else if (key == "train.seed") {
      cfg.train.seed = parse_u64(key, val);
    } else if (key == "train.lr") {
      cfg.train.lr = parse_double(key, val);
    } else if (key == "train.beta1") {
      cfg.train.beta1 = parse_double(key, val);
    } else if (key == "train.beta2") {
      cfg.train.beta2 = parse_double(key, val);
    } else if (key == "train.eps") {
      cfg.train.eps = parse_double(key, val);
    } else if (key == "train.record_every") {
      cfg.train.record_every = parse_long(key, val);
    } else if (key == "train.checkpoints") {
      cfg.train.checkpoints = parse_long_vector(key, val);
    } else if (key == "train.reference") {
      if (val == "auto")
        cfg.train.reference = ReferenceMode::Auto;
      else if (val == "analytic")
        cfg.train.reference = ReferenceMode::Analytic;
      else if (val == "self")
        cfg.train.reference = ReferenceMode::SelfMean;
      else if (val == "none")
        cfg.train.reference = ReferenceMode::None;
      else
        throw ConfigError("config: train.reference must be auto|analytic|self|none");
    } else if (key == "output.dir") {
      cfg.output_dir = std::string(val);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
    if (nl == text.size()) break;
  }
  if (cfg.kind.empty()) throw ConfigError("config: problem.kind is required");
  return cfg;
}

inline FileConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

// A problem built from a config, along with the CIR parameters that went
// into it (possibly sampled from problem.param_seed) for logging.
struct BuiltProblem {
  FbsdeProblem problem;
  CirParams cir;       // populated for cir kinds
  bool sampled = false;
};

namespace cfgdetail {

inline std::vector<double> broadcast(std::string_view key, std::vector<double> v, int n) {
  if (static_cast<int>(v.size()) == n) return v;
  if (v.size() == 1) return std::vector<double>(static_cast<std::size_t>(n), v[0]);
  throw ConfigError("config: '" + std::string(key) + "' must have length 1 or n");
}

}  // namespace cfgdetail

inline BuiltProblem build_problem(const FileConfig& cfg) {
  BuiltProblem out;
  if (cfg.kind == "cir1d") {
    if (cfg.n != 1 || cfg.d != 1)
      throw ConfigError("config: cir1d requires n = d = 1");
    if (cfg.a.size() != 1 || cfg.b.size() != 1 || cfg.sigma.size() != 1 || cfg.x0.size() != 1)
      throw ConfigError("config: cir1d takes scalar a, b, sigma, x0");
    out.cir = CirParams{cfg.a, cfg.b, cfg.sigma};
    out.problem = make_cir_bond_1d(out.cir, cfg.T, cfg.x0[0]);
  } else if (cfg.kind == "cir_multi") {
    if (cfg.param_seed) {
      if (cfg.coeffs_given)
        throw ConfigError("config: give either problem.param_seed or explicit a/b/sigma, not both");
      out.cir = sample_cir_params(*cfg.param_seed, cfg.n);
      out.sampled = true;
    } else {
      out.cir = CirParams{cfgdetail::broadcast("problem.a", cfg.a, cfg.n),
                          cfgdetail::broadcast("problem.b", cfg.b, cfg.n),
                          cfgdetail::broadcast("problem.sigma", cfg.sigma, cfg.n)};
    }
    out.problem = make_cir_bond_multi(out.cir, cfg.n, cfg.d, cfg.T,
                                      cfgdetail::broadcast("problem.x0", cfg.x0, cfg.n));
  } else if (cfg.kind == "frozen_test") {
    out.problem = make_frozen_test(cfg.n, 1, cfg.d, cfg.T,
                                   cfgdetail::broadcast("problem.x0", cfg.x0, cfg.n), cfg.g_const);
  } else {
    throw ConfigError("config: unknown problem.kind '" + cfg.kind + "'");
  }
  return out;
}

}  // namespace deepbsde
