#pragma once

// Experiment orchestration: strict key-value configs, named experiment
// pipelines, and CSV/JSON result bundles. Primary CSV output is
// byte-reproducible for identical (config, seed).

#include "sicsim/fit.hpp"
#include "sicsim/thermometry.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace sicsim {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string experiment;

  // spin
  double d = 1400.0;  // MHz; demo stand-in, not a measured defect constant
  double ex = 16.5;   // MHz
  double rabi = 1.0;  // MHz
  bool has_omega = false;
  double omega = 0.0;  // MHz; exactly one of omega/delta drives the detuning
  double delta = 2.0;  // MHz, used when omega is absent

  bool idealized_pulses = true;

  NoiseSpec noise;
  int runs = 1;
  bool seed_set = false;
  std::uint64_t seed = 0;

  std::vector<double> tau_grid;      // us
  std::vector<double> odmr_b_gauss;  // G
  std::vector<double> fringes_ex;    // MHz
  std::vector<double> sweep_b;       // MHz, applied amplitude
  std::vector<double> sweep_ex;      // MHz

  // calibrate
  std::string calib_kind;    // linear | polynomial
  std::string calib_points;  // CSV path

  // estimate-temp
  double temp_t0 = 293.3;     // K
  double temp_d0 = 1400.0;    // MHz at t0
  double temp_slope = -0.1094;  // MHz/K
  double temp_delta0 = 2.0;   // MHz, reference detuning at t0
  int temp_sign = +1;
  bool has_temp_range = false;
  double temp_t_min = 0.0, temp_t_max = 0.0;
  std::vector<double> temp_grid;  // K

  std::string fit_input;  // CSV path

  std::string out_dir;  // empty -> "out" (CLI may fill from environment)
  std::string basename;

  /// Spin parameters with the detuning convention resolved; ex_override
  /// substitutes the transverse splitting (grids over Ex keep Delta fixed
  /// when the config specifies delta rather than omega).
  SpinParams spin(std::optional<double> ex_override = std::nullopt) const {
    SpinParams p;
    p.d = d;
    p.ex = ex_override.value_or(ex);
    p.rabi = rabi;
    p.omega = has_omega ? omega : p.d + p.ex - delta;
    return p;
  }

  bool stochastic() const {
    if (experiment == "fringes-vs-ex" || experiment == "t2-sweep") return true;
    const bool noisy =
        noise.sigma_pz > 0.0 || noise.sigma_bz > 0.0 || noise.b_max > 0.0;
    return noisy && (experiment == "ramsey" || experiment == "echo" ||
                     experiment == "rabi" || experiment == "estimate-temp");
  }
};

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
  std::size_t pos = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &pos);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + value + "'");
  }
  while (pos < value.size() && std::isspace(static_cast<unsigned char>(value[pos]))) ++pos;
  if (pos != value.size()) {
    throw ConfigError("config: key '" + key + "' has non-numeric value '" + value + "'");
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long out = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return static_cast<std::uint64_t>(out);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an unsigned integer, got '" +
                      value + "'");
  }
}

inline int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long out = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(out);
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' needs an integer, got '" + value + "'");
  }
}

inline std::string trim(const std::string& s) {
  std::size_t lo = 0, hi = s.size();
  while (lo < hi && std::isspace(static_cast<unsigned char>(s[lo]))) ++lo;
  while (hi > lo && std::isspace(static_cast<unsigned char>(s[hi - 1]))) --hi;
  return s.substr(lo, hi - lo);
}

// Grid value: either "start:step:stop" (inclusive) or a comma list.
inline std::vector<double> parse_grid(const std::string& key, const std::string& value) {
  std::vector<double> out;
  const auto n_colons = std::count(value.begin(), value.end(), ':');
  if (n_colons == 2) {
    const auto c1 = value.find(':');
    const auto c2 = value.find(':', c1 + 1);
    const double start = parse_double(key, trim(value.substr(0, c1)));
    const double step = parse_double(key, trim(value.substr(c1 + 1, c2 - c1 - 1)));
    const double stop = parse_double(key, trim(value.substr(c2 + 1)));
    if (!(step > 0.0) || stop < start) {
      throw ConfigError("config: key '" + key + "' has an invalid range '" + value + "'");
    }
    const auto count = static_cast<std::size_t>((stop - start) / step + 1e-9) + 1;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      out.push_back(start + step * static_cast<double>(i));
    }
    return out;
  }
  std::stringstream ss(value);
  std::string token;
  while (std::getline(ss, token, ',')) {
    token = trim(token);
    if (token.empty()) {
      throw ConfigError("config: key '" + key + "' has an empty grid element");
    }
    out.push_back(parse_double(key, token));
  }
  if (out.empty()) {
    throw ConfigError("config: key '" + key + "' has an empty grid");
  }
  return out;
}

inline const std::map<std::string, std::set<std::string>>& allowed_keys() {
  static const std::set<std::string> common = {"experiment", "seed", "out.dir",
                                               "out.basename"};
  static const std::set<std::string> spin = {"spin.d", "spin.ex", "spin.omega",
                                             "spin.delta", "spin.rabi"};
  static const std::set<std::string> trace = {
      "pulse.mode",     "tau.grid",       "noise.sigma_pz",
      "noise.sigma_bz", "noise.b_max",    "noise.projection",
      "ensemble.runs"};
  static const std::map<std::string, std::set<std::string>> table = [] {
    auto merge = [](std::initializer_list<const std::set<std::string>*> groups,
                    std::initializer_list<const char*> extra) {
      std::set<std::string> out;
      for (const auto* g : groups) out.insert(g->begin(), g->end());
      for (const char* k : extra) out.insert(k);
      return out;
    };
    std::map<std::string, std::set<std::string>> t;
    t["odmr"] = merge({&common, &spin}, {"odmr.b_gauss_grid"});
    t["rabi"] = merge({&common, &spin, &trace}, {});
    t["ramsey"] = merge({&common, &spin, &trace}, {});
    t["echo"] = merge({&common, &spin, &trace}, {});
    t["fringes-vs-ex"] = merge({&common, &spin, &trace}, {"fringes.ex_grid"});
    t["t2-sweep"] = merge({&common, &spin, &trace}, {"sweep.b_grid", "sweep.ex_values"});
    t["calibrate"] = merge({&common}, {"calib.kind", "calib.points"});
    t["estimate-temp"] =
        merge({&common, &spin, &trace},
              {"temp.t0", "temp.d0", "temp.slope", "temp.delta0", "temp.sign",
               "temp.t_min", "temp.t_max", "temp.grid"});
    t["fit"] = merge({&common}, {"fit.input"});
    return t;
  }();
  return table;
}

}  // namespace detail

/// Command-line overrides applied before final validation, so e.g. a seed
/// given with --seed satisfies the stochastic-seed requirement.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::optional<std::string> out_dir;
};

/// Parses the documented key-value config format. Unknown keys are rejected
/// by name; stochastic experiments must carry an explicit seed. When
/// expected_experiment is non-empty (CLI subcommand), a present experiment
/// key must match it.
inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& expected_experiment = "",
                                     const ConfigOverrides& overrides = {}) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " is not 'key = value': '" + line + "'");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw ConfigError("config: line " + std::to_string(line_no) +
                        " has an empty key or value");
    }
    if (kv.count(key)) {
      throw ConfigError("config: duplicate key '" + key + "'");
    }
    kv[key] = value;
  }

  ExperimentConfig cfg;
  if (kv.count("experiment")) {
    cfg.experiment = kv["experiment"];
  } else if (!expected_experiment.empty()) {
    cfg.experiment = expected_experiment;
  } else {
    throw ConfigError("config: missing required key 'experiment'");
  }
  if (!expected_experiment.empty() && cfg.experiment != expected_experiment) {
    throw ConfigError("config: experiment '" + cfg.experiment +
                      "' does not match subcommand '" + expected_experiment + "'");
  }
  const auto& table = detail::allowed_keys();
  const auto it = table.find(cfg.experiment);
  if (it == table.end()) {
    throw ConfigError("config: unknown experiment '" + cfg.experiment + "'");
  }
  for (const auto& [key, value] : kv) {
    if (!it->second.count(key)) {
      throw ConfigError("config: unknown key '" + key + "' for experiment '" +
                        cfg.experiment + "'");
    }
  }

  auto take = [&kv](const char* key) -> std::optional<std::string> {
    const auto found = kv.find(key);
    if (found == kv.end()) return std::nullopt;
    return found->second;
  };

  if (auto v = take("seed")) {
    cfg.seed = detail::parse_u64("seed", *v);
    cfg.seed_set = true;
  }
  if (auto v = take("out.dir")) cfg.out_dir = *v;
  if (auto v = take("out.basename")) cfg.basename = *v;
  if (cfg.basename.empty()) cfg.basename = cfg.experiment;

  if (auto v = take("spin.d")) cfg.d = detail::parse_double("spin.d", *v);
  if (auto v = take("spin.ex")) cfg.ex = detail::parse_double("spin.ex", *v);
  if (auto v = take("spin.rabi")) cfg.rabi = detail::parse_double("spin.rabi", *v);
  const auto omega_v = take("spin.omega");
  const auto delta_v = take("spin.delta");
  if (omega_v && delta_v) {
    throw ConfigError("config: give only one of 'spin.omega' and 'spin.delta'");
  }
  if (omega_v) {
    cfg.omega = detail::parse_double("spin.omega", *omega_v);
    cfg.has_omega = true;
  }
  if (delta_v) cfg.delta = detail::parse_double("spin.delta", *delta_v);

  if (auto v = take("pulse.mode")) {
    if (*v == "idealized") {
      cfg.idealized_pulses = true;
    } else if (*v == "finite") {
      cfg.idealized_pulses = false;
    } else {
      throw ConfigError("config: 'pulse.mode' must be 'idealized' or 'finite', got '" +
                        *v + "'");
    }
  }

  if (auto v = take("noise.sigma_pz"))
    cfg.noise.sigma_pz = detail::parse_double("noise.sigma_pz", *v);
  if (auto v = take("noise.sigma_bz"))
    cfg.noise.sigma_bz = detail::parse_double("noise.sigma_bz", *v);
  if (auto v = take("noise.b_max"))
    cfg.noise.b_max = detail::parse_double("noise.b_max", *v);
  if (auto v = take("noise.projection"))
    cfg.noise.projection = detail::parse_double("noise.projection", *v);
  if (auto v = take("ensemble.runs"))
    cfg.runs = detail::parse_int("ensemble.runs", *v);

  cfg.tau_grid = detail::parse_grid("tau.grid", take("tau.grid").value_or("0:0.02:5"));
  cfg.odmr_b_gauss = detail::parse_grid("odmr.b_gauss_grid",
                                        take("odmr.b_gauss_grid").value_or("-10:0.5:10"));
  cfg.fringes_ex = detail::parse_grid("fringes.ex_grid",
                                      take("fringes.ex_grid").value_or("0,1,4,16.5"));
  cfg.sweep_b = detail::parse_grid("sweep.b_grid",
                                   take("sweep.b_grid").value_or("0:0.2:2.2"));
  cfg.sweep_ex = detail::parse_grid("sweep.ex_values",
                                    take("sweep.ex_values").value_or("16.5,0"));

  if (auto v = take("calib.kind")) cfg.calib_kind = *v;
  if (auto v = take("calib.points")) cfg.calib_points = *v;
  if (auto v = take("temp.t0")) cfg.temp_t0 = detail::parse_double("temp.t0", *v);
  if (auto v = take("temp.d0")) cfg.temp_d0 = detail::parse_double("temp.d0", *v);
  if (auto v = take("temp.slope"))
    cfg.temp_slope = detail::parse_double("temp.slope", *v);
  if (auto v = take("temp.delta0"))
    cfg.temp_delta0 = detail::parse_double("temp.delta0", *v);
  if (auto v = take("temp.sign")) {
    cfg.temp_sign = detail::parse_int("temp.sign", *v);
    if (cfg.temp_sign != 1 && cfg.temp_sign != -1) {
      throw ConfigError("config: 'temp.sign' must be 1 or -1");
    }
  }
  const auto tmin_v = take("temp.t_min");
  const auto tmax_v = take("temp.t_max");
  if (tmin_v.has_value() != tmax_v.has_value()) {
    throw ConfigError("config: give both 'temp.t_min' and 'temp.t_max' or neither");
  }
  if (tmin_v) {
    cfg.temp_t_min = detail::parse_double("temp.t_min", *tmin_v);
    cfg.temp_t_max = detail::parse_double("temp.t_max", *tmax_v);
    cfg.has_temp_range = true;
  }
  if (auto v = take("temp.grid")) cfg.temp_grid = detail::parse_grid("temp.grid", *v);
  if (auto v = take("fit.input")) cfg.fit_input = *v;

  if (overrides.seed) {
    cfg.seed = *overrides.seed;
    cfg.seed_set = true;
  }
  if (overrides.runs) cfg.runs = *overrides.runs;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;

  // experiment-specific requirements
  if (cfg.experiment == "calibrate") {
    if (cfg.calib_kind.empty()) throw ConfigError("config: 'calib.kind' is required");
    if (cfg.calib_kind != "linear" && cfg.calib_kind != "polynomial") {
      throw ConfigError("config: 'calib.kind' must be 'linear' or 'polynomial'");
    }
    if (cfg.calib_points.empty()) throw ConfigError("config: 'calib.points' is required");
  }
  if (cfg.experiment == "estimate-temp" && cfg.temp_grid.empty()) {
    throw ConfigError("config: 'temp.grid' is required");
  }
  if (cfg.experiment == "fit" && cfg.fit_input.empty()) {
    throw ConfigError("config: 'fit.input' is required");
  }
  if (cfg.runs < 1) throw ConfigError("config: 'ensemble.runs' must be >= 1");
  try {
    cfg.noise.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: noise: ") + e.what());
  }
  if (cfg.stochastic() && !cfg.seed_set) {
    throw ConfigError("config: stochastic experiment '" + cfg.experiment +
                      "' requires an explicit 'seed' (no wall-clock seeding)");
  }
  return cfg;
}

struct ResultBundle {
  std::string primary_csv;
  std::string meta_json;
  std::string plot_csv;   // optional, empty when not emitted
  std::string extra_csv;  // fit parameters or calibration curve, when emitted
  std::string model_json; // calibrate only
  nlohmann::json metadata;
};

namespace detail {

inline std::string format_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open '" + path + "' for writing");
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ',';
      out_ << header[i];
    }
    out_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_num(values[i]);
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  if (!std::getline(in, line)) throw IoError("'" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) table.header.push_back(trim(cell));
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<double> row;
    std::stringstream rs(line);
    while (std::getline(rs, cell, ',')) {
      try {
        row.push_back(std::stod(trim(cell)));
      } catch (const std::exception&) {
        throw IoError("'" + path + "': non-numeric cell '" + cell + "'");
      }
    }
    if (row.size() != table.header.size()) {
      throw IoError("'" + path + "': row width does not match header");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline nlohmann::json grid_json(const std::vector<double>& grid) {
  nlohmann::json j = nlohmann::json::array();
  for (double v : grid) j.push_back(v);
  return j;
}

inline nlohmann::json echo_spin(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["d_mhz"] = cfg.d;
  j["ex_mhz"] = cfg.ex;
  j["rabi_mhz"] = cfg.rabi;
  if (cfg.has_omega) {
    j["omega_mhz"] = cfg.omega;
  } else {
    j["delta_mhz"] = cfg.delta;
    j["omega_mhz"] = cfg.spin().omega;  // resolved value
  }
  return j;
}

inline nlohmann::json echo_noise(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["sigma_pz_mhz"] = cfg.noise.sigma_pz;
  j["sigma_bz_mhz"] = cfg.noise.sigma_bz;
  j["b_max_mhz"] = cfg.noise.b_max;
  j["projection"] = cfg.noise.projection;
  return j;
}

inline nlohmann::json fit_json(const FitReport& rep) {
  nlohmann::json j;
  j["a"] = rep.model.a;
  j["b"] = rep.model.b;
  j["f_mhz"] = rep.model.f;
  j["f_se_mhz"] = rep.stderrs.f;
  j["phi_rad"] = rep.model.phi;
  j["t2_us"] = rep.model.t2;
  j["t2_se_us"] = rep.stderrs.t2;
  j["n"] = rep.model.n;
  j["converged"] = rep.converged;
  j["iterations"] = rep.iterations;
  j["decay_unresolved"] = rep.decay_unresolved;
  j["residual_norm"] = rep.residual_norm;
  return j;
}

inline void write_fit_csv(const std::string& path, const FitReport& rep) {
  CsvWriter w(path, {"a", "b", "f_mhz", "f_se_mhz", "phi_rad", "t2_us", "t2_se_us",
                     "n", "converged", "decay_unresolved", "residual_norm",
                     "iterations"});
  w.row({rep.model.a, rep.model.b, rep.model.f, rep.stderrs.f, rep.model.phi,
         rep.model.t2, rep.stderrs.t2, rep.model.n, rep.converged ? 1.0 : 0.0,
         rep.decay_unresolved ? 1.0 : 0.0, rep.residual_norm,
         static_cast<double>(rep.iterations)});
}

}  // namespace detail

/// Executes the configured experiment and writes its result bundle under the
/// configured output directory. Throws ConfigError/IoError/domain errors;
/// the CLI maps these to machine-readable error classes.
inline ResultBundle run_experiment(const ExperimentConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t_start = std::chrono::steady_clock::now();

  const std::string out_dir = cfg.out_dir.empty() ? "out" : cfg.out_dir;
  fs::create_directories(out_dir);
  const std::string base = (fs::path(out_dir) / cfg.basename).string();

  ResultBundle bundle;
  bundle.primary_csv = base + ".csv";
  bundle.meta_json = base + ".meta.json";

  nlohmann::json meta;
  meta["version"] = kVersion;
  meta["experiment"] = cfg.experiment;
  meta["seed"] = cfg.seed;
  meta["outputs"] = nlohmann::json::object();

  nlohmann::json echo;
  echo["experiment"] = cfg.experiment;
  echo["out.dir"] = out_dir;
  echo["out.basename"] = cfg.basename;

  const bool needs_spin = cfg.experiment != "calibrate" && cfg.experiment != "fit";
  if (needs_spin) {
    echo["spin"] = detail::echo_spin(cfg);
    echo["pulse.mode"] = cfg.idealized_pulses ? "idealized" : "finite";
    for (const auto& w : cfg.spin().warnings()) meta["warnings"].push_back(w);
  }

  auto run_ensemble = [&](const SpinParams& params, const NoiseSpec& spec,
                          SequenceKind kind) {
    EnsembleConfig ec;
    ec.n_runs = cfg.runs;
    ec.master_seed = cfg.seed;
    ec.tau_grid = cfg.tau_grid;
    return ensemble_average(params, spec, ec, kind, cfg.idealized_pulses);
  };

  if (cfg.experiment == "odmr") {
    echo["odmr.b_gauss_grid"] = detail::grid_json(cfg.odmr_b_gauss);
    detail::CsvWriter csv(bundle.primary_csv,
                          {"b_gauss", "bz_mhz", "f_minus_mhz", "f_plus_mhz"});
    const SpinParams params = cfg.spin();
    for (double b : cfg.odmr_b_gauss) {
      const double bz = b * kMhzPerGauss;
      const OdmrLines lines = odmr_lines(params, bz);
      csv.row({b, bz, lines.f_minus, lines.f_plus});
    }
    meta["mhz_per_gauss"] = kMhzPerGauss;
  } else if (cfg.experiment == "ramsey" || cfg.experiment == "echo" ||
             cfg.experiment == "rabi") {
    echo["tau.grid"] = detail::grid_json(cfg.tau_grid);
    echo["noise"] = detail::echo_noise(cfg);
    echo["ensemble.runs"] = cfg.runs;
    const SequenceKind kind = cfg.experiment == "ramsey" ? SequenceKind::ramsey
                              : cfg.experiment == "echo" ? SequenceKind::thermo_echo
                                                         : SequenceKind::rabi;
    const EnsembleSeries ens = run_ensemble(cfg.spin(), cfg.noise, kind);
    detail::CsvWriter csv(bundle.primary_csv, {"tau_us", "p0", "p0_se"});
    for (std::size_t i = 0; i < ens.tau.size(); ++i) {
      csv.row({ens.tau[i], ens.mean[i], ens.se[i]});
    }
    bundle.plot_csv = base + ".plot.csv";
    detail::CsvWriter plot(bundle.plot_csv, {"x", "y", "yerr"});
    for (std::size_t i = 0; i < ens.tau.size(); ++i) {
      plot.row({ens.tau[i], ens.mean[i], ens.se[i]});
    }
    try {
      const FitReport rep =
          fit_decayed_sinusoid(ens.series(), std::nullopt, weights_from_se(ens.se));
      meta["fit"] = detail::fit_json(rep);
      bundle.extra_csv = base + ".fit.csv";
      detail::write_fit_csv(bundle.extra_csv, rep);
    } catch (const NoOscillationError& e) {
      meta["fit"] = {{"status", "no_oscillation"}, {"message", e.what()}};
    }
  } else if (cfg.experiment == "fringes-vs-ex") {
    echo["tau.grid"] = detail::grid_json(cfg.tau_grid);
    echo["noise"] = detail::echo_noise(cfg);
    echo["ensemble.runs"] = cfg.runs;
    echo["fringes.ex_grid"] = detail::grid_json(cfg.fringes_ex);
    detail::CsvWriter csv(bundle.primary_csv, {"ex_mhz", "tau_us", "p0", "p0_se"});
    meta["fits"] = nlohmann::json::array();
    for (double ex : cfg.fringes_ex) {
      const EnsembleSeries ens =
          run_ensemble(cfg.spin(ex), cfg.noise, SequenceKind::ramsey);
      for (std::size_t i = 0; i < ens.tau.size(); ++i) {
        csv.row({ex, ens.tau[i], ens.mean[i], ens.se[i]});
      }
      nlohmann::json fj;
      fj["ex_mhz"] = ex;
      try {
        fj["fit"] = detail::fit_json(
            fit_decayed_sinusoid(ens.series(), std::nullopt, weights_from_se(ens.se)));
      } catch (const NoOscillationError& e) {
        fj["fit"] = {{"status", "no_oscillation"}, {"message", e.what()}};
      }
      meta["fits"].push_back(fj);
    }
  } else if (cfg.experiment == "t2-sweep") {
    echo["tau.grid"] = detail::grid_json(cfg.tau_grid);
    echo["noise"] = detail::echo_noise(cfg);
    echo["ensemble.runs"] = cfg.runs;
    echo["sweep.b_grid"] = detail::grid_json(cfg.sweep_b);
    echo["sweep.ex_values"] = detail::grid_json(cfg.sweep_ex);
    detail::CsvWriter csv(bundle.primary_csv,
                          {"ex_mhz", "b_applied_mhz", "b_eff_mhz", "t2_us", "t2_se_us",
                           "f_mhz", "f_se_mhz", "converged", "decay_unresolved"});
    for (double ex : cfg.sweep_ex) {
      std::vector<EnsembleSeries> ensembles;
      ensembles.reserve(cfg.sweep_b.size());
      for (double b_applied : cfg.sweep_b) {
        NoiseSpec spec = cfg.noise;
        spec.b_max = std::abs(project_applied_field(b_applied, cfg.noise));
        ensembles.push_back(run_ensemble(cfg.spin(ex), spec, SequenceKind::ramsey));
      }
      const std::vector<T2SweepRow> rows = t2_sweep(ensembles);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        csv.row({ex, cfg.sweep_b[i], rows[i].b_max, rows[i].t2, rows[i].t2_se,
                 rows[i].f, rows[i].f_se, rows[i].converged ? 1.0 : 0.0,
                 rows[i].decay_unresolved ? 1.0 : 0.0});
      }
    }
  } else if (cfg.experiment == "calibrate") {
    echo["calib.kind"] = cfg.calib_kind;
    echo["calib.points"] = cfg.calib_points;
    const detail::CsvTable table = detail::read_csv(cfg.calib_points);
    const int ct = table.column("t_k");
    const int cd = table.column("d_mhz");
    if (ct < 0 || cd < 0) {
      throw IoError("'" + cfg.calib_points + "': need columns 't_k' and 'd_mhz'");
    }
    std::vector<CalibrationPoint> points;
    points.reserve(table.rows.size());
    for (const auto& row : table.rows) {
      points.push_back({row[static_cast<std::size_t>(ct)],
                        row[static_cast<std::size_t>(cd)]});
    }
    const CalibrationModel model = fit_calibration(
        points, cfg.calib_kind == "linear" ? CalibrationModel::Kind::linear
                                           : CalibrationModel::Kind::polynomial);
    detail::CsvWriter csv(bundle.primary_csv,
                          {"t_k", "d_mhz", "d_fit_mhz", "residual_mhz"});
    for (const auto& pt : points) {
      const double fit_v = model.d_at(pt.temperature);
      csv.row({pt.temperature, pt.d, fit_v, pt.d - fit_v});
    }
    nlohmann::json mj;
    mj["kind"] = cfg.calib_kind;
    mj["t_min_k"] = model.t_min;
    mj["t_max_k"] = model.t_max;
    if (model.kind == CalibrationModel::Kind::linear) {
      mj["t0_k"] = model.t0;
      mj["d0_mhz"] = model.d0;
      mj["slope_mhz_per_k"] = model.slope;
    } else {
      mj["coeff"] = model.coeff;
    }
    meta["model"] = mj;
    bundle.model_json = base + ".model.json";
    std::ofstream mf(bundle.model_json, std::ios::binary);
    if (!mf) throw IoError("cannot open '" + bundle.model_json + "' for writing");
    mf << mj.dump(2) << '\n';
  } else if (cfg.experiment == "estimate-temp") {
    echo["tau.grid"] = detail::grid_json(cfg.tau_grid);
    echo["noise"] = detail::echo_noise(cfg);
    echo["ensemble.runs"] = cfg.runs;
    echo["temp.t0"] = cfg.temp_t0;
    echo["temp.d0"] = cfg.temp_d0;
    echo["temp.slope"] = cfg.temp_slope;
    echo["temp.delta0"] = cfg.temp_delta0;
    echo["temp.sign"] = cfg.temp_sign;
    echo["temp.grid"] = detail::grid_json(cfg.temp_grid);

    double lo = cfg.temp_t0, hi = cfg.temp_t0;
    for (double t : cfg.temp_grid) {
      lo = std::min(lo, t);
      hi = std::max(hi, t);
    }
    const double t_min = cfg.has_temp_range ? cfg.temp_t_min : lo - 10.0;
    const double t_max = cfg.has_temp_range ? cfg.temp_t_max : hi + 10.0;
    echo["temp.t_min"] = t_min;
    echo["temp.t_max"] = t_max;
    const CalibrationModel model =
        make_linear_calibration(cfg.temp_t0, cfg.temp_d0, cfg.temp_slope, t_min, t_max);

    // fixed drive: on reference detuning at t0
    const double omega_ref = cfg.temp_d0 + cfg.ex - cfg.temp_delta0;
    detail::CsvWriter csv(bundle.primary_csv,
                          {"t_set_k", "d_mhz", "f_fit_mhz", "f_se_mhz", "t_est_k",
                           "t_err_k", "extrapolated"});
    std::vector<double> t_set, f_fit;
    for (double t : cfg.temp_grid) {
      SpinParams params;
      params.d = model.d_at(t);
      params.ex = cfg.ex;
      params.omega = omega_ref;
      params.rabi = cfg.rabi;
      const EnsembleSeries ens = run_ensemble(params, cfg.noise, SequenceKind::ramsey);
      const FitReport rep =
          fit_decayed_sinusoid(ens.series(), std::nullopt, weights_from_se(ens.se));
      const TemperatureEstimate est = frequency_to_temperature(
          rep.model.f, omega_ref, cfg.ex, model, rep.stderrs.f, cfg.temp_sign);
      csv.row({t, params.d, rep.model.f, rep.stderrs.f, est.temperature,
               est.uncertainty, est.extrapolated ? 1.0 : 0.0});
      t_set.push_back(t);
      f_fit.push_back(cfg.temp_sign * rep.model.f);
    }
    meta["omega_ref_mhz"] = omega_ref;
    if (t_set.size() >= 2) {
      // recovered df/dT across the grid, to compare against the calibration slope
      double st = 0, sf = 0, stt = 0, stf = 0;
      for (std::size_t i = 0; i < t_set.size(); ++i) {
        st += t_set[i];
        sf += f_fit[i];
        stt += t_set[i] * t_set[i];
        stf += t_set[i] * f_fit[i];
      }
      const double n = static_cast<double>(t_set.size());
      meta["recovered_slope_mhz_per_k"] = (n * stf - st * sf) / (n * stt - st * st);
    }
  } else if (cfg.experiment == "fit") {
    echo["fit.input"] = cfg.fit_input;
    const detail::CsvTable table = detail::read_csv(cfg.fit_input);
    const int ct = table.column("tau_us");
    const int cp = table.column("p0");
    if (ct < 0 || cp < 0) {
      throw IoError("'" + cfg.fit_input + "': need columns 'tau_us' and 'p0'");
    }
    const int cse = table.column("p0_se");
    PopulationSeries series;
    std::vector<double> se;
    for (const auto& row : table.rows) {
      series.tau.push_back(row[static_cast<std::size_t>(ct)]);
      series.p0.push_back(row[static_cast<std::size_t>(cp)]);
      if (cse >= 0) se.push_back(row[static_cast<std::size_t>(cse)]);
    }
    const FitReport rep = fit_decayed_sinusoid(
        series, std::nullopt, cse >= 0 ? weights_from_se(se) : std::vector<double>{});
    detail::write_fit_csv(bundle.primary_csv, rep);
    meta["fit"] = detail::fit_json(rep);
  } else {
    throw ConfigError("config: unknown experiment '" + cfg.experiment + "'");
  }

  meta["config"] = echo;
  meta["outputs"]["primary_csv"] = bundle.primary_csv;
  if (!bundle.plot_csv.empty()) meta["outputs"]["plot_csv"] = bundle.plot_csv;
  if (!bundle.extra_csv.empty()) meta["outputs"]["fit_csv"] = bundle.extra_csv;
  if (!bundle.model_json.empty()) meta["outputs"]["model_json"] = bundle.model_json;
  const auto t_end = std::chrono::steady_clock::now();
  meta["wall_seconds"] =
      std::chrono::duration<double>(t_end - t_start).count();

  bundle.metadata = meta;
  std::ofstream mf(bundle.meta_json, std::ios::binary);
  if (!mf) throw IoError("cannot open '" + bundle.meta_json + "' for writing");
  mf << meta.dump(2) << '\n';
  return bundle;
}

}  // namespace sicsim
