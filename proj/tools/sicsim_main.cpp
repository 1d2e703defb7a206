// sicsim: spin-1 divacancy Ramsey-thermometry simulator CLI.
//
// Subcommands run one named experiment from a key-value config file and
// write a CSV table plus a JSON metadata sidecar. Standard output carries
// only a machine-readable result summary; progress and warnings go to
// standard error. Errors are reported as JSON on standard error with a
// machine-readable class and a nonzero exit code.

#include "sicsim/experiments.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

namespace {

struct SubcommandArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int runs = 0;
  bool runs_given = false;
  bool quiet = false;
};

int error_exit(const std::string& error_class, const std::string& message) {
  nlohmann::json err;
  err["error"]["class"] = error_class;
  err["error"]["message"] = message;
  std::cerr << err.dump() << std::endl;
  if (error_class == "config") return 2;
  if (error_class == "io") return 3;
  if (error_class == "domain" || error_class == "fit") return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sicsim: spin-1 divacancy Ramsey-thermometry simulator"};
  app.require_subcommand(1);

  const std::vector<std::pair<std::string, std::string>> experiments = {
      {"odmr", "ODMR line positions vs axial magnetic field"},
      {"rabi", "Rabi oscillation trace"},
      {"ramsey", "Ramsey fringes, optionally noise-averaged"},
      {"echo", "Thermo-Echo fringes (Ramsey with a mid-evolution 2pi pulse)"},
      {"fringes-vs-ex", "Noise-averaged Ramsey fringes over a grid of Ex"},
      {"t2-sweep", "Fitted T2* vs applied magnetic fluctuation amplitude"},
      {"calibrate", "Fit a D(T) calibration model to measured points"},
      {"estimate-temp", "Simulate fringes over temperatures and invert to T"},
      {"fit", "Fit the decayed-sinusoid model to a CSV time series"},
  };

  std::map<std::string, SubcommandArgs> args;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, description] : experiments) {
    CLI::App* sub = app.add_subcommand(name, description);
    SubcommandArgs& a = args[name];
    sub->add_option("--config", a.config_path, "config file path")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--out", a.out_dir, "output directory (overrides config)");
    sub->add_option("--seed", a.seed, "master seed (overrides config)");
    sub->add_option("--runs", a.runs, "ensemble run count (overrides config)");
    sub->add_flag("--quiet", a.quiet, "suppress progress output");
    subs[name] = sub;
  }

  CLI11_PARSE(app, argc, argv);

  std::string name;
  for (const auto& [n, sub] : subs) {
    if (sub->parsed()) {
      name = n;
      break;
    }
  }
  SubcommandArgs& a = args[name];
  a.seed_given = subs[name]->count("--seed") > 0;
  a.runs_given = subs[name]->count("--runs") > 0;

  try {
    std::ifstream in(a.config_path, std::ios::binary);
    if (!in) throw sicsim::IoError("cannot open config '" + a.config_path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();

    sicsim::ConfigOverrides overrides;
    if (a.seed_given) overrides.seed = a.seed;
    if (a.runs_given) overrides.runs = a.runs;
    if (!a.out_dir.empty()) overrides.out_dir = a.out_dir;

    sicsim::ExperimentConfig cfg =
        sicsim::parse_config(buffer.str(), name, overrides);
    if (cfg.out_dir.empty()) {
      if (const char* env = std::getenv("SICSIM_OUT_DIR")) cfg.out_dir = env;
    }

    if (!a.quiet) std::cerr << "running " << name << "...\n";
    const sicsim::ResultBundle bundle = sicsim::run_experiment(cfg);
    if (!a.quiet) {
      if (bundle.metadata.contains("warnings")) {
        for (const auto& w : bundle.metadata["warnings"]) {
          std::cerr << "warning: " << w.get<std::string>() << "\n";
        }
      }
      std::cerr << "wrote " << bundle.primary_csv << "\n";
    }

    nlohmann::json summary;
    summary["status"] = "ok";
    summary["experiment"] = name;
    summary["outputs"] = bundle.metadata["outputs"];
    std::cout << summary.dump() << std::endl;
    return 0;
  } catch (const sicsim::ConfigError& e) {
    return error_exit("config", e.what());
  } catch (const sicsim::IoError& e) {
    return error_exit("io", e.what());
  } catch (const sicsim::NoOscillationError& e) {
    return error_exit("fit", e.what());
  } catch (const std::domain_error& e) {
    return error_exit("domain", e.what());
  } catch (const std::invalid_argument& e) {
    return error_exit("domain", e.what());
  } catch (const std::exception& e) {
    return error_exit("internal", e.what());
  }
}
