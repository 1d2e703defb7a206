#include "sicsim/experiments.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sicsim;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string temp_dir(const std::string& tag) {
  const fs::path dir = fs::temp_directory_path() / ("sicsim_test_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

}  // namespace

TEST_CASE("minimal ramsey config gets documented defaults") {
  const ExperimentConfig cfg = parse_config(
      "experiment = ramsey\n"
      "spin.delta = 2\n"
      "tau.grid = 0:0.02:3\n");
  REQUIRE(cfg.experiment == "ramsey");
  REQUIRE(cfg.d == 1400.0);
  REQUIRE(cfg.ex == 16.5);
  REQUIRE(cfg.rabi == 1.0);
  REQUIRE(cfg.spin().omega == Catch::Approx(1400.0 + 16.5 - 2.0));
  REQUIRE(cfg.runs == 1);
  REQUIRE(cfg.idealized_pulses);
  REQUIRE(cfg.noise.sigma_pz == 0.0);
  REQUIRE(cfg.noise.projection == Catch::Approx(std::cos(109.5 * kPi / 180.0)));
  REQUIRE(cfg.tau_grid.size() == 151);
  REQUIRE(cfg.tau_grid.front() == 0.0);
  REQUIRE(cfg.tau_grid.back() == Catch::Approx(3.0));
}

TEST_CASE("unknown keys are rejected by name") {
  try {
    parse_config("experiment = ramsey\nsigma_bz_typo = 0.2\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("sigma_bz_typo") != std::string::npos);
  }
  // keys from a different experiment are unknown here as well
  REQUIRE_THROWS_AS(parse_config("experiment = ramsey\nsweep.b_grid = 0:0.5:2\n"),
                    ConfigError);
}

TEST_CASE("stochastic experiments need an explicit seed") {
  REQUIRE_THROWS_AS(parse_config("experiment = fringes-vs-ex\n"), ConfigError);
  REQUIRE_THROWS_AS(
      parse_config("experiment = ramsey\nnoise.sigma_bz = 0.2\nensemble.runs = 10\n"),
      ConfigError);
  // noiseless ramsey is deterministic, no seed needed
  REQUIRE_NOTHROW(parse_config("experiment = ramsey\n"));
  // a seed override satisfies the requirement
  ConfigOverrides ov;
  ov.seed = 7;
  REQUIRE_NOTHROW(parse_config("experiment = fringes-vs-ex\n", "", ov));
}

TEST_CASE("config oddities are rejected with the offending field named") {
  REQUIRE_THROWS_AS(parse_config("experiment = ramsey\nspin.d = abc\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config("experiment = ramsey\ntau.grid = 5:0.1:0\n"),
                    ConfigError);
  REQUIRE_THROWS_AS(parse_config("experiment = ramsey\nensemble.runs = 0\n"),
                    ConfigError);
  REQUIRE_THROWS_AS(
      parse_config("experiment = ramsey\nspin.omega = 1414\nspin.delta = 2\n"),
      ConfigError);
  REQUIRE_THROWS_AS(parse_config("experiment = ramsey\nspin.d = 1\nspin.d = 2\n"),
                    ConfigError);
  REQUIRE_THROWS_AS(parse_config("experiment = nope\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config(""), ConfigError);
}

TEST_CASE("grid syntax accepts ranges and lists") {
  const ExperimentConfig a =
      parse_config("experiment = fringes-vs-ex\nseed = 1\nfringes.ex_grid = 0,1,4,16.5\n");
  REQUIRE(a.fringes_ex == std::vector<double>{0.0, 1.0, 4.0, 16.5});
  const ExperimentConfig b =
      parse_config("experiment = ramsey\ntau.grid = 1:0.5:2\n");
  REQUIRE(b.tau_grid == std::vector<double>{1.0, 1.5, 2.0});
}

TEST_CASE("t2-sweep config echoes the projection") {
  const std::string dir = temp_dir("sweep_echo");
  const ExperimentConfig cfg = parse_config(
      "experiment = t2-sweep\n"
      "seed = 11\n"
      "ensemble.runs = 8\n"
      "tau.grid = 0:0.1:3\n"
      "sweep.b_grid = 0,1\n"
      "sweep.ex_values = 16.5\n"
      "noise.sigma_pz = 0.125\n"
      "out.dir = " + dir + "\n");
  const ResultBundle bundle = run_experiment(cfg);
  const auto& echo = bundle.metadata["config"];
  REQUIRE(echo["noise"]["projection"].get<double>() ==
          Catch::Approx(std::cos(109.5 * kPi / 180.0)));
  REQUIRE(echo["ensemble.runs"].get<int>() == 8);
  // every effective parameter shows up even though defaulted
  REQUIRE(echo["spin"].contains("d_mhz"));
  REQUIRE(echo["spin"].contains("rabi_mhz"));
  REQUIRE(echo.contains("pulse.mode"));
}

TEST_CASE("noiseless ramsey run emits a trace whose fitted f is the detuning") {
  const std::string dir = temp_dir("ramsey_fit");
  const ExperimentConfig cfg = parse_config(
      "experiment = ramsey\n"
      "spin.delta = 2\n"
      "tau.grid = 0:0.02:3\n"
      "out.dir = " + dir + "\n");
  const ResultBundle bundle = run_experiment(cfg);
  REQUIRE(fs::exists(bundle.primary_csv));
  REQUIRE(fs::exists(bundle.meta_json));
  REQUIRE(fs::exists(bundle.extra_csv));
  const double f = bundle.metadata["fit"]["f_mhz"].get<double>();
  REQUIRE(f == Catch::Approx(2.0).margin(1e-3));
  const std::string csv = slurp(bundle.primary_csv);
  REQUIRE(csv.rfind("tau_us,p0,p0_se\n", 0) == 0);
  REQUIRE(csv.find("\r") == std::string::npos);  // LF endings
}

TEST_CASE("identical config and seed give byte-identical primary CSV") {
  const std::string dir_a = temp_dir("det_a");
  const std::string dir_b = temp_dir("det_b");
  const std::string base =
      "experiment = ramsey\n"
      "seed = 99\n"
      "ensemble.runs = 32\n"
      "noise.sigma_bz = 0.2\n"
      "spin.ex = 4\n"
      "tau.grid = 0:0.05:3\n";
  const ResultBundle a = run_experiment(parse_config(base + "out.dir = " + dir_a + "\n"));
  const ResultBundle b = run_experiment(parse_config(base + "out.dir = " + dir_b + "\n"));
  REQUIRE(slurp(a.primary_csv) == slurp(b.primary_csv));
}

TEST_CASE("odmr experiment rows match the line formula") {
  const std::string dir = temp_dir("odmr");
  const ExperimentConfig cfg = parse_config(
      "experiment = odmr\n"
      "odmr.b_gauss_grid = -10:5:10\n"
      "out.dir = " + dir + "\n");
  const ResultBundle bundle = run_experiment(cfg);
  const detail::CsvTable table = detail::read_csv(bundle.primary_csv);
  REQUIRE(table.rows.size() == 5);
  const SpinParams p = cfg.spin();
  for (const auto& row : table.rows) {
    const OdmrLines lines = odmr_lines(p, row[0] * kMhzPerGauss);
    REQUIRE(row[2] == Catch::Approx(lines.f_minus).margin(1e-9));
    REQUIRE(row[3] == Catch::Approx(lines.f_plus).margin(1e-9));
  }
}

TEST_CASE("calibrate and estimate-temp round trip through files") {
  const std::string dir = temp_dir("thermo_flow");
  const std::string points_csv = dir + "/points.csv";
  {
    std::ofstream out(points_csv, std::ios::binary);
    out.precision(15);
    out << "t_k,d_mhz\n";
    for (int i = 0; i <= 10; ++i) {
      const double t = 288.0 + 2.0 * i;
      out << t << ',' << 1400.0 - 0.1094 * (t - 293.3) << "\n";
    }
  }
  const ResultBundle cal = run_experiment(parse_config(
      "experiment = calibrate\n"
      "calib.kind = linear\n"
      "calib.points = " + points_csv + "\n"
      "out.dir = " + dir + "\n"));
  REQUIRE(fs::exists(cal.model_json));
  REQUIRE(cal.metadata["model"]["slope_mhz_per_k"].get<double>() ==
          Catch::Approx(-0.1094).margin(1e-9));

  const ResultBundle est = run_experiment(parse_config(
      "experiment = estimate-temp\n"
      "temp.t0 = 293.3\n"
      "temp.d0 = 1400\n"
      "temp.slope = -0.1094\n"
      "temp.grid = 294,300\n"
      "tau.grid = 0:0.01:3\n"
      "out.dir = " + dir + "\n"));
  const detail::CsvTable table = detail::read_csv(est.primary_csv);
  REQUIRE(table.rows.size() == 2);
  const int t_est = table.column("t_est_k");
  REQUIRE(table.rows[0][static_cast<std::size_t>(t_est)] ==
          Catch::Approx(294.0).margin(0.05));
  REQUIRE(table.rows[1][static_cast<std::size_t>(t_est)] ==
          Catch::Approx(300.0).margin(0.05));
  REQUIRE(est.metadata["recovered_slope_mhz_per_k"].get<double>() ==
          Catch::Approx(-0.1094).epsilon(0.01));
}

TEST_CASE("fit experiment consumes the documented CSV schema") {
  const std::string dir = temp_dir("fit_exp");
  const std::string series_csv = dir + "/series.csv";
  {
    std::ofstream out(series_csv, std::ios::binary);
    out.precision(15);
    out << "tau_us,p0\n";
    for (int i = 0; i <= 300; ++i) {
      const double t = 0.02 * i;
      out << t << ','
          << 0.5 - 0.5 * std::exp(-std::pow(t / 2.2, 2.0)) *
                       std::cos(2.0 * kPi * 2.0 * t)
          << "\n";
    }
  }
  const ResultBundle bundle = run_experiment(parse_config(
      "experiment = fit\n"
      "fit.input = " + series_csv + "\n"
      "out.dir = " + dir + "\n"));
  REQUIRE(bundle.metadata["fit"]["f_mhz"].get<double>() ==
          Catch::Approx(2.0).margin(1e-4));
  REQUIRE(bundle.metadata["fit"]["t2_us"].get<double>() ==
          Catch::Approx(2.2).epsilon(1e-3));
}

TEST_CASE("experiments only write their declared outputs") {
  const std::string dir = temp_dir("declared");
  const ResultBundle bundle = run_experiment(parse_config(
      "experiment = ramsey\n"
      "tau.grid = 0:0.05:2\n"
      "out.dir = " + dir + "\n"));
  std::set<std::string> declared = {bundle.primary_csv, bundle.meta_json};
  if (!bundle.plot_csv.empty()) declared.insert(bundle.plot_csv);
  if (!bundle.extra_csv.empty()) declared.insert(bundle.extra_csv);
  for (const auto& entry : fs::directory_iterator(dir)) {
    REQUIRE(declared.count(entry.path().string()) == 1);
  }
}
