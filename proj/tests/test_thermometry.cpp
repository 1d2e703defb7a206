#include "sicsim/thermometry.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace sicsim;

TEST_CASE("linear calibration fit") {
  SECTION("two points reproduce the -109.4 kHz/K slope") {
    const std::vector<CalibrationPoint> pts = {{293.0, 1400.0},
                                               {303.0, 1400.0 - 1.094}};
    const CalibrationModel model =
        fit_calibration(pts, CalibrationModel::Kind::linear);
    REQUIRE(model.slope == Catch::Approx(-0.1094).margin(1e-12));
    REQUIRE(model.d_at(293.0) == Catch::Approx(1400.0).margin(1e-9));
  }
  SECTION("insufficient or degenerate points are rejected") {
    REQUIRE_THROWS_AS(fit_calibration({{293.0, 1400.0}},
                                      CalibrationModel::Kind::linear),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(fit_calibration({{293.0, 1400.0}, {293.0, 1399.0}},
                                      CalibrationModel::Kind::linear),
                      std::invalid_argument);
  }
}

TEST_CASE("fifth-order calibration round trip") {
  // benign synthetic coefficients over a cryostat-to-room-temperature range
  const std::array<double, 6> truth = {2875.0, -0.11, 8e-5, -4e-7, 5e-10, -3e-13};
  std::vector<CalibrationPoint> pts;
  for (int i = 0; i <= 28; ++i) {
    const double t = 20.0 + 10.0 * i;
    double d = 0.0;
    for (int k = 5; k >= 0; --k) d = d * t + truth[static_cast<std::size_t>(k)];
    pts.push_back({t, d});
  }
  const CalibrationModel model =
      fit_calibration(pts, CalibrationModel::Kind::polynomial);
  for (std::size_t k = 0; k < 6; ++k) {
    CAPTURE(k, model.coeff[k], truth[k]);
    REQUIRE(std::abs(model.coeff[k] - truth[k]) <= 1e-8 * std::abs(truth[k]));
  }
  REQUIRE_THROWS_AS(
      fit_calibration({pts[0], pts[1], pts[2], pts[3], pts[4], pts[5]},
                      CalibrationModel::Kind::polynomial),
      std::invalid_argument);
}

TEST_CASE("polynomial with a vanishing derivative is rejected") {
  // D(T) = (T - 160)^2 + const has D'(160) = 0 inside the range
  std::vector<CalibrationPoint> pts;
  for (int i = 0; i <= 10; ++i) {
    const double t = 100.0 + 12.0 * i;
    pts.push_back({t, 2800.0 + (t - 160.0) * (t - 160.0) * 1e-4});
  }
  REQUIRE_THROWS_AS(fit_calibration(pts, CalibrationModel::Kind::polynomial),
                    std::invalid_argument);
}

TEST_CASE("temperature inversion, linear model") {
  const CalibrationModel model =
      make_linear_calibration(293.3, 1400.0, -0.1082, 280.0, 320.0);
  const double ex = 16.5;
  const double omega = 1400.0 + ex - 2.0;  // reference detuning 2 MHz at t0

  SECTION("reference fringe returns t0 exactly") {
    const TemperatureEstimate est = frequency_to_temperature(2.0, omega, ex, model);
    REQUIRE(est.temperature == Catch::Approx(293.3).margin(1e-12));
    REQUIRE_FALSE(est.extrapolated);
  }
  SECTION("a -108.2 kHz fringe shift reads one kelvin warmer") {
    const TemperatureEstimate est =
        frequency_to_temperature(2.0 - 0.1082, omega, ex, model);
    REQUIRE(est.temperature == Catch::Approx(294.3).margin(1e-9));
  }
  SECTION("uncertainty propagates through |dT/df|") {
    const TemperatureEstimate est =
        frequency_to_temperature(2.0, omega, ex, model, 0.001);
    REQUIRE(est.uncertainty == Catch::Approx(0.001 / 0.1082).margin(1e-9));
  }
  SECTION("out-of-range linear inversions are flagged, not rejected") {
    const TemperatureEstimate est =
        frequency_to_temperature(2.0 + 0.1082 * 100.0, omega, ex, model);
    REQUIRE(est.extrapolated);
  }
  SECTION("bad inputs") {
    REQUIRE_THROWS_AS(frequency_to_temperature(-1.0, omega, ex, model),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(frequency_to_temperature(2.0, omega, ex, model, -0.1),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(frequency_to_temperature(2.0, omega, ex, model, 0.0, 3),
                      std::invalid_argument);
  }
}

TEST_CASE("temperature inversion, polynomial model") {
  const std::array<double, 6> truth = {2875.0, -0.11, 8e-5, -4e-7, 5e-10, -3e-13};
  std::vector<CalibrationPoint> pts;
  for (int i = 0; i <= 28; ++i) {
    const double t = 20.0 + 10.0 * i;
    double d = 0.0;
    for (int k = 5; k >= 0; --k) d = d * t + truth[static_cast<std::size_t>(k)];
    pts.push_back({t, d});
  }
  const CalibrationModel model =
      fit_calibration(pts, CalibrationModel::Kind::polynomial);
  const double ex = 16.5;
  const double omega = model.d_at(250.0) + ex - 2.0;

  SECTION("forward-inverse consistency to 1e-6 K") {
    for (double t_true : {40.0, 120.0, 250.0, 295.0}) {
      const double delta = model.d_at(t_true) - omega + ex;
      const int sign = delta >= 0.0 ? +1 : -1;  // fringe frequency is |Delta|
      const TemperatureEstimate est =
          frequency_to_temperature(std::abs(delta), omega, ex, model, 0.0, sign);
      REQUIRE(est.temperature == Catch::Approx(t_true).margin(1e-6));
    }
  }
  SECTION("no root in the validity range") {
    REQUIRE_THROWS_AS(frequency_to_temperature(500.0, omega, ex, model),
                      std::domain_error);
  }
}

TEST_CASE("ambiguous polynomial inversion lists all roots") {
  // hand-built non-monotone model (fit_calibration would reject it)
  CalibrationModel model;
  model.kind = CalibrationModel::Kind::polynomial;
  model.coeff = {0.0, 0.0, 1e-4, 0.0, 0.0, 0.0};  // D = 1e-4 T^2
  model.t_min = -100.0;
  model.t_max = 100.0;
  try {
    frequency_to_temperature(0.25, 0.0, 0.0, model);  // D target 0.25, T = +-50
    FAIL("expected AmbiguousRootsError");
  } catch (const AmbiguousRootsError& e) {
    REQUIRE(e.roots.size() == 2);
    REQUIRE(e.roots[0] == Catch::Approx(-50.0).margin(1e-3));
    REQUIRE(e.roots[1] == Catch::Approx(50.0).margin(1e-3));
  }
}

TEST_CASE("sensitivity estimate scaling laws") {
  const double eta = sensitivity_estimate(0.1094, 2.2, 0.02, 1e5);
  REQUIRE(sensitivity_estimate(0.1094, 4.4, 0.02, 1e5) ==
          Catch::Approx(eta / std::sqrt(2.0)).epsilon(1e-12));
  REQUIRE(sensitivity_estimate(0.2188, 2.2, 0.02, 1e5) ==
          Catch::Approx(eta / 2.0).epsilon(1e-12));
  REQUIRE(sensitivity_estimate(0.1094, 2.2, 0.04, 1e5) ==
          Catch::Approx(eta / 2.0).epsilon(1e-12));
  REQUIRE_THROWS_AS(sensitivity_estimate(0.0, 2.2, 0.02, 1e5), std::domain_error);
  REQUIRE_THROWS_AS(sensitivity_estimate(0.1, -1.0, 0.02, 1e5), std::domain_error);

  // required contrast*sqrt(rate) for a 205.6 mK/sqrt(Hz) target closes the loop
  const double cs = required_contrast_sqrt_rate(0.2056, 0.1094, 2.2);
  const double eta_back = 1.0 / (2.0 * kPi * 0.1094e6 * cs * std::sqrt(2.2e-6));
  REQUIRE(eta_back == Catch::Approx(0.2056).epsilon(1e-9));
}
