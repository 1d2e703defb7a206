#pragma once

// Temperature calibration D(T) (linear or fifth-order polynomial), inversion
// of a fitted fringe frequency to temperature, and the shot-noise Ramsey
// sensitivity estimate.

#include "sicsim/spin_model.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sicsim {

struct CalibrationPoint {
  double temperature = 0.0;  // K
  double d = 0.0;            // MHz
};

struct AmbiguousRootsError : std::runtime_error {
  AmbiguousRootsError(const std::string& msg, std::vector<double> roots_in)
      : std::runtime_error(msg), roots(std::move(roots_in)) {}
  std::vector<double> roots;
};

/// D(T) model. Linear: D = d0 + slope (T - t0). Polynomial: D = sum c_k T^k,
/// degree 5, with a validity range equal to the hull of the fitted data.
struct CalibrationModel {
  enum class Kind { linear, polynomial };

  Kind kind = Kind::linear;
  double t0 = 0.0;     // K (linear reference)
  double d0 = 0.0;     // MHz at t0
  double slope = 0.0;  // MHz/K
  std::array<double, 6> coeff{};  // polynomial coefficients, c0..c5
  double t_min = 0.0;
  double t_max = 0.0;

  double d_at(double temperature) const {
    if (kind == Kind::linear) return d0 + slope * (temperature - t0);
    double acc = 0.0;
    for (int k = 5; k >= 0; --k) acc = acc * temperature + coeff[static_cast<std::size_t>(k)];
    return acc;
  }

  double dprime_at(double temperature) const {
    if (kind == Kind::linear) return slope;
    double acc = 0.0;
    for (int k = 5; k >= 1; --k) {
      acc = acc * temperature + k * coeff[static_cast<std::size_t>(k)];
    }
    return acc;
  }

  bool in_range(double temperature) const {
    return temperature >= t_min && temperature <= t_max;
  }
};

struct TemperatureEstimate {
  double temperature = 0.0;  // K
  double uncertainty = 0.0;  // K
  bool extrapolated = false;
  double f_fringe = 0.0;  // MHz, the input
  CalibrationModel::Kind kind = CalibrationModel::Kind::linear;
};

namespace detail {

inline void check_derivative_nonzero(const CalibrationModel& model) {
  // a sign change between samples means D'(T) crosses zero in the range
  const int n_samples = 1024;
  double prev = model.dprime_at(model.t_min);
  for (int i = 0; i <= n_samples; ++i) {
    const double t =
        model.t_min + (model.t_max - model.t_min) * i / static_cast<double>(n_samples);
    const double deriv = model.dprime_at(t);
    if (deriv == 0.0 || std::signbit(deriv) != std::signbit(prev)) {
      throw std::invalid_argument(
          "CalibrationModel: derivative vanishes inside the validity range");
    }
    prev = deriv;
  }
}

}  // namespace detail

inline CalibrationModel make_linear_calibration(double t0, double d0, double slope,
                                                double t_min, double t_max) {
  if (slope == 0.0 || !std::isfinite(slope)) {
    throw std::invalid_argument("CalibrationModel: linear slope must be nonzero");
  }
  CalibrationModel model;
  model.kind = CalibrationModel::Kind::linear;
  model.t0 = t0;
  model.d0 = d0;
  model.slope = slope;
  model.t_min = t_min;
  model.t_max = t_max;
  return model;
}

/// Least-squares calibration fit. Linear needs >= 2 distinct temperatures;
/// the fifth-order polynomial needs >= 7 points and >= 6 distinct
/// temperatures. The validity range is the data hull.
inline CalibrationModel fit_calibration(const std::vector<CalibrationPoint>& points,
                                        CalibrationModel::Kind kind) {
  std::set<double> distinct;
  double t_min = 0.0, t_max = 0.0;
  for (const auto& pt : points) {
    if (!std::isfinite(pt.temperature) || !std::isfinite(pt.d)) {
      throw std::invalid_argument("fit_calibration: non-finite point");
    }
    if (distinct.empty()) {
      t_min = t_max = pt.temperature;
    } else {
      t_min = std::min(t_min, pt.temperature);
      t_max = std::max(t_max, pt.temperature);
    }
    distinct.insert(pt.temperature);
  }

  if (kind == CalibrationModel::Kind::linear) {
    if (points.size() < 2) {
      throw std::invalid_argument("fit_calibration: linear needs >= 2 points");
    }
    if (distinct.size() < 2) {
      throw std::invalid_argument(
          "fit_calibration: rank-deficient design, temperatures not distinct");
    }
    double st = 0, sd = 0;
    for (const auto& pt : points) {
      st += pt.temperature;
      sd += pt.d;
    }
    const double n = static_cast<double>(points.size());
    const double t_mean = st / n, d_mean = sd / n;
    double num = 0, den = 0;
    for (const auto& pt : points) {
      num += (pt.temperature - t_mean) * (pt.d - d_mean);
      den += (pt.temperature - t_mean) * (pt.temperature - t_mean);
    }
    return make_linear_calibration(t_mean, d_mean, num / den, t_min, t_max);
  }

  if (points.size() < 7) {
    throw std::invalid_argument("fit_calibration: fifth-order needs >= 7 points");
  }
  if (distinct.size() < 6) {
    throw std::invalid_argument(
        "fit_calibration: rank-deficient design, need >= 6 distinct temperatures");
  }

  // Fit in the centered, scaled variable u = (T - tc)/ts for conditioning,
  // then expand back to raw coefficients in T.
  const double tc = 0.5 * (t_min + t_max);
  const double ts = std::max(0.5 * (t_max - t_min), 1e-12);
  const auto rows = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd design(rows, 6);
  Eigen::VectorXd rhs(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double u = (points[static_cast<std::size_t>(i)].temperature - tc) / ts;
    double up = 1.0;
    for (int k = 0; k < 6; ++k) {
      design(i, k) = up;
      up *= u;
    }
    rhs(i) = points[static_cast<std::size_t>(i)].d;
  }
  const Eigen::VectorXd cu = design.colPivHouseholderQr().solve(rhs);

  // Horner composition with u = (T - tc)/ts expands to raw T coefficients.
  std::array<double, 6> raw{};
  for (int k = 5; k >= 0; --k) {
    std::array<double, 6> next{};
    for (int j = 5; j >= 1; --j) {
      next[static_cast<std::size_t>(j)] =
          raw[static_cast<std::size_t>(j)] * (-tc / ts) +
          raw[static_cast<std::size_t>(j - 1)] / ts;
    }
    next[0] = raw[0] * (-tc / ts) + cu(k);
    raw = next;
  }

  CalibrationModel model;
  model.kind = CalibrationModel::Kind::polynomial;
  model.coeff = raw;
  model.t_min = t_min;
  model.t_max = t_max;
  detail::check_derivative_nonzero(model);
  return model;
}

/// Inverts the fitted fringe frequency to temperature by solving
/// D(T) = sign * f_fringe + omega - Ex. Linear models invert in closed form
/// (out-of-range results are flagged, not rejected); polynomial models are
/// solved by bisection on the validity range, erroring when no root or
/// several roots exist there. Uncertainty is f_stderr / |D'(T)|.
inline TemperatureEstimate frequency_to_temperature(double f_fringe, double omega,
                                                    double ex,
                                                    const CalibrationModel& model,
                                                    double f_stderr = 0.0,
                                                    int detuning_sign = +1) {
  if (!(f_fringe >= 0.0) || !std::isfinite(f_fringe)) {
    throw std::invalid_argument("frequency_to_temperature: f_fringe must be >= 0");
  }
  if (f_stderr < 0.0) {
    throw std::invalid_argument("frequency_to_temperature: f_stderr must be >= 0");
  }
  if (detuning_sign != 1 && detuning_sign != -1) {
    throw std::invalid_argument("frequency_to_temperature: sign must be +-1");
  }
  const double d_target = detuning_sign * f_fringe + omega - ex;

  TemperatureEstimate estimate;
  estimate.f_fringe = f_fringe;
  estimate.kind = model.kind;

  double t_root = 0.0;
  if (model.kind == CalibrationModel::Kind::linear) {
    t_root = model.t0 + (d_target - model.d0) / model.slope;
  } else {
    const int n_cells = 512;
    std::vector<double> roots;
    double prev_t = model.t_min;
    double prev_g = model.d_at(prev_t) - d_target;
    if (prev_g == 0.0) roots.push_back(prev_t);
    for (int i = 1; i <= n_cells; ++i) {
      const double t =
          model.t_min + (model.t_max - model.t_min) * i / static_cast<double>(n_cells);
      const double g = model.d_at(t) - d_target;
      if (g == 0.0) {
        roots.push_back(t);
      } else if (prev_g != 0.0 && std::signbit(g) != std::signbit(prev_g)) {
        double lo = prev_t, hi = t, g_lo = prev_g;
        for (int it = 0; it < 200; ++it) {
          const double mid = 0.5 * (lo + hi);
          const double g_mid = model.d_at(mid) - d_target;
          if (std::signbit(g_mid) == std::signbit(g_lo)) {
            lo = mid;
            g_lo = g_mid;
          } else {
            hi = mid;
          }
        }
        roots.push_back(0.5 * (lo + hi));
      }
      prev_t = t;
      prev_g = g;
    }
    if (roots.empty()) {
      std::ostringstream msg;
      msg << "frequency_to_temperature: no root of D(T) = " << d_target
          << " MHz in validity range [" << model.t_min << ", " << model.t_max
          << "] K";
      throw std::domain_error(msg.str());
    }
    if (roots.size() > 1) {
      std::ostringstream msg;
      msg << "frequency_to_temperature: inversion is ambiguous, roots at";
      for (double r : roots) msg << ' ' << r << " K";
      throw AmbiguousRootsError(msg.str(), roots);
    }
    t_root = roots.front();
  }

  estimate.temperature = t_root;
  estimate.extrapolated = !model.in_range(t_root);
  const double deriv = model.dprime_at(t_root);
  estimate.uncertainty = deriv != 0.0 ? f_stderr / std::abs(deriv) : 0.0;
  return estimate;
}

/// Shot-noise-limited Ramsey sensitivity
///   eta = 1 / (2 pi |slope| contrast sqrt(rate t2)),
/// reported in K per sqrt(Hz). This is the standard estimator, not a
/// formula from the calibration data itself.
inline double sensitivity_estimate(double slope_mhz_per_k, double t2_us,
                                   double contrast, double rate_per_s) {
  if (!(slope_mhz_per_k != 0.0) || !(std::abs(slope_mhz_per_k) > 0.0) ||
      !(t2_us > 0.0) || !(contrast > 0.0) || !(rate_per_s > 0.0)) {
    throw std::domain_error("sensitivity_estimate: all inputs must be > 0 (slope nonzero)");
  }
  const double slope_hz_per_k = std::abs(slope_mhz_per_k) * 1e6;
  const double t2_s = t2_us * 1e-6;
  return 1.0 / (2.0 * kPi * slope_hz_per_k * contrast * std::sqrt(rate_per_s * t2_s));
}

/// contrast * sqrt(rate) required to reach a target sensitivity; the
/// plausibility companion of sensitivity_estimate.
inline double required_contrast_sqrt_rate(double eta_target, double slope_mhz_per_k,
                                          double t2_us) {
  if (!(eta_target > 0.0) || !(std::abs(slope_mhz_per_k) > 0.0) || !(t2_us > 0.0)) {
    throw std::domain_error("required_contrast_sqrt_rate: inputs must be > 0");
  }
  const double slope_hz_per_k = std::abs(slope_mhz_per_k) * 1e6;
  const double t2_s = t2_us * 1e-6;
  return 1.0 / (eta_target * 2.0 * kPi * slope_hz_per_k * std::sqrt(t2_s));
}

}  // namespace sicsim
