#pragma once

// Decayed-sinusoid estimation: periodogram seeding and damped least-squares
// fitting of  m(t) = a exp[-(t/T2)^n] cos(2 pi f t + phi) + b,
// plus the T2*-vs-noise-amplitude sweep built on it.

#include "sicsim/noise.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <optional>
#include <stdexcept>
#include <vector>

namespace sicsim {

struct NoOscillationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitModel {
  double a = 0.0;    ///< amplitude
  double b = 0.0;    ///< offset
  double f = 0.0;    ///< frequency, MHz
  double phi = 0.0;  ///< phase, rad
  double t2 = 1.0;   ///< dephasing time, us
  double n = 1.0;    ///< stretch exponent
};

inline constexpr double kT2UpperBound = 1e3;  // us
inline constexpr double kT2LowerBound = 1e-6;
inline constexpr double kStretchMin = 0.5;
inline constexpr double kStretchMax = 4.0;

inline double eval_decayed_sinusoid(const FitModel& m, double t) {
  const double x = t / m.t2;
  const double envelope = x > 0.0 ? std::exp(-std::pow(x, m.n)) : 1.0;
  return m.a * envelope * std::cos(2.0 * kPi * m.f * t + m.phi) + m.b;
}

struct FitReport {
  FitModel model;
  FitModel stderrs;          // per-parameter standard errors (same layout)
  double residual_norm = 0;  // sqrt(sum of squared weighted residuals)
  bool converged = false;
  int iterations = 0;
  bool decay_unresolved = false;  // t2 ran into the upper bound
};

namespace detail {

inline bool grid_is_uniform(const std::vector<double>& t) {
  if (t.size() < 2) return false;
  const double dt = t[1] - t[0];
  const double span = t.back() - t.front();
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-9 * std::max(span, 1.0)) return false;
  }
  return true;
}

// Direct periodogram power |sum (y - mean) e^{-2 pi i f t}|^2 at one frequency.
inline double periodogram_power(const std::vector<double>& t,
                                const std::vector<double>& yc, double f) {
  std::complex<double> z = 0.0;
  for (std::size_t j = 0; j < t.size(); ++j) {
    z += yc[j] * std::polar(1.0, -2.0 * kPi * f * t[j]);
  }
  return std::norm(z);
}

// Envelope of the centered signal: magnitude of the analytic signal (DFT
// Hilbert transform) on uniform grids, |y - b| otherwise.
inline std::vector<double> envelope_estimate(const std::vector<double>& t,
                                             const std::vector<double>& yc) {
  const std::size_t n = yc.size();
  std::vector<double> env(n);
  if (!grid_is_uniform(t)) {
    for (std::size_t j = 0; j < n; ++j) env[j] = std::abs(yc[j]);
    return env;
  }
  std::vector<std::complex<double>> spectrum(n);
  for (std::size_t k = 0; k < n; ++k) {
    std::complex<double> z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      z += yc[j] * std::polar(1.0, -2.0 * kPi * static_cast<double>(j * k) /
                                       static_cast<double>(n));
    }
    spectrum[k] = z;
  }
  // one-sided spectrum -> analytic signal
  for (std::size_t k = 1; k < n; ++k) {
    if (2 * k < n) {
      spectrum[k] *= 2.0;
    } else if (2 * k > n) {
      spectrum[k] = 0.0;
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    std::complex<double> z = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      z += spectrum[k] * std::polar(1.0, 2.0 * kPi * static_cast<double>(j * k) /
                                             static_cast<double>(n));
    }
    env[j] = std::abs(z) / static_cast<double>(n);
  }
  return env;
}

}  // namespace detail

/// Seed model for the decayed-sinusoid fit: f from the peak of a 4x
/// zero-padded periodogram with quadratic peak interpolation, b from the
/// series mean, a from half the peak-to-peak, T2 from the log-envelope slope
/// of the analytic-signal magnitude, n = 1, phi from the first-point phase.
inline FitModel initial_guess(const PopulationSeries& series) {
  const auto& t = series.tau;
  const auto& y = series.p0;
  if (t.size() != y.size()) {
    throw std::invalid_argument("initial_guess: tau/p0 size mismatch");
  }
  if (t.size() < 8) {
    throw std::invalid_argument("initial_guess: need at least 8 points");
  }
  const std::size_t n = t.size();
  const double span = t.back() - t.front();
  if (!(span > 0.0)) throw std::invalid_argument("initial_guess: zero time span");

  double lo = y[0], hi = y[0], sum = 0.0;
  for (double v : y) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  if (hi - lo < 1e-6) {
    throw NoOscillationError("initial_guess: series is flat, no oscillation");
  }

  FitModel guess;
  guess.b = sum / static_cast<double>(n);
  guess.a = 0.5 * (hi - lo);

  std::vector<double> yc(n);
  for (std::size_t j = 0; j < n; ++j) yc[j] = y[j] - guess.b;

  // 4x zero-padding <=> frequency step 1/(4 span), up to the mean Nyquist.
  const double df = 1.0 / (4.0 * span);
  const double f_nyq = 0.5 * static_cast<double>(n - 1) / span;
  const int m_max = std::max(2, static_cast<int>(f_nyq / df));
  int m_peak = 1;
  double p_peak = -1.0;
  std::vector<double> power(static_cast<std::size_t>(m_max) + 1, 0.0);
  for (int m = 1; m <= m_max; ++m) {
    power[m] = detail::periodogram_power(t, yc, m * df);
    if (power[m] > p_peak) {
      p_peak = power[m];
      m_peak = m;
    }
  }
  double f_hat = m_peak * df;
  if (m_peak > 1 && m_peak < m_max) {
    const double pm = power[m_peak - 1], p0 = power[m_peak], pp = power[m_peak + 1];
    const double denom = pm - 2.0 * p0 + pp;
    if (denom < 0.0) f_hat = (m_peak + 0.5 * (pm - pp) / denom) * df;
  }
  guess.f = f_hat;

  // T2 from a least-squares line through log(envelope) where the envelope
  // is healthy.
  const std::vector<double> env = detail::envelope_estimate(t, yc);
  const double env_max = *std::max_element(env.begin(), env.end());
  double st = 0, sl = 0, stt = 0, stl = 0;
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (env[j] > 0.05 * env_max) {
      const double l = std::log(env[j]);
      st += t[j];
      sl += l;
      stt += t[j] * t[j];
      stl += t[j] * l;
      ++kept;
    }
  }
  double t2 = std::min(kT2UpperBound, 10.0 * span);
  if (kept >= 2) {
    const double denom = kept * stt - st * st;
    if (denom > 0.0) {
      const double slope = (kept * stl - st * sl) / denom;
      if (slope < -1e-9) t2 = std::clamp(-1.0 / slope, kT2LowerBound, kT2UpperBound);
    }
  }
  guess.t2 = t2;
  guess.n = 1.0;

  const double c = std::clamp(yc[0] / guess.a, -1.0, 1.0);
  double phi = std::acos(c);
  if (n > 1 && y[1] > y[0]) phi = -phi;  // rising start -> sin(phi) < 0
  guess.phi = phi;
  return guess;
}

namespace detail {

inline FitModel clamp_model(FitModel m) {
  m.f = std::max(m.f, 0.0);
  m.t2 = std::clamp(m.t2, kT2LowerBound, kT2UpperBound);
  m.n = std::clamp(m.n, kStretchMin, kStretchMax);
  return m;
}

inline Eigen::VectorXd pack(const FitModel& m) {
  Eigen::VectorXd p(6);
  p << m.a, m.b, m.f, m.phi, m.t2, m.n;
  return p;
}

inline FitModel unpack(const Eigen::VectorXd& p) {
  return {p(0), p(1), p(2), p(3), p(4), p(5)};
}

inline Eigen::VectorXd weighted_residuals(const PopulationSeries& s,
                                          const std::vector<double>& w,
                                          const FitModel& m) {
  Eigen::VectorXd r(static_cast<Eigen::Index>(s.tau.size()));
  for (std::size_t i = 0; i < s.tau.size(); ++i) {
    const double wi = w.empty() ? 1.0 : w[i];
    r(static_cast<Eigen::Index>(i)) =
        wi * (s.p0[i] - eval_decayed_sinusoid(m, s.tau[i]));
  }
  return r;
}

// Central-difference Jacobian of the weighted residuals, relative step 1e-6.
inline Eigen::MatrixXd residual_jacobian(const PopulationSeries& s,
                                         const std::vector<double>& w,
                                         const Eigen::VectorXd& p) {
  const auto rows = static_cast<Eigen::Index>(s.tau.size());
  Eigen::MatrixXd jac(rows, 6);
  for (int j = 0; j < 6; ++j) {
    const double h = 1e-6 * std::max(std::abs(p(j)), 1.0);
    Eigen::VectorXd pp = p, pm = p;
    pp(j) += h;
    pm(j) -= h;
    const Eigen::VectorXd rp = weighted_residuals(s, w, unpack(pp));
    const Eigen::VectorXd rm = weighted_residuals(s, w, unpack(pm));
    jac.col(j) = (rp - rm) / (2.0 * h);
  }
  return jac;
}

}  // namespace detail

namespace detail {

struct LmResult {
  Eigen::VectorXd p;
  Eigen::MatrixXd jac;
  double cost = 0.0;
  bool converged = false;
  int iterations = 0;
};

// Parameters sitting on a bound with the gradient pointing outward are
// frozen for the iteration (active-set); their gradient components do not
// count toward convergence, and the damped step is solved in the free
// subspace so the clamp cannot corrupt a joint step.
inline std::array<bool, 6> active_bounds(const Eigen::VectorXd& p,
                                         const Eigen::VectorXd& g) {
  std::array<bool, 6> fixed{};
  fixed[2] = p(2) <= 0.0 && g(2) > 0.0;  // f >= 0
  fixed[4] = (p(4) <= kT2LowerBound && g(4) > 0.0) ||
             (p(4) >= kT2UpperBound && g(4) < 0.0);
  fixed[5] = (p(5) <= kStretchMin && g(5) > 0.0) ||
             (p(5) >= kStretchMax && g(5) < 0.0);
  return fixed;
}

inline LmResult lm_minimize(const PopulationSeries& series,
                            const std::vector<double>& weights,
                            const FitModel& start) {
  LmResult out;
  out.p = pack(clamp_model(start));
  Eigen::VectorXd r = weighted_residuals(series, weights, unpack(out.p));
  out.cost = r.squaredNorm();
  out.jac = residual_jacobian(series, weights, out.p);

  double lambda = 1e-3;
  for (; out.iterations < 500; ++out.iterations) {
    const Eigen::MatrixXd jtj = out.jac.transpose() * out.jac;
    const Eigen::VectorXd g = out.jac.transpose() * r;
    const std::array<bool, 6> fixed = active_bounds(out.p, g);

    std::vector<int> free_idx;
    double g_free_norm = 0.0;
    for (int k = 0; k < 6; ++k) {
      if (!fixed[static_cast<std::size_t>(k)]) {
        free_idx.push_back(k);
        g_free_norm = std::max(g_free_norm, std::abs(g(k)));
      }
    }
    if (g_free_norm < 1e-8) {
      out.converged = true;
      break;
    }

    const auto n_free = static_cast<Eigen::Index>(free_idx.size());
    Eigen::MatrixXd damped(n_free, n_free);
    Eigen::VectorXd g_free(n_free);
    for (Eigen::Index a = 0; a < n_free; ++a) {
      g_free(a) = g(free_idx[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < n_free; ++b) {
        damped(a, b) = jtj(free_idx[static_cast<std::size_t>(a)],
                           free_idx[static_cast<std::size_t>(b)]);
      }
      damped(a, a) += lambda * std::max(damped(a, a), 1e-12);
    }
    const Eigen::VectorXd step_free = damped.ldlt().solve(-g_free);
    Eigen::VectorXd step = Eigen::VectorXd::Zero(6);
    for (Eigen::Index a = 0; a < n_free; ++a) {
      step(free_idx[static_cast<std::size_t>(a)]) = step_free(a);
    }

    const FitModel trial_model = clamp_model(unpack(out.p + step));
    const Eigen::VectorXd trial_r = weighted_residuals(series, weights, trial_model);
    const double trial_cost = trial_r.squaredNorm();
    if (trial_cost <= out.cost) {
      const double rel_drop = (out.cost - trial_cost) / std::max(out.cost, 1e-300);
      out.p = pack(trial_model);
      r = trial_r;
      out.cost = trial_cost;
      lambda = std::max(lambda / 3.0, 1e-12);
      out.jac = residual_jacobian(series, weights, out.p);
      if (rel_drop < 1e-10) {
        out.converged = true;
        ++out.iterations;
        break;
      }
    } else {
      lambda *= 2.0;
      if (lambda > 1e14) break;  // stalled
    }
  }
  return out;
}

// Best (a, b) for fixed (f, phi, t2, n): the model is linear in both.
inline FitModel solve_linear_pair(const PopulationSeries& series,
                                  const std::vector<double>& weights, FitModel m) {
  double s_ee = 0, s_e1 = 0, s_11 = 0, s_ey = 0, s_1y = 0;
  for (std::size_t i = 0; i < series.tau.size(); ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    const double x = series.tau[i] / m.t2;
    const double e = (x > 0.0 ? std::exp(-std::pow(x, m.n)) : 1.0) *
                     std::cos(2.0 * kPi * m.f * series.tau[i] + m.phi);
    const double w2 = w * w;
    s_ee += w2 * e * e;
    s_e1 += w2 * e;
    s_11 += w2;
    s_ey += w2 * e * series.p0[i];
    s_1y += w2 * series.p0[i];
  }
  const double det = s_ee * s_11 - s_e1 * s_e1;
  if (std::abs(det) < 1e-14 * std::max(s_ee * s_11, 1e-300)) return m;
  m.a = (s_ey * s_11 - s_e1 * s_1y) / det;
  m.b = (s_ee * s_1y - s_e1 * s_ey) / det;
  if (m.a < 0.0) {
    m.a = -m.a;
    m.phi += kPi;
  }
  return m;
}

// Phase of the strongest component at frequency f.
inline double projection_phase(const PopulationSeries& series, double f, double b) {
  std::complex<double> z = 0.0;
  for (std::size_t i = 0; i < series.tau.size(); ++i) {
    z += (series.p0[i] - b) * std::polar(1.0, -2.0 * kPi * f * series.tau[i]);
  }
  return std::arg(z);
}

}  // namespace detail

/// Levenberg-Marquardt fit of the decayed sinusoid. Seeds from initial_guess
/// when no guess is given; optional per-point weights (1/sigma). Bounds:
/// t2 in (0, 1e3] us, n in [0.5, 4], f >= 0. Converges on relative cost
/// change < 1e-10 or gradient norm < 1e-8; gives up (converged = false,
/// best-so-far returned) after 500 iterations. Heavily damped records can
/// trap the optimizer in a flat-line minimum, so two refined restarts of the
/// same seed (linear-solved amplitude/offset, projection phase) are also run
/// and the lowest-cost result wins.
inline FitReport fit_decayed_sinusoid(const PopulationSeries& series,
                                      std::optional<FitModel> guess = std::nullopt,
                                      const std::vector<double>& weights = {}) {
  if (series.tau.size() != series.p0.size()) {
    throw std::invalid_argument("fit_decayed_sinusoid: tau/p0 size mismatch");
  }
  if (!weights.empty() && weights.size() != series.tau.size()) {
    throw std::invalid_argument("fit_decayed_sinusoid: weight size mismatch");
  }
  for (double v : series.p0) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("fit_decayed_sinusoid: non-finite data");
    }
  }

  const FitModel seed = detail::clamp_model(guess ? *guess : initial_guess(series));

  std::vector<FitModel> starts;
  starts.push_back(seed);
  const FitModel linear = detail::solve_linear_pair(series, weights, seed);
  starts.push_back(linear);
  FitModel projected = linear;
  projected.phi = detail::projection_phase(series, linear.f, linear.b);
  starts.push_back(detail::solve_linear_pair(series, weights, projected));

  detail::LmResult best;
  bool have = false;
  for (const FitModel& start : starts) {
    const detail::LmResult run = detail::lm_minimize(series, weights, start);
    // a restart must beat the incumbent by more than rounding noise, so
    // refitting from a solution reproduces it exactly
    if (!have || run.cost < best.cost * (1.0 - 1e-12)) {
      best = run;
      have = true;
    }
  }

  FitReport report;
  report.model = detail::unpack(best.p);
  report.residual_norm = std::sqrt(best.cost);
  report.converged = best.converged;
  report.iterations = best.iterations;
  report.decay_unresolved = report.model.t2 >= 0.999 * kT2UpperBound;

  // Gauss-Newton covariance approximation at the solution.
  const auto n_pts = static_cast<double>(series.tau.size());
  if (n_pts > 6) {
    const double s2 = best.cost / (n_pts - 6.0);
    const Eigen::MatrixXd jtj = best.jac.transpose() * best.jac;
    const Eigen::MatrixXd cov =
        s2 * jtj.completeOrthogonalDecomposition().pseudoInverse();
    FitModel se;
    se.a = std::sqrt(std::max(cov(0, 0), 0.0));
    se.b = std::sqrt(std::max(cov(1, 1), 0.0));
    se.f = std::sqrt(std::max(cov(2, 2), 0.0));
    se.phi = std::sqrt(std::max(cov(3, 3), 0.0));
    se.t2 = std::sqrt(std::max(cov(4, 4), 0.0));
    se.n = std::sqrt(std::max(cov(5, 5), 0.0));
    report.stderrs = se;
  }
  return report;
}

/// Weights from ensemble standard errors: 1/max(se, floor) with a floor of
/// 5% of the median positive se, normalized to mean 1. Uniform when no
/// positive se is present.
inline std::vector<double> weights_from_se(const std::vector<double>& se) {
  std::vector<double> positive;
  for (double s : se) {
    if (s > 0.0) positive.push_back(s);
  }
  if (positive.empty()) return {};
  std::nth_element(positive.begin(), positive.begin() + positive.size() / 2,
                   positive.end());
  const double floor = 0.05 * positive[positive.size() / 2];
  std::vector<double> w(se.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < se.size(); ++i) {
    w[i] = 1.0 / std::max(se[i], floor);
    sum += w[i];
  }
  const double scale = static_cast<double>(w.size()) / sum;
  for (double& v : w) v *= scale;
  return w;
}

/// One row of the T2*-vs-noise-amplitude table.
struct T2SweepRow {
  double b_max = 0.0;  // uniform B_z' half-width of the ensemble, MHz
  double t2 = 0.0;
  double t2_se = 0.0;
  double f = 0.0;
  double f_se = 0.0;
  bool converged = false;
  bool decay_unresolved = false;
};

/// Fits each ensemble independently; rows where the fit did not converge are
/// flagged, not dropped.
inline std::vector<T2SweepRow> t2_sweep(const std::vector<EnsembleSeries>& ensembles) {
  std::vector<T2SweepRow> rows;
  rows.reserve(ensembles.size());
  for (const auto& ens : ensembles) {
    const FitReport rep =
        fit_decayed_sinusoid(ens.series(), std::nullopt, weights_from_se(ens.se));
    T2SweepRow row;
    row.b_max = ens.spec.b_max;
    row.t2 = rep.model.t2;
    row.t2_se = rep.stderrs.t2;
    row.f = rep.model.f;
    row.f_se = rep.stderrs.f;
    row.converged = rep.converged;
    row.decay_unresolved = rep.decay_unresolved;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace sicsim
