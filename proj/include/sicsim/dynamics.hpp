#pragma once

// Unitary qutrit dynamics: exact propagation by Hermitian eigendecomposition,
// pulse calibration, pulse-sequence execution (Rabi, Ramsey, Thermo Echo),
// the closed-form Ramsey population and a no-RWA lab-frame oracle.

#include "sicsim/spin_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace sicsim {

using SpinState = Vector3c;  // amplitudes over {up, 0, down}

inline SpinState state_zero() { return SpinState(0.0, 1.0, 0.0); }
inline SpinState state_up() { return SpinState(1.0, 0.0, 0.0); }
inline SpinState state_down() { return SpinState(0.0, 0.0, 1.0); }

/// |+> = (|up> + |down>)/sqrt(2), the driven branch.
inline SpinState state_plus() {
  const double r = 1.0 / std::sqrt(2.0);
  return SpinState(r, 0.0, r);
}

inline double population_zero(const SpinState& psi) { return std::norm(psi(1)); }

/// Eigendecomposition H = V diag(w) V^dag of a Hermitian matrix; rejects
/// non-Hermitian input.
struct EigenSystem {
  Eigen::Vector3d w;
  Matrix3c v;
};

inline EigenSystem eig_hermitian(const Matrix3c& h) {
  if (!is_hermitian(h)) {
    throw std::invalid_argument("eig_hermitian: matrix is not Hermitian");
  }
  Eigen::SelfAdjointEigenSolver<Matrix3c> solver(h);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("eig_hermitian: eigensolver failed");
  }
  return {solver.eigenvalues(), solver.eigenvectors()};
}

/// psi(t) = V exp(-i 2 pi w t) V^dag psi(0), exact for Hermitian H.
inline SpinState evolve(const EigenSystem& sys, const SpinState& psi, double t) {
  Vector3c c = sys.v.adjoint() * psi;
  for (int k = 0; k < 3; ++k) {
    c(k) *= std::polar(1.0, -2.0 * kPi * sys.w(k) * t);
  }
  return sys.v * c;
}

inline Matrix3c propagator(const Matrix3c& h, double t) {
  const EigenSystem sys = eig_hermitian(h);
  Vector3c phases;
  for (int k = 0; k < 3; ++k) {
    phases(k) = std::polar(1.0, -2.0 * kPi * sys.w(k) * t);
  }
  return sys.v * phases.asDiagonal() * sys.v.adjoint();
}

/// U(t) psi with U = exp(-i 2 pi H t). H must be Hermitian, psi normalized.
inline SpinState propagate(const Matrix3c& h, const SpinState& psi, double t) {
  if (std::abs(psi.squaredNorm() - 1.0) > 1e-8) {
    throw std::invalid_argument("propagate: state is not normalized");
  }
  return evolve(eig_hermitian(h), psi, t);
}

/// One sequence segment: free evolution (drive off) or a microwave pulse.
/// idealized selects the strong-pulse Hamiltonian during the pulse.
struct PulseSegment {
  double duration = 0.0;  // us
  bool drive = false;
  bool idealized = true;

  void validate() const {
    if (!(duration >= 0.0) || !std::isfinite(duration)) {
      throw std::invalid_argument("PulseSegment: duration must be >= 0");
    }
  }
};

enum class PulseKind { half_pi, two_pi };

/// Calibrated pulse lengths in us.
struct PulseCalibration {
  double half_pi = 0.0;
  double two_pi = 0.0;
};

namespace detail {

// Fidelity of the state evolved from |0> under the idealized pulse
// Hamiltonian against the pulse target.
inline double pulse_fidelity(const EigenSystem& sys, PulseKind kind, double t) {
  const SpinState psi = evolve(sys, state_zero(), t);
  if (kind == PulseKind::two_pi) {
    return population_zero(psi);  // global phase allowed
  }
  const complexd i(0.0, 1.0);
  const SpinState target = (state_zero() - i * state_plus()) / std::sqrt(2.0);
  return std::norm(target.dot(psi));
}

}  // namespace detail

/// Shortest pulse length maximizing fidelity to the pulse target
/// ((|0> - i|+>)/sqrt(2) for half_pi, return to |0> for two_pi), located by
/// scan plus golden-section refinement. Throws if no fidelity above 0.999
/// exists within 10 Rabi periods.
inline double calibrate_pulse(const SpinParams& params, PulseKind kind) {
  params.validate();
  if (params.rabi <= 0.0) {
    throw std::runtime_error("calibrate_pulse: calibration failure, Omega = 0");
  }
  const EigenSystem sys =
      eig_hermitian(build_rot_h(params, FieldSample{}, true, true));
  const double t_max = 10.0 / params.rabi;
  const int n_scan = 20000;
  const double h = t_max / n_scan;

  // For two_pi, skip the degenerate maximum at t = 0: accept a peak only
  // after the state has left |0>.
  bool armed = kind != PulseKind::two_pi;
  double best_t = -1.0;
  double prev = detail::pulse_fidelity(sys, kind, 0.0);
  double curr = detail::pulse_fidelity(sys, kind, h);
  for (int j = 2; j <= n_scan; ++j) {
    const double next = detail::pulse_fidelity(sys, kind, j * h);
    if (!armed && curr < 0.2) armed = true;
    if (armed && curr >= prev && curr > next && curr > 0.9) {
      best_t = (j - 1) * h;
      break;
    }
    prev = curr;
    curr = next;
  }
  if (best_t < 0.0) {
    throw std::runtime_error("calibrate_pulse: calibration failure");
  }

  // Golden-section refinement on [best_t - h, best_t + h].
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = best_t - h;
  double hi = best_t + h;
  double x1 = hi - gr * (hi - lo);
  double x2 = lo + gr * (hi - lo);
  double f1 = detail::pulse_fidelity(sys, kind, x1);
  double f2 = detail::pulse_fidelity(sys, kind, x2);
  while (hi - lo > 1e-13 * t_max) {
    if (f1 > f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - gr * (hi - lo);
      f1 = detail::pulse_fidelity(sys, kind, x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + gr * (hi - lo);
      f2 = detail::pulse_fidelity(sys, kind, x2);
    }
  }
  const double t_star = 0.5 * (lo + hi);
  if (detail::pulse_fidelity(sys, kind, t_star) < 0.999) {
    throw std::runtime_error("calibrate_pulse: calibration failure");
  }
  return t_star;
}

inline PulseCalibration calibrate_pulses(const SpinParams& params) {
  return {calibrate_pulse(params, PulseKind::half_pi),
          calibrate_pulse(params, PulseKind::two_pi)};
}

enum class SequenceKind { rabi, ramsey, thermo_echo };

inline const char* to_string(SequenceKind kind) {
  switch (kind) {
    case SequenceKind::rabi: return "rabi";
    case SequenceKind::ramsey: return "ramsey";
    case SequenceKind::thermo_echo: return "thermo_echo";
  }
  return "?";
}

/// Ordered pulse/evolution segments with calibrated pulse durations embedded.
struct PulseSequence {
  std::vector<PulseSegment> segments;

  /// Single drive pulse of length t.
  static PulseSequence rabi(double t, bool idealized = true) {
    return {{{t, true, idealized}}};
  }

  /// pi/2 pulse, free evolution tau, pi/2 pulse.
  static PulseSequence ramsey(double tau, const PulseCalibration& cal,
                              bool idealized = true) {
    return {{{cal.half_pi, true, idealized},
             {tau, false, idealized},
             {cal.half_pi, true, idealized}}};
  }

  /// Ramsey with a 2pi pulse inserted mid-evolution.
  static PulseSequence thermo_echo(double tau, const PulseCalibration& cal,
                                   bool idealized = true) {
    return {{{cal.half_pi, true, idealized},
             {0.5 * tau, false, idealized},
             {cal.two_pi, true, idealized},
             {0.5 * tau, false, idealized},
             {cal.half_pi, true, idealized}}};
  }

  static PulseSequence make(SequenceKind kind, double tau,
                            const PulseCalibration& cal, bool idealized = true) {
    switch (kind) {
      case SequenceKind::rabi: return rabi(tau, idealized);
      case SequenceKind::ramsey: return ramsey(tau, cal, idealized);
      case SequenceKind::thermo_echo: return thermo_echo(tau, cal, idealized);
    }
    throw std::logic_error("PulseSequence::make: unknown kind");
  }

  void validate() const {
    for (const auto& seg : segments) seg.validate();
  }
};

/// Population-vs-delay trace.
struct PopulationSeries {
  std::vector<double> tau;  // us
  std::vector<double> p0;
};

/// Evaluates sequences for one (params, fields) pair, caching the at most
/// three distinct segment Hamiltonians (free, idealized pulse, finite pulse).
class SequenceEvaluator {
 public:
  SequenceEvaluator(const SpinParams& params, const FieldSample& fields)
      : params_(params), fields_(fields) {
    params_.validate();
    fields_.validate();
  }

  double p0(const PulseSequence& seq) {
    seq.validate();
    SpinState psi = state_zero();
    for (const auto& seg : seq.segments) {
      psi = evolve(system_for(seg), psi, seg.duration);
    }
    return population_zero(psi);
  }

 private:
  const EigenSystem& system_for(const PulseSegment& seg) {
    const int slot = !seg.drive ? 0 : (seg.idealized ? 1 : 2);
    if (!have_[slot]) {
      sys_[slot] =
          eig_hermitian(build_rot_h(params_, fields_, seg.drive, seg.idealized));
      have_[slot] = true;
    }
    return sys_[slot];
  }

  SpinParams params_;
  FieldSample fields_;
  EigenSystem sys_[3];
  bool have_[3] = {false, false, false};
};

/// |<0|psi_final>|^2 after applying seq to |0> in the rotating frame.
inline double run_sequence(const SpinParams& params, const FieldSample& fields,
                           const PulseSequence& seq) {
  SequenceEvaluator evaluator(params, fields);
  return evaluator.p0(seq);
}

/// One rotating-frame trace over a delay grid, reusing the cached segment
/// Hamiltonians across grid points.
inline PopulationSeries sequence_series(const SpinParams& params,
                                        const FieldSample& fields,
                                        SequenceKind kind,
                                        const std::vector<double>& tau_grid,
                                        const PulseCalibration& cal,
                                        bool idealized = true) {
  SequenceEvaluator evaluator(params, fields);
  PopulationSeries out;
  out.tau = tau_grid;
  out.p0.reserve(tau_grid.size());
  for (double tau : tau_grid) {
    out.p0.push_back(evaluator.p0(PulseSequence::make(kind, tau, cal, idealized)));
  }
  return out;
}

/// Closed-form Ramsey population
///   P0 = 1/2 [1 - cos 2 pi (Delta + pz + bz^2/(2 Ex)) tau],
/// valid for |bz| << Ex. Ex = 0 is outside the formula domain; use
/// run_sequence there.
inline double ramsey_closed_form(const SpinParams& params,
                                 const FieldSample& fields, double tau) {
  params.validate();
  fields.validate();
  if (params.ex <= 0.0) {
    throw std::domain_error(
        "ramsey_closed_form: requires Ex > 0; use run_sequence for Ex = 0");
  }
  const double f_eff = params.detuning() + fields.pz +
                       fields.bz * fields.bz / (2.0 * params.ex);
  return 0.5 * (1.0 - std::cos(2.0 * kPi * f_eff * tau));
}

/// Lab-frame reference propagation without the rotating-wave approximation.
///
/// Drive-off segments evolve exactly under the static lab Hamiltonian;
/// drive-on segments are sliced piecewise-constant with the oscillating
/// drive sampled at each slice midpoint. The drive amplitude is chosen so
/// that its rotating-wave limit reproduces the Omega coupling of
/// build_rot_h (lab coupling 2*Omega*cos(omega*t) on the |0> <-> |+>
/// element). P0 is frame-invariant, so the result compares directly with
/// run_sequence.
inline double lab_frame_oracle(const SpinParams& params, const FieldSample& fields,
                               const PulseSequence& seq, double dt,
                               const SpinState& psi0 = state_zero()) {
  params.validate();
  fields.validate();
  seq.validate();
  if (params.omega <= 0.0) {
    throw std::invalid_argument("lab_frame_oracle: omega must be > 0");
  }
  if (!(dt > 0.0) || dt > 1.0 / (50.0 * params.omega)) {
    throw std::invalid_argument(
        "lab_frame_oracle: dt too coarse, need dt <= 1/(50 omega)");
  }
  if (std::abs(psi0.squaredNorm() - 1.0) > 1e-8) {
    throw std::invalid_argument("lab_frame_oracle: state is not normalized");
  }

  const Matrix3c h_static = build_lab_h(params, fields);
  const double drive_amp = std::sqrt(2.0) * params.rabi;  // on the up/down rows

  SpinState psi = psi0;
  double t_abs = 0.0;  // carrier phase is continuous across segments
  for (const auto& seg : seq.segments) {
    if (!seg.drive) {
      psi = evolve(eig_hermitian(h_static), psi, seg.duration);
    } else {
      const auto n_slices =
          std::max<std::size_t>(1, static_cast<std::size_t>(
                                       std::ceil(seg.duration / dt)));
      const double h_step = seg.duration / static_cast<double>(n_slices);
      for (std::size_t j = 0; j < n_slices; ++j) {
        const double t_mid = t_abs + (static_cast<double>(j) + 0.5) * h_step;
        const double g =
            drive_amp * std::cos(2.0 * kPi * params.omega * t_mid);
        Matrix3c h = h_static;
        h(0, 1) = g;
        h(1, 0) = g;
        h(1, 2) = g;
        h(2, 1) = g;
        psi = evolve(eig_hermitian(h), psi, h_step);
      }
    }
    t_abs += seg.duration;
  }
  return population_zero(psi);
}

}  // namespace sicsim
