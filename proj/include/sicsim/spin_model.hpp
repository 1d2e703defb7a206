#pragma once

// Spin-1 model of a basal divacancy qutrit in the {up, 0, down} basis:
// static parameters, stochastic field samples, Hamiltonian builders and
// ODMR line positions.
//
// Unit convention used throughout the library: Hamiltonian entries are
// ordinary frequencies in MHz, time is in microseconds, and evolution
// applies the phase factor exp(-i 2*pi*H*t).

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

namespace sicsim {

using complexd = std::complex<double>;
using Matrix3c = Eigen::Matrix3cd;
using Vector3c = Eigen::Vector3cd;

inline constexpr double kPi = 3.14159265358979323846;

// g * mu_B / h in MHz per Gauss for g = 2.00 (mu_B/h = 1.3996244936 MHz/G),
// i.e. the ~2.8 MHz/G Zeeman slope of the ODMR branches.
inline constexpr double kMhzPerGauss = 2.00 * 1.3996244936;

// cos(109.5 deg), the projection of a field applied along the sample normal
// onto the c axis of the basal defect. Negative by convention; symmetric
// noise distributions only feel the magnitude.
inline const double kDefaultProjection = std::cos(109.5 * kPi / 180.0);

/// Static defect and drive parameters, all in MHz.
struct SpinParams {
  double d = 0.0;      ///< zero-field splitting D
  double ex = 0.0;     ///< transverse splitting E_x
  double omega = 0.0;  ///< microwave drive frequency
  double rabi = 0.0;   ///< Rabi frequency Omega

  /// Detuning Delta = D + E_x - omega of the drive from the |0> -> |+>
  /// transition.
  double detuning() const { return d + ex - omega; }

  void validate() const {
    if (!std::isfinite(d) || !std::isfinite(ex) || !std::isfinite(omega) ||
        !std::isfinite(rabi)) {
      throw std::invalid_argument("SpinParams: non-finite parameter");
    }
    if (d <= 0.0) throw std::invalid_argument("SpinParams: D must be > 0");
    if (ex < 0.0) throw std::invalid_argument("SpinParams: Ex must be >= 0");
    if (rabi < 0.0) throw std::invalid_argument("SpinParams: Omega must be >= 0");
  }

  /// Soft diagnostics: the rotating-frame model assumes |Delta| << D + E_x.
  /// Violations are reported, not rejected.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    if (omega > 0.0 && std::abs(detuning()) > 0.01 * (d + ex)) {
      out.push_back("detuning |Delta| = " + std::to_string(std::abs(detuning())) +
                    " MHz exceeds 1% of D + Ex = " + std::to_string(d + ex) +
                    " MHz; rotating-frame model degrades");
    }
    return out;
  }
};

/// One quasi-static realization of the stochastic fields, in frequency
/// units: bz = g*mu_B*B_z/h, pz = d_z*Pi_z/h.
struct FieldSample {
  double bz = 0.0;  ///< longitudinal magnetic fluctuation, MHz
  double pz = 0.0;  ///< electric fluctuation, MHz

  void validate() const {
    if (!std::isfinite(bz) || !std::isfinite(pz)) {
      throw std::invalid_argument("FieldSample: non-finite field");
    }
  }
};

/// The three spin-1 operator matrices in the {up, 0, down} basis.
struct Spin1Operators {
  Matrix3c sx;
  Matrix3c sy;
  Matrix3c sz;
};

inline Spin1Operators spin1_operators() {
  const double r = 1.0 / std::sqrt(2.0);
  const complexd i(0.0, 1.0);
  Spin1Operators ops;
  ops.sx << 0, r, 0, r, 0, r, 0, r, 0;
  ops.sy << 0, -i * r, 0, i * r, 0, -i * r, 0, i * r, 0;
  ops.sz << 1, 0, 0, 0, 0, 0, 0, 0, -1;
  return ops;
}

/// Max |H - H^dag| element relative to max |H| element.
inline double hermiticity_defect(const Matrix3c& h) {
  const double scale = h.cwiseAbs().maxCoeff();
  const double defect = (h - h.adjoint()).cwiseAbs().maxCoeff();
  return scale > 0.0 ? defect / scale : defect;
}

inline bool is_hermitian(const Matrix3c& h, double rel_tol = 1e-12) {
  return hermiticity_defect(h) <= rel_tol;
}

/// Lab-frame Hamiltonian
///   [[D+pz+bz, 0, Ex], [0, 0, 0], [Ex, 0, D+pz-bz]]
/// in MHz. Eigenvalues at zero fields are {0, D-Ex, D+Ex}.
inline Matrix3c build_lab_h(const SpinParams& params, const FieldSample& fields) {
  params.validate();
  fields.validate();
  Matrix3c h = Matrix3c::Zero();
  h(0, 0) = params.d + fields.pz + fields.bz;
  h(2, 2) = params.d + fields.pz - fields.bz;
  h(0, 2) = params.ex;
  h(2, 0) = params.ex;
  return h;
}

/// Rotating-frame Hamiltonian in the {up, 0, down} basis.
///
/// drive_on = false: free evolution, Omega entries zero.
/// drive_on = true:  Omega/sqrt(2) couplings on the |0> row/column.
/// idealized (only meaningful with the drive on): strong-pulse form with
/// the Delta, bz, pz entries dropped, keeping only the Omega and Ex terms.
inline Matrix3c build_rot_h(const SpinParams& params, const FieldSample& fields,
                            bool drive_on, bool idealized = false) {
  params.validate();
  fields.validate();
  const double delta = params.detuning();
  Matrix3c h = Matrix3c::Zero();
  const double diag = (drive_on && idealized)
                          ? -params.ex
                          : delta + fields.pz - params.ex;
  const double split = (drive_on && idealized) ? 0.0 : fields.bz;
  h(0, 0) = diag + split;
  h(2, 2) = diag - split;
  h(0, 2) = params.ex;
  h(2, 0) = params.ex;
  if (drive_on) {
    const double g = params.rabi / std::sqrt(2.0);
    h(0, 1) = g;
    h(1, 0) = g;
    h(1, 2) = g;
    h(2, 1) = g;
  }
  return h;
}

/// The two ODMR transition frequencies from |0> to the upper eigenstates,
/// f_pm = D -+/+ sqrt(Ex^2 + bz^2). bz_freq is the axial Zeeman term in MHz
/// (convert Gauss with kMhzPerGauss).
struct OdmrLines {
  double f_minus = 0.0;
  double f_plus = 0.0;
};

inline OdmrLines odmr_lines(const SpinParams& params, double bz_freq) {
  params.validate();
  if (!std::isfinite(bz_freq)) {
    throw std::invalid_argument("odmr_lines: non-finite field");
  }
  const double split = std::hypot(params.ex, bz_freq);
  return {params.d - split, params.d + split};
}

}  // namespace sicsim
