#pragma once

// Quasi-static noise models and ensemble Monte Carlo. Field samples come
// from counter-based streams, sample = f(master_seed, run_index, dimension),
// so ensembles are order-independent and bit-reproducible for any thread
// count. Includes the T2* <-> sigma dephasing relation.

#include "sicsim/dynamics.hpp"

#include <cmath>
#include <cstdint>
#include <future>
#include <stdexcept>
#include <thread>
#include <vector>

namespace sicsim {

namespace rng {

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t counter_hash(std::uint64_t seed, std::uint64_t run,
                                  std::uint64_t dim) {
  return mix64(mix64(mix64(seed) ^ run) ^ (dim * 0xda942042e4dd58b5ULL));
}

/// Uniform in [0, 1), 53-bit resolution.
inline double uniform01(std::uint64_t seed, std::uint64_t run, std::uint64_t dim) {
  return static_cast<double>(counter_hash(seed, run, dim) >> 11) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two counter dimensions.
inline double normal(std::uint64_t seed, std::uint64_t run, std::uint64_t dim) {
  const double u1 = 1.0 - uniform01(seed, run, dim);  // (0, 1]
  const double u2 = uniform01(seed, run, dim + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
}

}  // namespace rng

/// Stochastic field model: Gaussian pz, plus a uniform and/or Gaussian bz
/// component (the uniform +-b_max model and the Gaussian sigma_bz model are
/// selected per experiment; normally only one is nonzero).
struct NoiseSpec {
  double sigma_pz = 0.0;  ///< std-dev of Gaussian Pi_z', MHz
  double b_max = 0.0;     ///< half-width of uniform B_z', MHz
  double sigma_bz = 0.0;  ///< std-dev of Gaussian B_z', MHz
  double projection = kDefaultProjection;  ///< applied-field cosine factor

  void validate() const {
    if (!(sigma_pz >= 0.0) || !(b_max >= 0.0) || !(sigma_bz >= 0.0)) {
      throw std::invalid_argument("NoiseSpec: widths must be >= 0");
    }
    if (!(std::abs(projection) <= 1.0)) {
      throw std::invalid_argument("NoiseSpec: |projection| must be <= 1");
    }
  }
};

struct EnsembleConfig {
  int n_runs = 1;
  std::uint64_t master_seed = 0;
  std::vector<double> tau_grid;  // us, strictly increasing

  void validate() const {
    if (n_runs < 1) throw std::invalid_argument("EnsembleConfig: n_runs must be >= 1");
    if (tau_grid.empty()) {
      throw std::invalid_argument("EnsembleConfig: tau_grid must be non-empty");
    }
    double prev = -1.0;
    for (double t : tau_grid) {
      if (!(t >= 0.0) || !std::isfinite(t)) {
        throw std::invalid_argument("EnsembleConfig: tau_grid must be non-negative");
      }
      if (t <= prev) {
        throw std::invalid_argument("EnsembleConfig: tau_grid must be strictly increasing");
      }
      prev = t;
    }
  }
};

/// Noise-averaged trace with enough provenance to re-run bit-identically.
struct EnsembleSeries {
  std::vector<double> tau;
  std::vector<double> mean;
  std::vector<double> se;  // standard error of the mean
  SpinParams params;
  NoiseSpec spec;
  std::uint64_t master_seed = 0;
  int n_runs = 0;
  SequenceKind kind = SequenceKind::ramsey;

  PopulationSeries series() const { return {tau, mean}; }
};

/// Deterministic field sample for one (run, slot); slot 0 is the per-run
/// sample, higher slots feed the optional mid-evolution resampling hook.
inline FieldSample draw_fields_slot(const NoiseSpec& spec, int run_index,
                                    std::uint64_t master_seed, int slot) {
  spec.validate();
  if (run_index < 0) throw std::invalid_argument("draw_fields: run_index must be >= 0");
  if (slot < 0) throw std::invalid_argument("draw_fields: slot must be >= 0");
  const auto run = static_cast<std::uint64_t>(run_index);
  const auto base = 16ULL * static_cast<std::uint64_t>(slot);
  FieldSample fields;
  fields.pz = spec.sigma_pz * rng::normal(master_seed, run, base + 0);
  fields.bz =
      spec.b_max * (2.0 * rng::uniform01(master_seed, run, base + 2) - 1.0) +
      spec.sigma_bz * rng::normal(master_seed, run, base + 3);
  return fields;
}

/// Deterministic per-run field sample; each run draws once and the sample is
/// static for the whole sequence.
inline FieldSample draw_fields(const NoiseSpec& spec, int run_index,
                               std::uint64_t master_seed) {
  return draw_fields_slot(spec, run_index, master_seed, 0);
}

/// Projection of a field applied along the sample normal onto the defect
/// axis: bz = projection * b_applied.
inline double project_applied_field(double b_applied, const NoiseSpec& spec) {
  spec.validate();
  if (!std::isfinite(b_applied)) {
    throw std::invalid_argument("project_applied_field: non-finite field");
  }
  return spec.projection * b_applied;
}

namespace detail {

// Fixed-tree pairwise sum: independent of evaluation order and run chunking.
inline double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace detail

/// Pointwise noise average of run_sequence over n_runs deterministic field
/// samples. The reduction is a fixed pairwise tree over run index, so the
/// result is bit-identical for any thread count. resample_free_evolution
/// redraws the fields for every drive-off segment (slot-indexed streams)
/// instead of holding them static per run; it is off by default and the
/// quasi-static model is the physical one.
inline EnsembleSeries ensemble_average(const SpinParams& params,
                                       const NoiseSpec& spec,
                                       const EnsembleConfig& config,
                                       SequenceKind kind, bool idealized = true,
                                       int threads = 0,
                                       bool resample_free_evolution = false) {
  params.validate();
  spec.validate();
  config.validate();
  const PulseCalibration cal = calibrate_pulses(params);

  const std::size_t n = static_cast<std::size_t>(config.n_runs);
  const std::size_t m = config.tau_grid.size();

  // Sequences depend only on tau; share them across runs.
  std::vector<PulseSequence> seqs;
  seqs.reserve(m);
  for (double tau : config.tau_grid) {
    seqs.push_back(PulseSequence::make(kind, tau, cal, idealized));
  }

  std::vector<double> table(n * m);  // run-major
  auto eval_runs = [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const FieldSample fields =
          draw_fields(spec, static_cast<int>(i), config.master_seed);
      if (!resample_free_evolution) {
        SequenceEvaluator evaluator(params, fields);
        for (std::size_t j = 0; j < m; ++j) {
          table[i * m + j] = evaluator.p0(seqs[j]);
        }
        continue;
      }
      for (std::size_t j = 0; j < m; ++j) {
        SpinState psi = state_zero();
        int slot = 0;
        for (const auto& seg : seqs[j].segments) {
          const FieldSample seg_fields =
              seg.drive ? fields
                        : draw_fields_slot(spec, static_cast<int>(i),
                                           config.master_seed, slot++);
          const Matrix3c h =
              build_rot_h(params, seg_fields, seg.drive, seg.idealized);
          psi = evolve(eig_hermitian(h), psi, seg.duration);
        }
        table[i * m + j] = population_zero(psi);
      }
    }
  };

  std::size_t n_threads = threads > 0
                              ? static_cast<std::size_t>(threads)
                              : std::max(1u, std::thread::hardware_concurrency());
  n_threads = std::min(n_threads, n);
  if (n_threads <= 1) {
    eval_runs(0, n);
  } else {
    std::vector<std::future<void>> futures;
    const std::size_t chunk = (n + n_threads - 1) / n_threads;
    for (std::size_t lo = 0; lo < n; lo += chunk) {
      const std::size_t hi = std::min(lo + chunk, n);
      futures.push_back(std::async(std::launch::async, eval_runs, lo, hi));
    }
    for (auto& f : futures) f.get();
  }

  EnsembleSeries out;
  out.tau = config.tau_grid;
  out.mean.resize(m);
  out.se.resize(m);
  out.params = params;
  out.spec = spec;
  out.master_seed = config.master_seed;
  out.n_runs = config.n_runs;
  out.kind = kind;

  std::vector<double> column(n);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = table[i * m + j];
    const double mean = detail::pairwise_sum(column.data(), n) / static_cast<double>(n);
    out.mean[j] = mean;
    if (n > 1) {
      for (std::size_t i = 0; i < n; ++i) {
        const double d = column[i] - mean;
        column[i] = d * d;
      }
      const double var =
          detail::pairwise_sum(column.data(), n) / static_cast<double>(n - 1);
      out.se[j] = std::sqrt(var / static_cast<double>(n));
    } else {
      out.se[j] = 0.0;
    }
  }
  return out;
}

/// T2*(B=0) = 1/(sqrt(2) pi sigma) and its inverse.
inline double sigma_from_t2(double t2) {
  if (!(t2 > 0.0)) throw std::domain_error("sigma_from_t2: t2 must be > 0");
  return 1.0 / (std::sqrt(2.0) * kPi * t2);
}

inline double t2_from_sigma(double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("t2_from_sigma: sigma must be > 0");
  return 1.0 / (std::sqrt(2.0) * kPi * sigma);
}

}  // namespace sicsim
