#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "wflux/model.hpp"
#include "wflux/phasespace.hpp"

namespace wflux {

/// Thermal Langevin process dA = -(i omega + gamma/2) A dt + sqrt(gamma (nbar + 1/2)) dxi.
struct LangevinSpec {
  double omega = 0.0;
  double gamma = 1.0;
  double nbar = 0.0;
  double dt = 1e-3;
  std::size_t n_steps = 100;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;

  double duration() const { return dt * static_cast<double>(n_steps); }
};

/// Throws ConfigError unless gamma dt <= 0.01, dt > 0 and there is at least one path and one step.
void validate(const LangevinSpec& spec);

/// How the kernel part of the stochastic entropy is evaluated.
enum class KernelRatio {
  /// (|alpha|^2 - |alpha'|^2) / (nbar + 1/2), exact to O(dt^2) per step.
  Truncated,
  /// Log-ratio of the full Euler propagators.
  Full,
};

/// Noise convention for dephasing trajectories.
enum class DephasingNoise {
  /// dA = (-i omega - lambda) A dt + i sqrt(2 lambda) A* dW
  Conjugate,
  /// dA = (-i omega - lambda/2) A dt + i sqrt(lambda) A dW, the phase diffusion whose
  /// Fokker-Planck equation is the dephasing dissipator.
  Phase,
};

enum class PathKind { Thermal, Dephasing };

struct PathRecord {
  PathKind kind = PathKind::Thermal;
  /// A(t_k) for k = 0..n_steps; empty unless samples were kept.
  std::vector<cplx> samples;
  double sigma = 0.0;
  double weight = 1.0;
};

/// Ensemble statistics of A(t_k) at one recorded time.
struct TimeMoments {
  double t = 0.0;
  cplx mean_a;
  /// Standard errors of Re <A> and Im <A> packed as a complex number.
  cplx stderr_a;
  double mean_abs2 = 0.0;
  double stderr_abs2 = 0.0;
  cplx mean_a2;
};

struct TrajectoryEnsemble {
  PathKind kind = PathKind::Thermal;
  std::vector<double> times;
  std::vector<PathRecord> paths;
  std::vector<TimeMoments> moments;
  KernelRatio kernel = KernelRatio::Truncated;
  bool has_sigma = false;
};

struct SampleOptions {
  bool keep_samples = false;
  bool compute_sigma = true;
  unsigned threads = 1;
  KernelRatio kernel = KernelRatio::Truncated;
};

/// Euler-Maruyama paths with complex increments dxi = (N1 + i N2) sqrt(dt/2), started from exact
/// samples of the initial Gaussian. Path i draws from mt19937_64 seeded by splitmix64(seed, i),
/// so results are bit-identical for any thread count.
TrajectoryEnsemble sample_paths(const LangevinSpec& spec, const GaussianState& initial,
                                const SampleOptions& options = {});

/// Euler transition density
///   K(a'|a) = e^{gamma dt} / (pi gamma sigma dt) exp(-|a'(1 + dt c) - a|^2 / (gamma sigma dt)),  c = i omega + gamma/2.
double propagator_density(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from);

/// ln K(a'|a) - ln K(a*|a'*) computed from propagator_density's closed form.
double propagator_log_ratio(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from);

/// Kernel contribution of one step under the chosen ratio.
double kernel_log_ratio(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from, KernelRatio kernel);

/// Sum of kernel_log_ratio over consecutive samples.
double kernel_sigma(const std::vector<cplx>& samples, const LangevinSpec& spec,
                    KernelRatio kernel = KernelRatio::Truncated);

/// Stochastic entropy of a recorded path against the Gaussian background W(alpha, t_k):
///   sum_k ln W(A_k, t_k) - ln W(A_{k+1}, t_{k+1}) + kernel term.
/// The background must share the path's time grid.
double accumulate_sigma(const PathRecord& path, const MomentTrajectory& background, const LangevinSpec& spec,
                        KernelRatio kernel = KernelRatio::Truncated);

/// Background Wigner evolution on the spec's time grid.
MomentTrajectory langevin_background(const LangevinSpec& spec, const GaussianState& initial);

struct FluctuationEstimate {
  /// Jackknife mean and standard error of e^{-Sigma}.
  double mean = 0.0;
  double stderr = 0.0;
  double mean_sigma = 0.0;
  double stderr_sigma = 0.0;
  std::size_t n_paths = 0;
  std::size_t blocks = 0;
  /// <Sigma> >= -3 stderr(Sigma)
  bool jensen_ok = true;
};

/// Blocked jackknife (at most 100 blocks) over the ensemble's Sigma values.
FluctuationEstimate fluctuation_theorem_estimator(const TrajectoryEnsemble& ensemble);

struct DephasingSpec {
  double lambda = 1.0;
  double omega = 0.0;
  double dt = 1e-3;
  std::size_t n_steps = 100;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  DephasingNoise noise = DephasingNoise::Conjugate;
};

void validate(const DephasingSpec& spec);

/// Euler-Maruyama (Ito) dephasing paths with real noise. The free rotation is applied exactly,
/// so lambda = 0 conserves |A| on every path. No stochastic entropy is defined for these paths.
TrajectoryEnsemble dephasing_paths(const DephasingSpec& spec, const GaussianState& initial,
                                   const SampleOptions& options = {});

}  // namespace wflux
