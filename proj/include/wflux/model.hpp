#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

#include "wflux/phasespace.hpp"

namespace wflux {

/// Thermal Lindblad bath: damping gamma, mean occupation nbar.
struct ThermalBath {
  double gamma = 1.0;
  double nbar = 0.0;
};

/// Broad-band squeezed bath with squeezing r e^{i theta} and carrier frequency omega_s.
///
/// In the a-representation it acts as a thermal bath with occupation N and
/// anomalous correlation M_t:
///   N + 1/2 = (nbar + 1/2) cosh 2r,   M_t = -(nbar + 1/2) e^{i(theta - 2 omega_s t)} sinh 2r.
struct SqueezedBath {
  double gamma = 1.0;
  double nbar = 0.0;
  double r = 0.0;
  double theta = 0.0;
  double omega_s = 0.0;

  double N() const;
  cplx M(double t) const;
  /// Phase theta - 2 omega_s t of the squeezing at time t.
  double phase(double t) const;
};

/// Number-operator dephasing at rate lambda.
struct DephasingBath {
  double lambda = 1.0;
};

using BathSpec = std::variant<ThermalBath, SqueezedBath, DephasingBath>;

/// Throws DomainError when a rate, occupation or squeezing parameter is out of range.
void validate(const BathSpec& bath);

/// The squeezed bath with r = 0 that is identical to a thermal bath.
SqueezedBath as_squeezed(const ThermalBath& bath);

/// Coherent pump i(E e^{-i omega_p t} a^dag - h.c.).
struct Pump {
  cplx amplitude;
  double omega_p = 0.0;
};

/// H = omega_c a^dag a plus an optional coherent pump.
///
/// The pump amplitude relates to the laser power P by |E| = sqrt(2 P kappa / omega_p)
/// (hbar = 1); the power itself is not stored.
struct HamiltonianSpec {
  double omega_c = 0.0;
  std::optional<Pump> pump;

  /// E e^{-i omega_p t}, or zero without a pump.
  cplx drive(double t) const;
};

void validate(const HamiltonianSpec& ham);

/// Amplitude decay rate gamma / 2 of a thermal or squeezed bath.
double kappa(const BathSpec& bath);

/// Delta_cp = omega_c - omega_p; zero without a pump.
double detuning_cp(const HamiltonianSpec& ham);
/// Delta_cs = omega_c - omega_s.
double detuning_cs(const SqueezedBath& bath, const HamiltonianSpec& ham);
/// Delta_ps = omega_p - omega_s.
double detuning_ps(const SqueezedBath& bath, const HamiltonianSpec& ham);

/// Bose occupation (e^{beta omega} - 1)^{-1}.
double nbar_from_beta(double beta, double omega);
/// Inverse of nbar_from_beta; returns +inf for nbar = 0.
double beta_from_nbar(double nbar, double omega);
/// Temperature omega / ln(1 + 1/nbar); zero for nbar = 0.
double temperature_from_nbar(double nbar, double omega);

/// Time derivatives of the Gaussian moments (mu, s, m).
struct MomentDerivatives {
  cplx d_mu;
  double d_s = 0.0;
  cplx d_m;
  /// d<a^dag a>/dt = d_s + 2 Re(mu* d_mu).
  double d_number = 0.0;
};

/// Exact moment equations for the bath plus Hamiltonian at time t.
///
/// Evaluating the dephasing generator at a Gaussian snapshot is allowed; only
/// flows are refused (see evolve()).
MomentDerivatives moment_rhs(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham,
                             double t);

/// Uniformly sampled solution of the moment equations.
struct MomentTrajectory {
  std::vector<double> times;
  std::vector<GaussianState> states;
  /// States clamped onto det Theta = 1/4 while integrating.
  std::size_t clamp_events = 0;

  double dt() const { return times.size() > 1 ? times[1] - times[0] : 0.0; }
};

/// Fixed-step RK4 over [t0, t1]. The step is min(dt_max, 1e-3 / fastest rate)
/// shrunk so it divides the interval evenly.
MomentTrajectory evolve(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t0,
                        double t1, double dt_max);

/// RK4 with exactly n_steps steps of size (t1 - t0) / n_steps.
MomentTrajectory evolve_steps(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham,
                              double t0, double t1, std::size_t n_steps);

/// Same physics seen from a frame rotating at omega: every frequency shifts by -omega.
/// States map by GaussianState::rotated(omega t).
std::pair<BathSpec, HamiltonianSpec> to_rotating_frame(const BathSpec& bath, const HamiltonianSpec& ham,
                                                       double omega);

/// Analytic lab-frame steady state of the (pumped) cavity in a squeezed or thermal bath.
GaussianState steady_state(const SqueezedBath& bath, const HamiltonianSpec& ham, double t);
GaussianState steady_state(const BathSpec& bath, const HamiltonianSpec& ham, double t);

/// Time derivative of steady_state(bath, ham, t); the steady state rotates in the lab frame.
MomentDerivatives steady_state_derivative(const SqueezedBath& bath, const HamiltonianSpec& ham, double t);

/// Energy flux from the system into the bath, -<D^dag(H)>.
///
/// Thermal with a free Hamiltonian gives gamma omega_c (<a^dag a> - nbar); at the
/// pumped squeezed steady state it equals <dH/dt> = 2 kappa omega_p |E|^2 / (kappa^2 + Delta_cp^2).
/// Dephasing commutes with a^dag a, so without a pump it is exactly zero.
double energy_flux(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t);

/// <dH/dt> = 2 omega_p Re(E_t mu*), the power injected by the pump.
double pump_power(const GaussianState& state, const HamiltonianSpec& ham, double t);

}  // namespace wflux
