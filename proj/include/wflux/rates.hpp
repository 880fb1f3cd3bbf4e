#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string_view>

#include "wflux/model.hpp"
#include "wflux/phasespace.hpp"

namespace wflux {

enum class CurrentKind { ThermalJ, SqueezedJz, SqueezedJb, DephasingI };

/// Irreversible probability current of the bath at a phase point.
///
///   ThermalJ   (gamma/2)[alpha W + (nbar + 1/2) dW/dalpha*]
///   SqueezedJz (gamma/2)[alpha W + (N + 1/2) dW/dalpha* + M_t dW/dalpha]
///   SqueezedJb J_z cosh r + J_z* e^{i(theta - 2 omega_s t)} sinh r
///   DephasingI (lambda/2) alpha [alpha* dW/dalpha* - alpha dW/dalpha]
///
/// ThermalJ accepts a squeezed bath too and then uses its nbar (the alpha-representation J).
cplx current_eval(CurrentKind kind, const GaussianState& state, const BathSpec& bath, double t, PhasePoint p);

/// J_b written through the thermal current: J cosh r + [gamma alpha* W - J*] e^{i(theta - 2 omega_s t)} sinh r.
cplx squeezed_current_from_thermal(const GaussianState& state, const SqueezedBath& bath, double t, PhasePoint p);

/// Entropy production rate from Gaussian moments (Wick expansion of the current integral).
double pi_closed_form(const GaussianState& state, const BathSpec& bath, double t);

struct QuadratureSpec {
  std::size_t nodes = 201;
  /// Half-width of the integration box in units of the largest quadrature standard deviation.
  double half_width_sigmas = 8.0;
};

/// Entropy production rate by direct tensor Gauss-Legendre quadrature of the current integral.
double pi_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid = {});
/// Entropy flux by quadrature: (gamma/sigma) int |alpha|^2 W - gamma for a thermal bath,
/// int (J_z*, J_z) A^{-1} (alpha, alpha*)^T for a squeezed one, 0 for dephasing.
double phi_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid = {});
/// dS/dt = 2 Re int J_bath d(ln W)/dalpha by quadrature (the Hamiltonian part integrates to zero).
double dsdt_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid = {});

/// Hermitian 2x2 matrix [[a, b], [conj(b), a]] in the alpha basis.
struct BathCovariance {
  double diagonal;
  cplx off_diagonal;

  std::array<double, 2> eigenvalues() const;
  double det() const { return diagonal * diagonal - std::norm(off_diagonal); }
};

/// A = [[N + 1/2, M_t], [M_t*, N + 1/2]], the covariance of the squeezed Gibbs state.
BathCovariance bath_covariance(const BathSpec& bath, double t);

/// Entropy production as the a-representation quadratic form (2/gamma) int (J_z*, J_z) A^{-1} (J_z, J_z*)^T / W.
double pi_quadratic_form(const GaussianState& state, const BathSpec& bath, double t);

/// Entropy flux rate from second moments. Zero for dephasing.
double phi_rate(const GaussianState& state, const BathSpec& bath, double t);
/// phi_rate() written in terms of the raw moments <a^dag a> and <aa>; valid for any W.
double phi_rate_moments(double number, cplx anomalous, const BathSpec& bath, double t);

/// Rate of change of the Wigner entropy, (s ds/dt - Re(m* dm/dt)) / det Theta.
double entropy_rate(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t);

struct SteadyStatePi {
  double instantaneous;
  double time_averaged;
};

/// Steady-state entropy production of the pumped cavity in a squeezed bath, sigma = nbar + 1/2:
///   2 kappa D_sc^2 sinh^2 2r / (kappa^2 + D_sc^2) + (2 kappa / sigma) |E|^2 cosh 2r / (kappa^2 + D_cp^2)
///   + (2 kappa / sigma) Re[E^2 e^{-i(2 D_ps t + theta)} / (kappa + i D_cp)^2] sinh 2r.
/// The time average is a 1024-sample trapezoid over one beat period pi / |D_ps|; the
/// oscillating term survives only when omega_p = omega_s.
SteadyStatePi steady_state_pi(const SqueezedBath& bath, const HamiltonianSpec& ham, double t);

/// |J_b|^2 / W^2 = kappa^2 D_cs^2 sinh^2(2r) |beta|^2 / (kappa^2 + D_cs^2 cosh^2 2r) at the unpumped steady state,
/// with beta = alpha cosh r + alpha* e^{i(theta - 2 omega_s t)} sinh r.
double jb_field_squared(const SqueezedBath& bath, const HamiltonianSpec& ham, double t, PhasePoint p);

/// A real number that may be +infinity by construction (never by overflow).
struct ExtendedReal {
  double value = 0.0;
  bool infinite = false;

  static ExtendedReal inf() { return {0.0, true}; }
};

struct VonNeumannRates {
  ExtendedReal phi_vn;
  ExtendedReal pi_vn_proxy;
  double temperature;
  double dsdt_vn;
};

/// Phi_vN = Phi_E / T for a thermal bath with T = omega_c / ln(1 + 1/nbar), and
/// Pi_vN = dS_vN/dt + Phi_vN with dS_vN/dt differenced along evolve(). Infinite at nbar = 0.
VonNeumannRates vn_rates(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t);

enum class RateMethod { ClosedForm, Quadrature, QuadraticForm };

std::string_view to_string(RateMethod method);

struct RateReport {
  double pi = 0.0;
  double phi = 0.0;
  double dsdt = 0.0;
  double phi_e = 0.0;
  double entropy = 0.0;
  /// Only defined for thermal baths.
  std::optional<ExtendedReal> phi_vn;
  RateMethod method = RateMethod::ClosedForm;
  /// dS/dt - (Pi - Phi)
  double balance_residual = 0.0;
};

/// Balance tolerance used by rate_report() for each method.
double balance_tolerance(RateMethod method);

/// Assembles every rate at one instant and checks dS/dt = Pi - Phi; throws AccuracyError otherwise.
RateReport rate_report(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t,
                       RateMethod method, const QuadratureSpec& grid = {});

}  // namespace wflux
