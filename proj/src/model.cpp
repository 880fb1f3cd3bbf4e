#include "wflux/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wflux/errors.hpp"

namespace wflux {

namespace {

constexpr cplx kI{0.0, 1.0};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct Moments {
  cplx mu;
  double s;
  cplx m;
};

Moments moments_of(const GaussianState& st) { return {st.mu(), st.s(), st.m()}; }

// Contributions of the bath alone to d<a>/dt, d<a^dag a>/dt and d<aa>/dt.
struct RawRates {
  cplx d_a;
  double d_number;
  cplx d_aa;
};

RawRates bath_rates(const Moments& x, const BathSpec& bath, double t) {
  const double number = x.s + std::norm(x.mu) - 0.5;
  const cplx aa = x.m + x.mu * x.mu;
  return std::visit(Overloaded{
                        [&](const ThermalBath& b) {
                          return RawRates{-0.5 * b.gamma * x.mu, b.gamma * (b.nbar - number), -b.gamma * aa};
                        },
                        [&](const SqueezedBath& b) {
                          return RawRates{-0.5 * b.gamma * x.mu, b.gamma * (b.N() - number),
                                          -b.gamma * aa + b.gamma * b.M(t)};
                        },
                        [&](const DephasingBath& b) {
                          return RawRates{-0.5 * b.lambda * x.mu, 0.0, -2.0 * b.lambda * aa};
                        },
                    },
                    bath);
}

MomentDerivatives rhs(const Moments& x, const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  const RawRates b = bath_rates(x, bath, t);
  const cplx drive = ham.drive(t);
  const cplx aa = x.m + x.mu * x.mu;

  const cplx d_a = b.d_a - kI * ham.omega_c * x.mu + drive;
  const double d_number = b.d_number + 2.0 * std::real(drive * std::conj(x.mu));
  const cplx d_aa = b.d_aa - 2.0 * kI * ham.omega_c * aa + 2.0 * drive * x.mu;

  MomentDerivatives out;
  out.d_mu = d_a;
  out.d_s = d_number - 2.0 * std::real(std::conj(x.mu) * d_a);
  out.d_m = d_aa - 2.0 * x.mu * d_a;
  out.d_number = d_number;
  return out;
}

Moments axpy(const Moments& x, double h, const MomentDerivatives& k) {
  return {x.mu + h * k.d_mu, x.s + h * k.d_s, x.m + h * k.d_m};
}

double fastest_rate(const BathSpec& bath, const HamiltonianSpec& ham) {
  double rate = std::abs(ham.omega_c);
  if (ham.pump) rate = std::max(rate, std::abs(ham.pump->omega_p));
  std::visit(Overloaded{
                 [&](const ThermalBath& b) { rate = std::max(rate, b.gamma); },
                 [&](const SqueezedBath& b) { rate = std::max({rate, b.gamma, 2.0 * std::abs(b.omega_s)}); },
                 [&](const DephasingBath& b) { rate = std::max(rate, b.lambda); },
             },
             bath);
  return rate;
}

void check_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw DomainError(std::string(what) + " must be finite");
}

}  // namespace

double SqueezedBath::N() const { return (nbar + 0.5) * std::cosh(2.0 * r) - 0.5; }

double SqueezedBath::phase(double t) const { return theta - 2.0 * omega_s * t; }

cplx SqueezedBath::M(double t) const { return -(nbar + 0.5) * std::sinh(2.0 * r) * std::polar(1.0, phase(t)); }

void validate(const BathSpec& bath) {
  std::visit(Overloaded{
                 [](const ThermalBath& b) {
                   if (!(b.gamma > 0.0) || !std::isfinite(b.gamma)) throw DomainError("thermal bath needs gamma > 0");
                   if (!(b.nbar >= 0.0) || !std::isfinite(b.nbar)) throw DomainError("thermal bath needs nbar >= 0");
                 },
                 [](const SqueezedBath& b) {
                   if (!(b.gamma > 0.0) || !std::isfinite(b.gamma)) throw DomainError("squeezed bath needs gamma > 0");
                   if (!(b.nbar >= 0.0) || !std::isfinite(b.nbar)) throw DomainError("squeezed bath needs nbar >= 0");
                   if (!(b.r >= 0.0) || !std::isfinite(b.r)) throw DomainError("squeezed bath needs r >= 0");
                   check_finite(b.theta, "squeezing angle");
                   check_finite(b.omega_s, "squeezing frequency");
                 },
                 [](const DephasingBath& b) {
                   if (!(b.lambda > 0.0) || !std::isfinite(b.lambda)) {
                     throw DomainError("dephasing bath needs lambda > 0");
                   }
                 },
             },
             bath);
}

SqueezedBath as_squeezed(const ThermalBath& bath) { return SqueezedBath{bath.gamma, bath.nbar, 0.0, 0.0, 0.0}; }

cplx HamiltonianSpec::drive(double t) const {
  if (!pump) return 0.0;
  return pump->amplitude * std::polar(1.0, -pump->omega_p * t);
}

void validate(const HamiltonianSpec& ham) {
  check_finite(ham.omega_c, "cavity frequency");
  if (ham.pump) {
    check_finite(ham.pump->omega_p, "pump frequency");
    check_finite(ham.pump->amplitude.real(), "pump amplitude");
    check_finite(ham.pump->amplitude.imag(), "pump amplitude");
  }
}

double kappa(const BathSpec& bath) {
  return std::visit(Overloaded{
                        [](const ThermalBath& b) { return 0.5 * b.gamma; },
                        [](const SqueezedBath& b) { return 0.5 * b.gamma; },
                        [](const DephasingBath&) -> double {
                          throw UsageError("kappa is defined for thermal and squeezed baths only");
                        },
                    },
                    bath);
}

double detuning_cp(const HamiltonianSpec& ham) { return ham.pump ? ham.omega_c - ham.pump->omega_p : 0.0; }

double detuning_cs(const SqueezedBath& bath, const HamiltonianSpec& ham) { return ham.omega_c - bath.omega_s; }

double detuning_ps(const SqueezedBath& bath, const HamiltonianSpec& ham) {
  return (ham.pump ? ham.pump->omega_p : 0.0) - bath.omega_s;
}

double nbar_from_beta(double beta, double omega) { return 1.0 / std::expm1(beta * omega); }

double beta_from_nbar(double nbar, double omega) {
  if (nbar == 0.0) return std::numeric_limits<double>::infinity();
  return std::log1p(1.0 / nbar) / omega;
}

double temperature_from_nbar(double nbar, double omega) {
  if (nbar == 0.0) return 0.0;
  return omega / std::log1p(1.0 / nbar);
}

MomentDerivatives moment_rhs(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham,
                             double t) {
  return rhs(moments_of(state), bath, ham, t);
}

MomentTrajectory evolve_steps(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham,
                              double t0, double t1, std::size_t n_steps) {
  validate(bath);
  validate(ham);
  if (std::holds_alternative<DephasingBath>(bath)) {
    throw GaussianityNotPreserved(
        "dephasing does not preserve Gaussian states; use the Fokker-Planck grid for dephasing dynamics");
  }
  if (n_steps == 0 || !(t1 > t0)) throw ConfigError("evolve needs t1 > t0 and at least one step");

  const double h = (t1 - t0) / static_cast<double>(n_steps);
  const std::size_t clamps_before = physicality_clamp_count();

  MomentTrajectory out;
  out.times.reserve(n_steps + 1);
  out.states.reserve(n_steps + 1);
  out.times.push_back(t0);
  out.states.push_back(state);

  Moments x = moments_of(state);
  for (std::size_t k = 0; k < n_steps; ++k) {
    const double t = t0 + h * static_cast<double>(k);
    const auto k1 = rhs(x, bath, ham, t);
    const auto k2 = rhs(axpy(x, 0.5 * h, k1), bath, ham, t + 0.5 * h);
    const auto k3 = rhs(axpy(x, 0.5 * h, k2), bath, ham, t + 0.5 * h);
    const auto k4 = rhs(axpy(x, h, k3), bath, ham, t + h);
    x.mu += h / 6.0 * (k1.d_mu + 2.0 * k2.d_mu + 2.0 * k3.d_mu + k4.d_mu);
    x.s += h / 6.0 * (k1.d_s + 2.0 * k2.d_s + 2.0 * k3.d_s + k4.d_s);
    x.m += h / 6.0 * (k1.d_m + 2.0 * k2.d_m + 2.0 * k3.d_m + k4.d_m);

    const auto next = GaussianState::make(x.mu, x.s, x.m);
    x = moments_of(next);
    out.times.push_back(t0 + h * static_cast<double>(k + 1));
    out.states.push_back(next);
  }
  out.clamp_events = physicality_clamp_count() - clamps_before;
  return out;
}

MomentTrajectory evolve(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t0,
                        double t1, double dt_max) {
  if (!(dt_max > 0.0)) throw ConfigError("dt_max must be positive");
  if (!(t1 > t0)) throw ConfigError("evolve needs t1 > t0");
  const double rate = fastest_rate(bath, ham);
  const double dt = rate > 0.0 ? std::min(dt_max, 1e-3 / rate) : dt_max;
  const auto n = static_cast<std::size_t>(std::ceil((t1 - t0) / dt - 1e-9));
  return evolve_steps(state, bath, ham, t0, t1, std::max<std::size_t>(n, 1));
}

std::pair<BathSpec, HamiltonianSpec> to_rotating_frame(const BathSpec& bath, const HamiltonianSpec& ham,
                                                       double omega) {
  HamiltonianSpec h = ham;
  h.omega_c -= omega;
  if (h.pump) h.pump->omega_p -= omega;
  BathSpec b = bath;
  if (auto* sq = std::get_if<SqueezedBath>(&b)) sq->omega_s -= omega;
  return {b, h};
}

GaussianState steady_state(const SqueezedBath& bath, const HamiltonianSpec& ham, double t) {
  validate(bath);
  validate(ham);
  const double k = 0.5 * bath.gamma;
  const cplx mu = ham.drive(t) / cplx(k, detuning_cp(ham));
  const cplx m = k * bath.M(t) / cplx(k, detuning_cs(bath, ham));
  return GaussianState::make(mu, bath.N() + 0.5, m);
}

GaussianState steady_state(const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  return std::visit(Overloaded{
                        [&](const ThermalBath& b) { return steady_state(as_squeezed(b), ham, t); },
                        [&](const SqueezedBath& b) { return steady_state(b, ham, t); },
                        [&](const DephasingBath&) -> GaussianState {
                          throw UnsupportedError("dephasing has no unique steady state");
                        },
                    },
                    bath);
}

MomentDerivatives steady_state_derivative(const SqueezedBath& bath, const HamiltonianSpec& ham, double t) {
  const auto ss = steady_state(bath, ham, t);
  const double omega_p = ham.pump ? ham.pump->omega_p : 0.0;
  MomentDerivatives d;
  d.d_mu = -kI * omega_p * ss.mu();
  d.d_s = 0.0;
  d.d_m = -2.0 * kI * bath.omega_s * ss.m();
  d.d_number = 0.0;
  return d;
}

double energy_flux(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  validate(bath);
  const RawRates b = bath_rates(moments_of(state), bath, t);
  // -<D^dag(omega_c a^dag a)> - <D^dag(i E_t a^dag - i E_t^* a)>
  return -ham.omega_c * b.d_number + 2.0 * std::imag(ham.drive(t) * std::conj(b.d_a));
}

double pump_power(const GaussianState& state, const HamiltonianSpec& ham, double t) {
  if (!ham.pump) return 0.0;
  return 2.0 * ham.pump->omega_p * std::real(ham.drive(t) * std::conj(state.mu()));
}

}  // namespace wflux
