#include "wflux/rates.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "wflux/errors.hpp"
#include "wflux/quadrature.hpp"

namespace wflux {

namespace {

constexpr cplx kI{0.0, 1.0};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// E|c0 + c1 da + c2 da*|^2 for a Gaussian with covariance (s, m).
double affine_norm2(cplx c0, cplx c1, cplx c2, const GaussianState& st) {
  return std::norm(c0) + (std::norm(c1) + std::norm(c2)) * st.s() + 2.0 * std::real(c1 * std::conj(c2) * st.m());
}

// E[(c0 + c1 da + c2 da*)^2]
cplx affine_square(cplx c0, cplx c1, cplx c2, const GaussianState& st) {
  return c0 * c0 + c1 * c1 * st.m() + c2 * c2 * std::conj(st.m()) + 2.0 * c1 * c2 * st.s();
}

// alpha + (N + 1/2) dlnW/dalpha* + M dlnW/dalpha = mu + a1 da + a2 da*
struct SqueezedDrift {
  cplx a1;
  cplx a2;
};

SqueezedDrift squeezed_drift(const GaussianState& st, double n_half, cplx M) {
  const double det = st.det();
  const cplx a1 = 1.0 - n_half * st.s() / det + M * std::conj(st.m()) / det;
  const cplx a2 = n_half * st.m() / det - M * st.s() / det;
  return {a1, a2};
}

// Polynomial in (da, da*) of total degree <= 4: coef[j][k] multiplies da^j da*^k.
struct WickPoly {
  std::array<std::array<cplx, 5>, 5> coef{};

  WickPoly conj() const {
    WickPoly out;
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 5; ++k) out.coef[k][j] = std::conj(coef[j][k]);
    return out;
  }

  WickPoly operator*(const WickPoly& o) const {
    WickPoly out;
    for (int j = 0; j < 5; ++j)
      for (int k = 0; k < 5; ++k) {
        if (coef[j][k] == 0.0) continue;
        for (int p = 0; p + j < 5; ++p)
          for (int q = 0; q + k < 5; ++q) {
            if (o.coef[p][q] == 0.0) continue;
            if (j + k + p + q > 4) throw UnsupportedError("Wick product exceeds degree 4");
            out.coef[j + p][k + q] += coef[j][k] * o.coef[p][q];
          }
      }
    return out;
  }

  cplx expectation(const GaussianState& st) const {
    cplx total = 0.0;
    for (int j = 0; j < 5; ++j)
      for (int k = 0; j + k < 5; ++k) {
        if (coef[j][k] != 0.0) total += coef[j][k] * central_moment(st, j, k);
      }
    return total;
  }
};

double pi_dephasing_wick(const GaussianState& st, double lambda) {
  // Z = alpha* dlnW/dalpha* = -(mu* + da*)(s da - m da*) / det; the dephasing
  // production is (lambda/2) E|Z - Z*|^2 = lambda (E|Z|^2 - Re E[Z^2]).
  const double det = st.det();
  WickPoly z;
  z.coef[1][0] = -std::conj(st.mu()) * st.s() / det;
  z.coef[0][1] = std::conj(st.mu()) * st.m() / det;
  z.coef[1][1] = -st.s() / det;
  z.coef[0][2] = st.m() / det;
  const double z_norm = std::real((z * z.conj()).expectation(st));
  const double z_sq = std::real((z * z).expectation(st));
  return lambda * (z_norm - z_sq);
}

struct LocalField {
  double w;
  LogGradient grad;
};

LocalField local_field(const GaussianState& st, PhasePoint p) {
  return {wigner_eval(st, p), wigner_log_gradient(st, p)};
}

// Same gradients with W = 1, so currents come out as J / W; keeps |J|^2 / W finite where W underflows.
LocalField per_unit_w(const LocalField& f) { return {1.0, f.grad}; }

cplx thermal_current(const LocalField& f, cplx alpha, double gamma, double nbar) {
  return 0.5 * gamma * f.w * (alpha + (nbar + 0.5) * f.grad.d_alpha_conj);
}

cplx squeezed_jz(const LocalField& f, cplx alpha, const SqueezedBath& b, double t) {
  return 0.5 * b.gamma * f.w * (alpha + (b.N() + 0.5) * f.grad.d_alpha_conj + b.M(t) * f.grad.d_alpha);
}

cplx squeezed_jb(const LocalField& f, cplx alpha, const SqueezedBath& b, double t) {
  const cplx jz = squeezed_jz(f, alpha, b, t);
  return jz * std::cosh(b.r) + std::conj(jz) * std::polar(1.0, b.phase(t)) * std::sinh(b.r);
}

cplx dephasing_current(const LocalField& f, cplx alpha, double lambda) {
  const cplx x = std::conj(alpha) * f.grad.d_alpha_conj - alpha * f.grad.d_alpha;
  return 0.5 * lambda * alpha * f.w * x;
}

Box integration_box(const GaussianState& st, const QuadratureSpec& grid) {
  if (grid.nodes < 2) throw ConfigError("quadrature needs at least two nodes per axis");
  const double half = grid.half_width_sigmas * st.max_quadrature_stddev();
  const double var_x = 0.5 * (st.s() + st.m().real());
  const double var_y = 0.5 * (st.s() - st.m().real());
  const double outside = std::erfc(half / std::sqrt(2.0 * var_x)) + std::erfc(half / std::sqrt(2.0 * var_y));
  if (outside > 1e-10) {
    throw AccuracyError("quadrature box leaves probability mass " + std::to_string(outside) +
                        " outside; increase half_width_sigmas");
  }
  return {st.mu().real(), st.mu().imag(), half, half};
}

double integrate(const GaussianState& st, const QuadratureSpec& grid,
                 const std::function<double(cplx, const LocalField&)>& integrand) {
  const Box box = integration_box(st, grid);
  return integrate_box(
      [&](double x, double y) {
        const cplx alpha{x, y};
        return integrand(alpha, local_field(st, PhasePoint(alpha)));
      },
      box, grid.nodes);
}

const SqueezedBath& require_squeezed(const BathSpec& bath, const char* what) {
  const auto* sq = std::get_if<SqueezedBath>(&bath);
  if (!sq) throw UsageError(std::string(what) + " requires a squeezed bath");
  return *sq;
}

}  // namespace

cplx current_eval(CurrentKind kind, const GaussianState& state, const BathSpec& bath, double t, PhasePoint p) {
  validate(bath);
  const LocalField f = local_field(state, p);
  switch (kind) {
    case CurrentKind::ThermalJ:
      if (const auto* th = std::get_if<ThermalBath>(&bath)) return thermal_current(f, p.alpha, th->gamma, th->nbar);
      if (const auto* sq = std::get_if<SqueezedBath>(&bath)) return thermal_current(f, p.alpha, sq->gamma, sq->nbar);
      throw UsageError("thermal current needs a thermal or squeezed bath");
    case CurrentKind::SqueezedJz:
      if (const auto* th = std::get_if<ThermalBath>(&bath)) return squeezed_jz(f, p.alpha, as_squeezed(*th), t);
      return squeezed_jz(f, p.alpha, require_squeezed(bath, "J_z"), t);
    case CurrentKind::SqueezedJb:
      if (const auto* th = std::get_if<ThermalBath>(&bath)) return squeezed_jb(f, p.alpha, as_squeezed(*th), t);
      return squeezed_jb(f, p.alpha, require_squeezed(bath, "J_b"), t);
    case CurrentKind::DephasingI:
      if (const auto* dp = std::get_if<DephasingBath>(&bath)) return dephasing_current(f, p.alpha, dp->lambda);
      throw UsageError("dephasing current needs a dephasing bath");
  }
  throw UsageError("unknown current kind");
}

cplx squeezed_current_from_thermal(const GaussianState& state, const SqueezedBath& bath, double t, PhasePoint p) {
  validate(bath);
  const LocalField f = local_field(state, p);
  const cplx j = thermal_current(f, p.alpha, bath.gamma, bath.nbar);
  const cplx rest = bath.gamma * std::conj(p.alpha) * f.w - std::conj(j);
  return j * std::cosh(bath.r) + rest * std::polar(1.0, bath.phase(t)) * std::sinh(bath.r);
}

double pi_closed_form(const GaussianState& state, const BathSpec& bath, double t) {
  validate(bath);
  return std::visit(
      Overloaded{
          [&](const ThermalBath& b) {
            const double sigma = b.nbar + 0.5;
            const double det = state.det();
            const cplx c1 = 1.0 - sigma * state.s() / det;
            const cplx c2 = sigma * state.m() / det;
            return b.gamma / sigma * affine_norm2(state.mu(), c1, c2, state);
          },
          [&](const SqueezedBath& b) {
            // J_b / W = (gamma/2)[cosh r Z + e^{i phase} sinh r Z*], Z = mu + a1 da + a2 da*.
            const double sigma = b.nbar + 0.5;
            const auto d = squeezed_drift(state, b.N() + 0.5, b.M(t));
            const cplx e = std::polar(1.0, b.phase(t));
            const double ch = std::cosh(b.r);
            const double sh = std::sinh(b.r);
            const cplx b0 = ch * state.mu() + e * sh * std::conj(state.mu());
            const cplx b1 = ch * d.a1 + e * sh * std::conj(d.a2);
            const cplx b2 = ch * d.a2 + e * sh * std::conj(d.a1);
            return b.gamma / sigma * affine_norm2(b0, b1, b2, state);
          },
          [&](const DephasingBath& b) { return pi_dephasing_wick(state, b.lambda); },
      },
      bath);
}

double pi_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid) {
  validate(bath);
  return std::visit(Overloaded{
                        [&](const ThermalBath& b) {
                          const double sigma = b.nbar + 0.5;
                          return 4.0 / (b.gamma * sigma) * integrate(state, grid, [&](cplx a, const LocalField& f) {
                                   return f.w * std::norm(thermal_current(per_unit_w(f), a, b.gamma, b.nbar));
                                 });
                        },
                        [&](const SqueezedBath& b) {
                          const double sigma = b.nbar + 0.5;
                          return 4.0 / (b.gamma * sigma) * integrate(state, grid, [&](cplx a, const LocalField& f) {
                                   return f.w * std::norm(squeezed_jb(per_unit_w(f), a, b, t));
                                 });
                        },
                        [&](const DephasingBath& b) {
                          return 2.0 / b.lambda * integrate(state, grid, [&](cplx a, const LocalField& f) {
                                   const double r2 = std::norm(a);
                                   if (r2 == 0.0) return 0.0;
                                   return f.w * std::norm(dephasing_current(per_unit_w(f), a, b.lambda)) / r2;
                                 });
                        },
                    },
                    bath);
}

double phi_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid) {
  validate(bath);
  return std::visit(
      Overloaded{
          [&](const ThermalBath& b) {
            const double sigma = b.nbar + 0.5;
            const double second = integrate(state, grid, [](cplx a, const LocalField& f) { return std::norm(a) * f.w; });
            return b.gamma / sigma * second - b.gamma;
          },
          [&](const SqueezedBath& b) {
            const auto A = bath_covariance(bath, t);
            return 2.0 / A.det() * integrate(state, grid, [&](cplx a, const LocalField& f) {
                     const cplx jz = squeezed_jz(f, a, b, t);
                     return std::real(std::conj(jz) * (A.diagonal * a - A.off_diagonal * std::conj(a)));
                   });
          },
          [&](const DephasingBath&) { return 0.0; },
      },
      bath);
}

double dsdt_quadrature(const GaussianState& state, const BathSpec& bath, double t, const QuadratureSpec& grid) {
  validate(bath);
  return 2.0 * integrate(state, grid, [&](cplx a, const LocalField& f) {
           const cplx j = std::visit(Overloaded{
                                         [&](const ThermalBath& b) { return thermal_current(f, a, b.gamma, b.nbar); },
                                         [&](const SqueezedBath& b) { return squeezed_jz(f, a, b, t); },
                                         [&](const DephasingBath& b) { return dephasing_current(f, a, b.lambda); },
                                     },
                                     bath);
           return std::real(j * f.grad.d_alpha);
         });
}

std::array<double, 2> BathCovariance::eigenvalues() const {
  const double off = std::abs(off_diagonal);
  return {diagonal - off, diagonal + off};
}

BathCovariance bath_covariance(const BathSpec& bath, double t) {
  validate(bath);
  return std::visit(Overloaded{
                        [](const ThermalBath& b) { return BathCovariance{b.nbar + 0.5, 0.0}; },
                        [&](const SqueezedBath& b) { return BathCovariance{b.N() + 0.5, b.M(t)}; },
                        [](const DephasingBath&) -> BathCovariance {
                          throw UsageError("dephasing has no bath covariance");
                        },
                    },
                    bath);
}

double pi_quadratic_form(const GaussianState& state, const BathSpec& bath, double t) {
  const BathCovariance A = bath_covariance(bath, t);
  const double gamma = std::holds_alternative<ThermalBath>(bath) ? std::get<ThermalBath>(bath).gamma
                                                                  : std::get<SqueezedBath>(bath).gamma;
  const double det_a = A.det();
  if (!(A.diagonal > 0.0) || !(det_a > 0.0)) throw DomainError("bath covariance is not positive definite");

  // J_z = (gamma/2) W Z; (Z*, Z) A^{-1} (Z, Z*)^T = [2 a |Z|^2 - 2 Re(M* Z^2)] / det A.
  const auto d = squeezed_drift(state, A.diagonal, A.off_diagonal);
  const double z_norm = affine_norm2(state.mu(), d.a1, d.a2, state);
  const cplx z_sq = affine_square(state.mu(), d.a1, d.a2, state);
  return gamma / det_a * (A.diagonal * z_norm - std::real(std::conj(A.off_diagonal) * z_sq));
}

double phi_rate(const GaussianState& state, const BathSpec& bath, double t) {
  return phi_rate_moments(state.number(), state.anomalous(), bath, t);
}

double phi_rate_moments(double number, cplx anomalous, const BathSpec& bath, double t) {
  validate(bath);
  return std::visit(Overloaded{
                        [&](const ThermalBath& b) { return b.gamma * (number - b.nbar) / (b.nbar + 0.5); },
                        [&](const SqueezedBath& b) {
                          const double sigma = b.nbar + 0.5;
                          const double sh = std::sinh(b.r);
                          return b.gamma / sigma *
                                 (std::cosh(2.0 * b.r) * number - b.nbar + sh * sh -
                                  std::real(std::conj(b.M(t)) * anomalous) / sigma);
                        },
                        [](const DephasingBath&) { return 0.0; },
                    },
                    bath);
}

double entropy_rate(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  const auto d = moment_rhs(state, bath, ham, t);
  return (state.s() * d.d_s - std::real(std::conj(state.m()) * d.d_m)) / state.det();
}

SteadyStatePi steady_state_pi(const SqueezedBath& bath, const HamiltonianSpec& ham, double t) {
  validate(bath);
  validate(ham);
  const double k = 0.5 * bath.gamma;
  const double sigma = bath.nbar + 0.5;
  const double d_sc = -detuning_cs(bath, ham);
  const double d_cp = detuning_cp(ham);
  const double d_ps = detuning_ps(bath, ham);
  const cplx e = ham.pump ? ham.pump->amplitude : cplx{};
  const double sh2 = std::sinh(2.0 * bath.r);
  const double ch2 = std::cosh(2.0 * bath.r);

  const double squeezing = 2.0 * k * d_sc * d_sc * sh2 * sh2 / (k * k + d_sc * d_sc);
  const double pumping = 2.0 * k / sigma * std::norm(e) * ch2 / (k * k + d_cp * d_cp);
  const cplx denom = cplx(k, d_cp) * cplx(k, d_cp);
  auto beat = [&](double time) {
    return 2.0 * k / sigma * std::real(e * e * std::polar(1.0, -(2.0 * d_ps * time + bath.theta)) / denom) * sh2;
  };

  SteadyStatePi out;
  out.instantaneous = squeezing + pumping + beat(t);
  if (e == 0.0 || d_ps == 0.0) {
    out.time_averaged = out.instantaneous;
  } else {
    constexpr int kSamples = 1024;
    const double period = kPi / std::abs(d_ps);
    double acc = 0.0;
    for (int i = 0; i < kSamples; ++i) acc += beat(t + period * i / kSamples);
    out.time_averaged = squeezing + pumping + acc / kSamples;
  }
  return out;
}

double jb_field_squared(const SqueezedBath& bath, const HamiltonianSpec& ham, double t, PhasePoint p) {
  validate(bath);
  if (ham.pump && ham.pump->amplitude != 0.0) throw UsageError("the J_b field closed form requires the pump off");
  const double k = 0.5 * bath.gamma;
  const double d = detuning_cs(bath, ham);
  const double sh2 = std::sinh(2.0 * bath.r);
  const double ch2 = std::cosh(2.0 * bath.r);
  const cplx beta = p.alpha * std::cosh(bath.r) + std::conj(p.alpha) * std::polar(1.0, bath.phase(t)) * std::sinh(bath.r);
  return k * k * d * d * sh2 * sh2 * std::norm(beta) / (k * k + d * d * ch2 * ch2);
}

VonNeumannRates vn_rates(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  const auto* th = std::get_if<ThermalBath>(&bath);
  if (!th) throw UnsupportedError("von Neumann flux is defined for thermal baths only");
  validate(bath);
  if (!(ham.omega_c > 0.0)) throw DomainError("von Neumann rates need omega_c > 0 to define a temperature");

  VonNeumannRates out;
  out.temperature = temperature_from_nbar(th->nbar, ham.omega_c);
  const double phi_e = energy_flux(state, bath, ham, t);
  if (phi_e == 0.0) {
    out.phi_vn = {0.0, false};
  } else if (out.temperature == 0.0) {
    out.phi_vn = ExtendedReal::inf();
  } else {
    out.phi_vn = {phi_e / out.temperature, false};
  }

  // Second-order one-sided difference of S_vN along the moment flow.
  const double h = 1e-4 / std::max({th->gamma, ham.omega_c, 1.0});
  const auto traj = evolve_steps(state, bath, ham, t, t + 2.0 * h, 2);
  const double s0 = von_neumann_entropy(traj.states[0]);
  const double s1 = von_neumann_entropy(traj.states[1]);
  const double s2 = von_neumann_entropy(traj.states[2]);
  out.dsdt_vn = (-3.0 * s0 + 4.0 * s1 - s2) / (2.0 * h);
  out.pi_vn_proxy = out.phi_vn.infinite ? ExtendedReal::inf() : ExtendedReal{out.dsdt_vn + out.phi_vn.value, false};
  return out;
}

std::string_view to_string(RateMethod method) {
  switch (method) {
    case RateMethod::ClosedForm:
      return "closed_form";
    case RateMethod::Quadrature:
      return "quadrature";
    case RateMethod::QuadraticForm:
      return "quadratic_form";
  }
  return "unknown";
}

double balance_tolerance(RateMethod method) { return method == RateMethod::Quadrature ? 1e-6 : 1e-9; }

RateReport rate_report(const GaussianState& state, const BathSpec& bath, const HamiltonianSpec& ham, double t,
                       RateMethod method, const QuadratureSpec& grid) {
  validate(bath);
  validate(ham);
  RateReport rep;
  rep.method = method;
  switch (method) {
    case RateMethod::ClosedForm:
      rep.pi = pi_closed_form(state, bath, t);
      rep.phi = phi_rate(state, bath, t);
      rep.dsdt = entropy_rate(state, bath, ham, t);
      break;
    case RateMethod::Quadrature:
      rep.pi = pi_quadrature(state, bath, t, grid);
      rep.phi = phi_quadrature(state, bath, t, grid);
      rep.dsdt = dsdt_quadrature(state, bath, t, grid);
      break;
    case RateMethod::QuadraticForm:
      if (std::holds_alternative<DephasingBath>(bath)) {
        throw UsageError("the quadratic-form route needs a thermal or squeezed bath");
      }
      rep.pi = pi_quadratic_form(state, bath, t);
      rep.phi = phi_rate(state, bath, t);
      rep.dsdt = entropy_rate(state, bath, ham, t);
      break;
  }
  rep.phi_e = energy_flux(state, bath, ham, t);
  rep.entropy = wigner_entropy(state);
  if (std::holds_alternative<ThermalBath>(bath) && ham.omega_c > 0.0) {
    rep.phi_vn = vn_rates(state, bath, ham, t).phi_vn;
  }
  rep.balance_residual = rep.dsdt - (rep.pi - rep.phi);
  const double scale = std::max(1.0, std::abs(rep.pi) + std::abs(rep.phi));
  if (std::abs(rep.balance_residual) > balance_tolerance(method) * scale) {
    throw AccuracyError("entropy balance violated by " + std::to_string(rep.balance_residual) + " (" +
                        std::string(to_string(method)) + ")");
  }
  return rep;
}

}  // namespace wflux
