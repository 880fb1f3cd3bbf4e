#include "wflux/fpgrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "wflux/errors.hpp"
#include "wflux/rates.hpp"

namespace wflux {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

constexpr double kTiny = 1e-300;

// K / W = P + Q dlnW/dalpha* + R dlnW/dalpha at a point.
struct Coefficients {
  cplx P;
  double Q = 0.0;
  cplx R;
};

Coefficients coefficients(cplx alpha, const BathSpec& bath, const HamiltonianSpec& ham, double t) {
  Coefficients c;
  c.P = cplx{0.0, ham.omega_c} * alpha - ham.drive(t);
  std::visit(Overloaded{
                 [&](const ThermalBath& b) {
                   c.P += 0.5 * b.gamma * alpha;
                   c.Q += 0.5 * b.gamma * (b.nbar + 0.5);
                 },
                 [&](const SqueezedBath& b) {
                   c.P += 0.5 * b.gamma * alpha;
                   c.Q += 0.5 * b.gamma * (b.N() + 0.5);
                   c.R += 0.5 * b.gamma * b.M(t);
                 },
                 [&](const DephasingBath&) {},
             },
             bath);
  return c;
}

double dephasing_rate(const BathSpec& bath) {
  const auto* d = std::get_if<DephasingBath>(&bath);
  return d ? d->lambda : 0.0;
}

// Dephasing flux (lambda / 2)(-y, x) G with G = dW/dtheta taken at cell corners. Each interior corner
// feeds its two x-faces and two y-faces with weights that cancel in sum x F_x + y F_y, so mass and
// <|alpha|^2> are conserved exactly; corners on the boundary carry no flux.
void add_dephasing(const GridField& f, const std::vector<double>& w, const std::vector<double>& u, double lambda,
                   std::vector<double>& div) {
  const std::size_t n = f.n;
  const double h = f.h();
  const std::size_t nv = n - 1;
  auto cell = [n](std::size_t i, std::size_t j) { return i * n + j; };
  // Corner (a, b) sits between cells a, a + 1 along x and b, b + 1 along y.
  std::vector<double> g(nv * nv);
  for (std::size_t a = 0; a < nv; ++a) {
    const double x0 = f.coord(a);
    const double x1 = f.coord(a + 1);
    for (std::size_t b = 0; b < nv; ++b) {
      const double y0 = f.coord(b);
      const double y1 = f.coord(b + 1);
      const std::size_t c00 = cell(a, b), c10 = cell(a + 1, b), c01 = cell(a, b + 1), c11 = cell(a + 1, b + 1);
      const bool log_form = w[c00] > kTiny && w[c10] > kTiny && w[c01] > kTiny && w[c11] > kTiny;
      const auto& v = log_form ? u : w;
      const double theta = 0.5 * (x0 * (v[c01] - v[c00]) + x1 * (v[c11] - v[c10])) / h -
                           0.5 * (y0 * (v[c10] - v[c00]) + y1 * (v[c11] - v[c01])) / h;
      g[a * nv + b] = log_form ? std::exp(0.25 * (u[c00] + u[c10] + u[c01] + u[c11])) * theta : theta;
    }
  }
  auto corner = [&](std::ptrdiff_t a, std::ptrdiff_t b) {
    if (a < 0 || b < 0 || a >= static_cast<std::ptrdiff_t>(nv) || b >= static_cast<std::ptrdiff_t>(nv)) return 0.0;
    return g[static_cast<std::size_t>(a) * nv + static_cast<std::size_t>(b)];
  };
  const double k = 0.5 * lambda;
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<std::ptrdiff_t>(i);
    const double x = f.coord(i);
    for (std::size_t j = 0; j < n; ++j) {
      const auto jj = static_cast<std::ptrdiff_t>(j);
      const double y = f.coord(j);
      // x-face fluxes -k y avg(G) and y-face fluxes k x avg(G).
      const double fx_hi = -k * y * 0.5 * (corner(ii, jj - 1) + corner(ii, jj));
      const double fx_lo = -k * y * 0.5 * (corner(ii - 1, jj - 1) + corner(ii - 1, jj));
      const double fy_hi = k * x * 0.5 * (corner(ii - 1, jj) + corner(ii, jj));
      const double fy_lo = k * x * 0.5 * (corner(ii - 1, jj - 1) + corner(ii, jj - 1));
      div[cell(i, j)] += (fx_hi - fx_lo + fy_hi - fy_lo) / h;
    }
  }
}

// Grid view with zero ghost cells outside [0, n).
struct Stencil {
  const std::vector<double>& w;
  const std::vector<double>& u;
  std::ptrdiff_t n;

  double W(std::ptrdiff_t i, std::ptrdiff_t j) const {
    if (i < 0 || j < 0 || i >= n || j >= n) return 0.0;
    return w[static_cast<std::size_t>(i * n + j)];
  }
  double U(std::ptrdiff_t i, std::ptrdiff_t j) const { return u[static_cast<std::size_t>(i * n + j)]; }
  bool positive(std::ptrdiff_t i, std::ptrdiff_t j) const { return W(i, j) > kTiny; }
  bool inside(std::ptrdiff_t i, std::ptrdiff_t j) const { return i >= 0 && j >= 0 && i < n && j < n; }
};

// Flux K across the face between cells a and b = a + e, where e is the unit step along the
// face normal and f the tangential unit step.
cplx face_flux(const Stencil& st, std::ptrdiff_t ai, std::ptrdiff_t aj, bool x_normal, double h,
               const Coefficients& c) {
  const std::ptrdiff_t bi = x_normal ? ai + 1 : ai;
  const std::ptrdiff_t bj = x_normal ? aj : aj + 1;
  const std::ptrdiff_t fi = x_normal ? 0 : 1;
  const std::ptrdiff_t fj = x_normal ? 1 : 0;

  // Next to the boundary the tangential difference would mix in ghost zeros; the cross-diffusion
  // it carries is not sign-preserving there, so those faces keep only the normal part.
  const bool edge = !st.inside(ai + fi, aj + fj) || !st.inside(ai - fi, aj - fj) || !st.inside(bi + fi, bj + fj) ||
                    !st.inside(bi - fi, bj - fj) || !st.inside(ai, aj) || !st.inside(bi, bj);
  const bool log_form = !edge && st.positive(ai, aj) && st.positive(bi, bj) && st.positive(ai + fi, aj + fj) &&
                        st.positive(ai - fi, aj - fj) && st.positive(bi + fi, bj + fj) &&
                        st.positive(bi - fi, bj - fj);
  double d_normal;
  double d_tangent;
  double w_face;
  if (log_form) {
    d_normal = (st.U(bi, bj) - st.U(ai, aj)) / h;
    d_tangent = (st.U(ai + fi, aj + fj) - st.U(ai - fi, aj - fj) + st.U(bi + fi, bj + fj) - st.U(bi - fi, bj - fj)) /
                (4.0 * h);
    w_face = std::sqrt(st.W(ai, aj) * st.W(bi, bj));
  } else {
    d_normal = (st.W(bi, bj) - st.W(ai, aj)) / h;
    d_tangent = edge ? 0.0
                     : (st.W(ai + fi, aj + fj) - st.W(ai - fi, aj - fj) + st.W(bi + fi, bj + fj) -
                        st.W(bi - fi, bj - fj)) /
                           (4.0 * h);
    w_face = 0.5 * (st.W(ai, aj) + st.W(bi, bj));
  }
  const double dx = x_normal ? d_normal : d_tangent;
  const double dy = x_normal ? d_tangent : d_normal;
  const cplx g{0.5 * dx, 0.5 * dy};
  if (log_form) return w_face * (c.P + c.Q * g + c.R * std::conj(g));
  return c.P * w_face + c.Q * g + c.R * std::conj(g);
}

std::vector<double> divergence(const GridField& f, const std::vector<double>& w, const BathSpec& bath,
                               const HamiltonianSpec& ham, double t) {
  const auto n = static_cast<std::ptrdiff_t>(f.n);
  const double h = f.h();
  std::vector<double> u(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) u[k] = w[k] > kTiny ? std::log(w[k]) : 0.0;
  const Stencil st{w, u, n};

  // fx[(i + 1) * n + j] is the flux through the face between i and i + 1; index 0 is the left boundary.
  std::vector<double> fx(static_cast<std::size_t>((n + 1) * n));
  std::vector<double> fy(static_cast<std::size_t>(n * (n + 1)));
  for (std::ptrdiff_t i = -1; i < n; ++i) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      const cplx a{f.coord(0) + (static_cast<double>(i) + 0.5) * h, f.coord(0) + static_cast<double>(j) * h};
      fx[static_cast<std::size_t>((i + 1) * n + j)] = face_flux(st, i, j, true, h, coefficients(a, bath, ham, t)).real();
    }
  }
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = -1; j < n; ++j) {
      const cplx a{f.coord(0) + static_cast<double>(i) * h, f.coord(0) + (static_cast<double>(j) + 0.5) * h};
      fy[static_cast<std::size_t>(i * (n + 1) + j + 1)] =
          face_flux(st, i, j, false, h, coefficients(a, bath, ham, t)).imag();
    }
  }

  std::vector<double> div(w.size());
  if (const double lambda = dephasing_rate(bath); lambda > 0.0) add_dephasing(f, w, u, lambda, div);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      const double dfx = fx[static_cast<std::size_t>((i + 1) * n + j)] - fx[static_cast<std::size_t>(i * n + j)];
      const double dfy =
          fy[static_cast<std::size_t>(i * (n + 1) + j + 1)] - fy[static_cast<std::size_t>(i * (n + 1) + j)];
      div[static_cast<std::size_t>(i * n + j)] += (dfx + dfy) / h;
    }
  }
  return div;
}

std::vector<double> rk4(const GridField& f, const BathSpec& bath, const HamiltonianSpec& ham, double dt) {
  const std::size_t size = f.values.size();
  auto shifted = [&](const std::vector<double>& k, double scale) {
    std::vector<double> out(size);
    for (std::size_t i = 0; i < size; ++i) out[i] = f.values[i] + scale * k[i];
    return out;
  };
  const auto k1 = divergence(f, f.values, bath, ham, f.t);
  const auto k2 = divergence(f, shifted(k1, 0.5 * dt), bath, ham, f.t + 0.5 * dt);
  const auto k3 = divergence(f, shifted(k2, 0.5 * dt), bath, ham, f.t + 0.5 * dt);
  const auto k4 = divergence(f, shifted(k3, dt), bath, ham, f.t + dt);
  std::vector<double> out(size);
  for (std::size_t i = 0; i < size; ++i) out[i] = f.values[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  return out;
}

void check_field(const GridField& f) {
  if (f.n < 3) throw ConfigError("grid needs at least 3 points per axis");
  if (!(f.L > 0.0) || !std::isfinite(f.L)) throw ConfigError("grid half-width must be positive");
  if (f.values.size() != f.n * f.n) throw ConfigError("grid values do not match n x n");
}

double entropy_of(const std::vector<double>& w, double h2) {
  double s = 0.0;
  for (double v : w)
    if (v > 0.0) s -= v * std::log(v);
  return s * h2;
}

}  // namespace

double GridField::mass() const {
  double total = 0.0;
  for (double v : values) total += v;
  return total * h() * h();
}

cplx GridField::mean_a() const {
  cplx total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += alpha(i, j) * at(i, j);
  return total * h() * h();
}

double GridField::number() const {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) total += std::norm(alpha(i, j)) * at(i, j);
  return total * h() * h() - 0.5;
}

cplx GridField::anomalous() const {
  cplx total = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const cplx a = alpha(i, j);
      total += a * a * at(i, j);
    }
  return total * h() * h();
}

double GridField::entropy() const { return entropy_of(values, h() * h()); }

double GridField::max_value() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

double auto_half_width(const GaussianState& state) {
  return std::max(std::abs(state.mu().real()), std::abs(state.mu().imag())) + 8.0 * state.max_quadrature_stddev();
}

GridField sample_gaussian(const GaussianState& state, std::size_t n, double L, double t) {
  GridField f;
  f.L = L > 0.0 ? L : auto_half_width(state);
  f.n = n;
  f.t = t;
  check_field(GridField{f.L, n, std::vector<double>(n * n), t});
  f.values.resize(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) f.values[i * n + j] = wigner_eval(state, PhasePoint(f.alpha(i, j)));
  return f;
}

double stability_bound(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham) {
  check_field(field);
  validate(bath);
  validate(ham);
  const double h = field.h();
  double d_max = 0.0;
  double v_max = 0.0;
  // Coefficients are extremal on the boundary of the box for every generator here.
  const double edge = field.L;
  for (std::size_t k = 0; k <= 4 * field.n; ++k) {
    const double s = -edge + 2.0 * edge * static_cast<double>(k) / static_cast<double>(4 * field.n);
    for (cplx a : {cplx{s, edge}, cplx{s, -edge}, cplx{edge, s}, cplx{-edge, s}, cplx{s, 0.0}, cplx{0.0, s}}) {
      for (double tt : {field.t, field.t + 0.25, field.t + 0.5}) {
        const auto c = coefficients(a, bath, ham, tt);
        d_max = std::max(d_max, 0.5 * (std::abs(c.Q) + std::abs(c.R)) + 0.5 * dephasing_rate(bath) * std::norm(a));
        v_max = std::max(v_max, std::abs(c.P));
      }
    }
  }
  double bound = std::numeric_limits<double>::infinity();
  if (d_max > 0.0) bound = std::min(bound, 0.2 * h * h / d_max);
  if (v_max > 0.0) bound = std::min(bound, 0.2 * h / v_max);
  return bound;
}

GridField step(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham, double dt) {
  check_field(field);
  if (!(dt > 0.0)) throw ConfigError("grid step needs dt > 0");
  const double bound = stability_bound(field, bath, ham);
  if (dt > bound * (1.0 + 1e-12)) {
    throw ConfigError("grid step dt = " + std::to_string(dt) + " exceeds the stability bound " + std::to_string(bound));
  }
  GridField out{field.L, field.n, rk4(field, bath, ham, dt), field.t + dt};
  const double peak = out.max_value();
  const double low = *std::min_element(out.values.begin(), out.values.end());
  if (low < -1e-12 * peak) {
    throw StabilityError("grid Wigner function went negative (" + std::to_string(low) + ") at t = " +
                         std::to_string(out.t));
  }
  return out;
}

GridField advance(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham, double t1,
                  double dt_max) {
  if (!(t1 >= field.t)) throw ConfigError("advance needs t1 >= field.t");
  if (t1 == field.t) return field;
  double dt = stability_bound(field, bath, ham);
  if (dt_max > 0.0) dt = std::min(dt, dt_max);
  const auto n_steps = static_cast<std::size_t>(std::ceil((t1 - field.t) / dt));
  const double h = (t1 - field.t) / static_cast<double>(n_steps);
  GridField cur = field;
  const double t0 = field.t;
  for (std::size_t k = 0; k < n_steps; ++k) {
    cur = step(cur, bath, ham, h);
    cur.t = t0 + h * static_cast<double>(k + 1);
  }
  return cur;
}

GridRates grid_rates(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham, double dt_probe) {
  check_field(field);
  validate(bath);
  validate(ham);
  const double mass = field.mass();
  if (std::abs(mass - 1.0) > 1e-6) {
    throw AccuracyError("grid mass " + std::to_string(mass) + " is off by more than 1e-6");
  }

  const auto n = static_cast<std::ptrdiff_t>(field.n);
  const double h = field.h();
  const double h2 = h * h;
  const double floor = 1e-12 * field.max_value();
  std::vector<double> u(field.values.size());
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = field.values[k] > kTiny ? std::log(field.values[k]) : 0.0;
  const Stencil st{field.values, u, n};

  std::size_t masked = 0;
  double sum = 0.0;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    for (std::ptrdiff_t j = 0; j < n; ++j) {
      const double w = st.W(i, j);
      if (!(w >= floor) || !st.positive(i + 1, j) || !st.positive(i - 1, j) || !st.positive(i, j + 1) ||
          !st.positive(i, j - 1)) {
        ++masked;
        continue;
      }
      const double ux = (st.U(i + 1, j) - st.U(i - 1, j)) / (2.0 * h);
      const double uy = (st.U(i, j + 1) - st.U(i, j - 1)) / (2.0 * h);
      const cplx g{0.5 * ux, 0.5 * uy};
      const cplx a = field.alpha(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
      sum += w * std::visit(Overloaded{
                                [&](const ThermalBath& b) {
                                  const double sigma = b.nbar + 0.5;
                                  return b.gamma / sigma * std::norm(a + sigma * g);
                                },
                                [&](const SqueezedBath& b) {
                                  const cplx z = a + (b.N() + 0.5) * g + b.M(field.t) * std::conj(g);
                                  const cplx y = std::cosh(b.r) * z +
                                                 std::polar(1.0, b.phase(field.t)) * std::sinh(b.r) * std::conj(z);
                                  return b.gamma / (b.nbar + 0.5) * std::norm(y);
                                },
                                [&](const DephasingBath& b) {
                                  return 0.5 * b.lambda * std::norm(std::conj(a) * g - a * std::conj(g));
                                },
                            },
                            bath);
    }
  }

  GridRates out;
  out.masked_fraction = static_cast<double>(masked) / static_cast<double>(field.n * field.n);
  if (out.masked_fraction > 0.5) {
    throw AccuracyError("more than half of the grid is below the log-term floor; shrink the domain");
  }
  out.pi = sum * h2;
  out.phi = phi_rate_moments(field.number(), field.anomalous(), bath, field.t);

  if (!(dt_probe > 0.0)) dt_probe = std::min(1e-4, 0.05 * stability_bound(field, bath, ham));
  const auto w_plus = rk4(field, bath, ham, dt_probe);
  const auto w_minus = rk4(field, bath, ham, -dt_probe);
  out.dsdt = (entropy_of(w_plus, h2) - entropy_of(w_minus, h2)) / (2.0 * dt_probe);
  return out;
}

}  // namespace wflux
