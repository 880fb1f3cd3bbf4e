#include "wflux/phasespace.hpp"

#include <array>
#include <atomic>
#include <cmath>
#include <span>
#include <string>

#include "wflux/errors.hpp"

namespace wflux {

namespace {

std::atomic<std::size_t> g_clamp_count{0};

bool finite(cplx z) { return std::isfinite(z.real()) && std::isfinite(z.imag()); }

// 0 stands for da, 1 for da*.
cplx wick(const GaussianState& st, std::span<const int> vars) {
  if (vars.empty()) return 1.0;
  if (vars.size() % 2 == 1) return 0.0;
  const int head = vars[0];
  cplx total = 0.0;
  std::array<int, 4> rest{};
  for (std::size_t i = 1; i < vars.size(); ++i) {
    cplx pair;
    if (head != vars[i]) {
      pair = st.s();
    } else {
      pair = head == 0 ? st.m() : std::conj(st.m());
    }
    std::size_t k = 0;
    for (std::size_t j = 1; j < vars.size(); ++j) {
      if (j != i) rest[k++] = vars[j];
    }
    total += pair * wick(st, std::span<const int>(rest.data(), k));
  }
  return total;
}

}  // namespace

PhasePoint::PhasePoint(cplx a) : alpha(a) {
  if (!finite(a)) throw DomainError("phase point must be finite");
}

GaussianState GaussianState::make(cplx mu, double s, cplx m) {
  if (!finite(mu) || !std::isfinite(s) || !finite(m)) {
    throw DomainError("Gaussian state moments must be finite");
  }
  if (s <= 0.0) throw DomainError("Gaussian state requires s > 0");
  const double det = s * s - std::norm(m);
  if (det < 0.25 - kPhysicalityTolerance) {
    throw DomainError("covariance violates det(Theta) >= 1/4 (det = " + std::to_string(det) + ")");
  }
  if (det < 0.25) {
    g_clamp_count.fetch_add(1, std::memory_order_relaxed);
    s = std::sqrt(0.25 + std::norm(m));
  }
  return GaussianState(mu, s, m);
}

GaussianState GaussianState::vacuum() { return GaussianState(0.0, 0.5, 0.0); }

GaussianState GaussianState::coherent(cplx mu) { return make(mu, 0.5, 0.0); }

GaussianState GaussianState::thermal(double nbar, cplx mu) {
  if (!(nbar >= 0.0)) throw DomainError("thermal occupation must be >= 0");
  return make(mu, nbar + 0.5, 0.0);
}

GaussianState GaussianState::squeezed_thermal(double nbar, cplx m, cplx mu) {
  if (!(nbar >= 0.0)) throw DomainError("thermal occupation must be >= 0");
  return make(mu, nbar + 0.5, m);
}

GaussianState GaussianState::from_raw_moments(cplx a, double number, cplx aa) {
  return make(a, number - std::norm(a) + 0.5, aa - a * a);
}

double GaussianState::purity() const { return 0.5 / std::sqrt(det()); }

GaussianState GaussianState::rotated(double phi) const {
  return GaussianState(mu_ * std::polar(1.0, phi), s_, m_ * std::polar(1.0, 2.0 * phi));
}

double GaussianState::max_quadrature_stddev() const {
  return std::sqrt(0.5 * (s_ + std::abs(m_)));
}

std::size_t physicality_clamp_count() { return g_clamp_count.load(std::memory_order_relaxed); }

double wigner_eval(const GaussianState& state, PhasePoint p) {
  const cplx d = p.alpha - state.mu();
  const double det = state.det();
  // v^dag Theta^{-1} v = (2 s |d|^2 - 2 Re(m d*^2)) / det
  const double form = (2.0 * state.s() * std::norm(d) - 2.0 * std::real(state.m() * std::conj(d * d))) / det;
  return std::exp(-0.5 * form) / (kPi * std::sqrt(det));
}

LogGradient wigner_log_gradient(const GaussianState& state, PhasePoint p) {
  const cplx d = p.alpha - state.mu();
  const cplx g = -(state.s() * d - state.m() * std::conj(d)) / state.det();
  return {std::conj(g), g};
}

double wigner_entropy(const GaussianState& state) {
  return 0.5 * std::log(state.det()) + 1.0 + std::log(kPi);
}

double von_neumann_entropy(const GaussianState& state) {
  const double nu = std::sqrt(state.det()) - 0.5;
  if (nu <= 0.0) return 0.0;
  return (nu + 1.0) * std::log(nu + 1.0) - nu * std::log(nu);
}

cplx central_moment(const GaussianState& state, int j, int k) {
  if (j < 0 || k < 0) throw DomainError("moment powers must be non-negative");
  if (j + k > 4) throw UnsupportedError("Wick expansion is limited to total degree 4");
  std::array<int, 4> vars{};
  int n = 0;
  for (int i = 0; i < j; ++i) vars[n++] = 0;
  for (int i = 0; i < k; ++i) vars[n++] = 1;
  return wick(state, std::span<const int>(vars.data(), static_cast<std::size_t>(n)));
}

}  // namespace wflux
