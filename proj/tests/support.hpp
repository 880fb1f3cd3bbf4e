#pragma once

// Shared fixtures and brute-force oracles for the test binaries. The oracles deliberately
// avoid the library's Gauss-Legendre code: they use plain trapezoid sums on wide grids.

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <random>

#include "wflux/model.hpp"
#include "wflux/phasespace.hpp"

namespace wtest {

using wflux::cplx;
using wflux::GaussianState;

inline double rel_err(double got, double want) { return std::abs(got - want) / std::max(1e-300, std::abs(want)); }

class StateGen {
 public:
  explicit StateGen(std::uint64_t seed) : rng_(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double normal() { return std::normal_distribution<double>()(rng_); }
  cplx cnormal(double scale = 1.0) { return scale * cplx{normal(), normal()}; }

  /// Mixed squeezed displaced state with occupation nu in [0, nu_max], squeezing r in [0, r_max].
  GaussianState state(double nu_max = 2.0, double r_max = 0.8, double mu_scale = 1.0) {
    const double nu = uniform(0.0, nu_max);
    const double r = uniform(0.0, r_max);
    const double phi = uniform(-wflux::kPi, wflux::kPi);
    const double radius = nu + 0.5;
    return GaussianState::make(cnormal(mu_scale), radius * std::cosh(2.0 * r), std::polar(radius * std::sinh(2.0 * r), phi));
  }

  wflux::ThermalBath thermal() { return {uniform(0.2, 3.0), uniform(0.0, 2.0)}; }

  wflux::SqueezedBath squeezed() {
    return {uniform(0.2, 3.0), uniform(0.0, 1.5), uniform(0.0, 1.0), uniform(-wflux::kPi, wflux::kPi), uniform(-2.0, 2.0)};
  }

  std::mt19937_64& engine() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

/// Trapezoid sum of f over the square mu +- k sigma_max with n points per axis.
inline double trapezoid_2d(const GaussianState& st, const std::function<double(cplx)>& f, double k = 10.0,
                           int n = 801) {
  const double half = k * st.max_quadrature_stddev();
  const double h = 2.0 * half / (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wx = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    const double x = st.mu().real() - half + i * h;
    for (int j = 0; j < n; ++j) {
      const double wy = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      const double y = st.mu().imag() - half + j * h;
      total += wx * wy * f(cplx{x, y});
    }
  }
  return total * h * h;
}

/// Direct Gaussian density in real quadratures, written independently of wigner_eval.
inline double gaussian_density(const GaussianState& st, cplx alpha) {
  const double vx = 0.5 * (st.s() + st.m().real());
  const double vy = 0.5 * (st.s() - st.m().real());
  const double cxy = 0.5 * st.m().imag();
  const double det = vx * vy - cxy * cxy;
  const double dx = alpha.real() - st.mu().real();
  const double dy = alpha.imag() - st.mu().imag();
  const double q = (vy * dx * dx - 2.0 * cxy * dx * dy + vx * dy * dy) / det;
  return std::exp(-0.5 * q) / (2.0 * wflux::kPi * std::sqrt(det));
}

}  // namespace wtest
