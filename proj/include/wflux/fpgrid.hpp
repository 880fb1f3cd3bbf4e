#pragma once

#include <cstddef>
#include <vector>

#include "wflux/model.hpp"
#include "wflux/phasespace.hpp"

namespace wflux {

/// Wigner function sampled at the centres of an n x n grid covering [-L, L]^2.
/// values[i * n + j] holds W at (Re alpha, Im alpha) = (x_i, x_j), x_i = -L + (i + 1/2) h.
struct GridField {
  double L = 0.0;
  std::size_t n = 0;
  std::vector<double> values;
  double t = 0.0;

  double h() const { return 2.0 * L / static_cast<double>(n); }
  double coord(std::size_t i) const { return -L + (static_cast<double>(i) + 0.5) * h(); }
  cplx alpha(std::size_t i, std::size_t j) const { return {coord(i), coord(j)}; }
  double at(std::size_t i, std::size_t j) const { return values[i * n + j]; }

  double mass() const;
  cplx mean_a() const;
  /// <a^dag a> = sum |alpha|^2 W h^2 - 1/2
  double number() const;
  /// <aa> = sum alpha^2 W h^2
  cplx anomalous() const;
  /// -sum W ln W h^2 over cells with W > 0.
  double entropy() const;
  double max_value() const;
};

/// Half-width max(|Re mu|, |Im mu|) + 8 sigma_max covering the state's envelope.
double auto_half_width(const GaussianState& state);

/// Samples a Gaussian on the grid; L <= 0 selects auto_half_width().
GridField sample_gaussian(const GaussianState& state, std::size_t n, double L = 0.0, double t = 0.0);

/// Largest stable explicit step 0.2 min(h^2 / D_max, h / v_max) for the combined generator.
double stability_bound(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham = {});

/// One RK4 step of dW/dt = div F in flux form with zero Dirichlet boundary.
///
/// F = (Re K, Im K) with K = P W + Q dW/dalpha* + R dW/dalpha. Face fluxes use the differences of
/// ln W, which are exact for any Gaussian, so Gaussian fixed points stay fixed to round-off.
/// Dephasing enters as the angular flux (lambda/2)(-y, x) dW/dtheta with dW/dtheta taken at cell
/// corners; it conserves mass and <a^dag a> exactly. Faces next to the boundary drop the
/// tangential difference.
/// Throws ConfigError if dt exceeds stability_bound() and StabilityError if W turns negative
/// beyond -1e-12 max W.
GridField step(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham, double dt);

/// Repeated step() from field.t to t1 with the largest uniform step not above dt_max or the stability bound.
GridField advance(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham, double t1,
                  double dt_max = 0.0);

struct GridRates {
  double pi = 0.0;
  double phi = 0.0;
  double dsdt = 0.0;
  double masked_fraction = 0.0;
};

/// Pi from sum |J|^2 / W h^2 with centred log-gradients, Phi from grid moments, dS/dt from a
/// two-point central difference of the discrete entropy over +-dt_probe (auto when <= 0).
/// Cells with W < 1e-12 max W are left out of the log terms; more than half masked, or a
/// mass off by more than 1e-6, raises AccuracyError.
GridRates grid_rates(const GridField& field, const BathSpec& bath, const HamiltonianSpec& ham = {},
                     double dt_probe = 0.0);

}  // namespace wflux
