#pragma once

#include <complex>
#include <cstddef>

namespace wflux {

using cplx = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

/// Tolerance on det(Theta) >= 1/4 below which a state is rejected.
inline constexpr double kPhysicalityTolerance = 1e-12;

/// A point alpha of the complex phase plane.
struct PhasePoint {
  cplx alpha;

  PhasePoint() = default;
  explicit PhasePoint(cplx a);
  PhasePoint(double re, double im) : PhasePoint(cplx{re, im}) {}
};

/// Single-mode Gaussian state in the (alpha, alpha*) basis.
///
/// The covariance is Theta = [[s, m], [m*, s]] with s = <a^dag a> - |mu|^2 + 1/2
/// and m = <aa> - mu^2. The Wigner function is
///   W = exp(-v^dag Theta^{-1} v / 2) / (pi sqrt(det Theta)),  v = (alpha - mu, alpha* - mu*).
/// States with det Theta < 1/4 - 1e-12 are rejected. States in [1/4 - 1e-12, 1/4)
/// are clamped onto the bound and counted (see physicality_clamp_count()).
class GaussianState {
 public:
  static GaussianState make(cplx mu, double s, cplx m);

  static GaussianState vacuum();
  static GaussianState coherent(cplx mu);
  static GaussianState thermal(double nbar, cplx mu = {});
  /// Thermal state of occupation nbar with anomalous moment m added; det must stay >= 1/4.
  static GaussianState squeezed_thermal(double nbar, cplx m, cplx mu = {});
  /// Build from raw moments <a>, <a^dag a>, <aa>.
  static GaussianState from_raw_moments(cplx a, double number, cplx aa);

  cplx mu() const { return mu_; }
  double s() const { return s_; }
  cplx m() const { return m_; }

  double det() const { return s_ * s_ - std::norm(m_); }
  /// <a^dag a>
  double number() const { return s_ + std::norm(mu_) - 0.5; }
  /// <aa>
  cplx anomalous() const { return m_ + mu_ * mu_; }
  double purity() const;

  /// mu -> mu e^{i phi}, m -> m e^{2 i phi}.
  GaussianState rotated(double phi) const;

  /// Largest standard deviation of the real quadratures (Re alpha, Im alpha).
  double max_quadrature_stddev() const;

 private:
  GaussianState(cplx mu, double s, cplx m) : mu_(mu), s_(s), m_(m) {}

  cplx mu_;
  double s_;
  cplx m_;
};

/// Number of states clamped onto det Theta = 1/4 since process start.
std::size_t physicality_clamp_count();

double wigner_eval(const GaussianState& state, PhasePoint p);

/// Wirtinger derivatives of ln W; d_alpha_conj = -(s da - m da*)/det, d_alpha is its conjugate.
struct LogGradient {
  cplx d_alpha;
  cplx d_alpha_conj;
};

LogGradient wigner_log_gradient(const GaussianState& state, PhasePoint p);

/// -int W ln W = ln(det Theta)/2 + 1 + ln pi.
double wigner_entropy(const GaussianState& state);

/// Von Neumann entropy through the symplectic eigenvalue nu = sqrt(det Theta) - 1/2.
double von_neumann_entropy(const GaussianState& state);

/// Central moment E[da^j da*^k] by Wick pairing, j + k <= 4.
cplx central_moment(const GaussianState& state, int j, int k);

}  // namespace wflux
