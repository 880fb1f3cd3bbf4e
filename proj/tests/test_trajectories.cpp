#include <doctest.h>

#include <cmath>
#include <vector>

#include "support.hpp"
#include "wflux/errors.hpp"
#include "wflux/model.hpp"
#include "wflux/rates.hpp"
#include "wflux/trajectories.hpp"

using namespace wflux;

namespace {

LangevinSpec relaxing_spec(double nbar, std::size_t n_paths, std::uint64_t seed) {
  LangevinSpec spec;
  spec.omega = 0.0;
  spec.gamma = 1.0;
  spec.nbar = nbar;
  spec.dt = 1e-3;
  spec.n_steps = 100;
  spec.n_paths = n_paths;
  spec.seed = seed;
  return spec;
}

// Time average of the closed-form production rate along the background, by Simpson's rule.
double mean_pi(const LangevinSpec& spec, const GaussianState& initial) {
  const auto bg = langevin_background(spec, initial);
  const ThermalBath bath{spec.gamma, spec.nbar};
  const std::size_t n = bg.states.size() - 1;
  REQUIRE(n % 2 == 0);
  double total = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const double w = (k == 0 || k == n) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
    total += w * pi_closed_form(bg.states[k], bath, bg.times[k]);
  }
  return total / (3.0 * static_cast<double>(n));
}

// Expected Sigma when A_k follows the Euler chain exactly: the kernel and boundary sums telescope,
// so only the Euler marginal at tau and the exact background at tau enter.
double euler_expected_sigma(const LangevinSpec& spec, const GaussianState& initial) {
  const cplx c{0.5 * spec.gamma, spec.omega};
  const cplx f = 1.0 - spec.dt * c;
  const double sigma = spec.nbar + 0.5;
  cplx mu = initial.mu();
  double s = initial.s();
  cplx m = initial.m();
  for (std::size_t k = 0; k < spec.n_steps; ++k) {
    mu *= f;
    s = std::norm(f) * s + spec.gamma * sigma * spec.dt;
    m *= f * f;
  }
  const auto bg = langevin_background(spec, initial);
  const GaussianState& w0 = bg.states.front();
  const GaussianState& wt = bg.states.back();
  // E_p[ln W_q] for Gaussians p, q in the (alpha, alpha*) basis.
  auto cross = [](const GaussianState& q, cplx mu_p, double s_p, cplx m_p) {
    const cplx d = mu_p - q.mu();
    const double e_abs2 = s_p + std::norm(d);
    const cplx e_sq = m_p + d * d;
    const double quad = (2.0 * q.s() * e_abs2 - 2.0 * std::real(q.m() * std::conj(e_sq))) / q.det();
    return -0.5 * quad - std::log(kPi * std::sqrt(q.det()));
  };
  const double start = cross(w0, initial.mu(), initial.s(), initial.m());
  const double end = cross(wt, mu, s, m);
  const double e0 = initial.s() + std::norm(initial.mu());
  const double et = s + std::norm(mu);
  return start - end + (e0 - et) / sigma;
}

}  // namespace

TEST_CASE("spec validation") {
  LangevinSpec spec;
  spec.gamma = 20.0;
  spec.dt = 1e-3;
  CHECK_THROWS_AS(validate(spec), ConfigError);
  spec.gamma = 1.0;
  spec.n_paths = 0;
  CHECK_THROWS_AS(validate(spec), ConfigError);
  spec.n_paths = 1;
  spec.n_steps = 0;
  CHECK_THROWS_AS(validate(spec), ConfigError);
  spec.n_steps = 1;
  spec.nbar = -0.1;
  CHECK_THROWS_AS(validate(spec), ConfigError);
  CHECK_THROWS_AS(sample_paths(spec, GaussianState::vacuum()), ConfigError);
}

TEST_CASE("sampling is deterministic and independent of the thread count") {
  auto spec = relaxing_spec(0.5, 3000, 42);
  spec.omega = 0.7;
  const auto st = GaussianState::coherent(cplx{1.0, -0.3});
  const auto a = sample_paths(spec, st);
  const auto b = sample_paths(spec, st);
  SampleOptions threaded;
  threaded.threads = 3;
  const auto c = sample_paths(spec, st, threaded);
  bool same = true;
  for (std::size_t i = 0; i < a.paths.size(); ++i) {
    same = same && a.paths[i].sigma == b.paths[i].sigma && a.paths[i].sigma == c.paths[i].sigma;
  }
  CHECK(same);
  for (std::size_t k = 0; k < a.moments.size(); ++k) {
    CHECK(a.moments[k].mean_a == c.moments[k].mean_a);
    CHECK(a.moments[k].mean_abs2 == c.moments[k].mean_abs2);
  }
  spec.seed = 43;
  const auto d = sample_paths(spec, st);
  CHECK(d.paths[0].sigma != a.paths[0].sigma);
}

TEST_CASE("noiseless limit is a deterministic rotation") {
  LangevinSpec spec;
  spec.gamma = 0.0;
  spec.omega = 2.0;
  spec.dt = 1e-4;
  spec.n_steps = 5000;
  spec.n_paths = 5;
  SampleOptions opt;
  opt.keep_samples = true;
  opt.compute_sigma = false;
  const auto ens = sample_paths(spec, GaussianState::coherent(1.0), opt);
  for (const auto& p : ens.paths) {
    for (std::size_t k = 0; k < p.samples.size(); k += 500) {
      const double t = ens.times[k];
      const cplx want = p.samples[0] * std::exp(cplx{0.0, -spec.omega * t});
      // Euler error of a pure rotation: |z|((1 + w^2 dt^2)^(k/2) - 1) plus O(w^2 t dt) phase.
      CHECK(std::abs(p.samples[k] - want) <= 2.0 * spec.omega * spec.omega * t * spec.dt * std::abs(p.samples[0]) + 1e-14);
    }
  }
}

TEST_CASE("ensemble moments track the moment equations") {
  LangevinSpec spec;
  spec.omega = 1.3;
  spec.gamma = 1.0;
  spec.nbar = 0.4;
  spec.dt = 2e-3;
  spec.n_steps = 250;
  spec.n_paths = 100000;
  spec.seed = 7;
  const auto st = GaussianState::make(cplx{0.8, 0.5}, 0.9, std::polar(0.5, 0.6));
  SampleOptions opt;
  opt.compute_sigma = false;
  const auto ens = sample_paths(spec, st, opt);
  const auto ref = evolve_steps(st, ThermalBath{spec.gamma, spec.nbar}, HamiltonianSpec{spec.omega, std::nullopt}, 0.0,
                                spec.duration(), spec.n_steps);
  int bad = 0;
  for (std::size_t k = 0; k < ens.moments.size(); ++k) {
    const auto& tm = ens.moments[k];
    const auto& w = ref.states[k];
    if (std::abs(tm.mean_a.real() - w.mu().real()) > 4.0 * tm.stderr_a.real()) ++bad;
    if (std::abs(tm.mean_a.imag() - w.mu().imag()) > 4.0 * tm.stderr_a.imag()) ++bad;
    if (std::abs(tm.mean_abs2 - (w.s() + std::norm(w.mu()))) > 4.0 * tm.stderr_abs2) ++bad;
  }
  CHECK(bad == 0);
}

TEST_CASE("stationary ensemble keeps the equilibrium second moment") {
  auto spec = relaxing_spec(1.0, 50000, 3);
  spec.omega = 0.5;
  spec.n_steps = 300;
  const auto ens = sample_paths(spec, GaussianState::thermal(1.0));
  int bad = 0;
  for (const auto& tm : ens.moments) {
    if (std::abs(tm.mean_abs2 - 1.5) > 4.0 * tm.stderr_abs2) ++bad;
  }
  CHECK(bad == 0);

  SUBCASE("stochastic entropy vanishes path by path") {
    const auto est = fluctuation_theorem_estimator(ens);
    CHECK(std::abs(est.mean - 1.0) < 1e-12);
    CHECK(std::abs(est.mean_sigma) < 1e-12);
    CHECK(est.stderr < 1e-12);
    CHECK(est.jensen_ok);
  }
}

TEST_CASE("Euler propagator") {
  const double omega = 1.0;
  auto spec_for = [&](double dt) {
    LangevinSpec spec;
    spec.omega = omega;
    spec.gamma = 1.0;
    spec.nbar = 0.3;
    spec.dt = dt;
    return spec;
  };
  const cplx from{0.7, -0.4};

  // Plain trapezoid moments of K(.|from) around its centre.
  struct Moments {
    double mass;
    cplx mean;
  };
  auto integrate = [&](const LangevinSpec& spec) {
    const cplx c{0.5 * spec.gamma, spec.omega};
    const cplx centre = from / (1.0 + spec.dt * c);
    const double width = std::sqrt(spec.gamma * (spec.nbar + 0.5) * spec.dt) / std::abs(1.0 + spec.dt * c);
    const int n = 301;
    const double half = 12.0 * width;
    const double h = 2.0 * half / (n - 1);
    double mass = 0.0;
    cplx first{};
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        const cplx a = centre + cplx{-half + i * h, -half + j * h};
        const double k = propagator_density(spec, a, from);
        mass += k;
        first += a * k;
      }
    }
    return Moments{mass * h * h, first / mass};
  };

  SUBCASE("normalisation residual scales as dt^2") {
    std::vector<double> residual;
    for (double dt : {1e-2, 5e-3, 2.5e-3}) {
      const auto spec = spec_for(dt);
      const double mass = integrate(spec).mass;
      const double exact = std::exp(dt) / ((1.0 + 0.5 * dt) * (1.0 + 0.5 * dt) + omega * omega * dt * dt);
      CHECK(std::abs(mass - exact) < 1e-12);
      residual.push_back(std::abs(mass - 1.0));
    }
    for (std::size_t i = 0; i + 1 < residual.size(); ++i) {
      const double ratio = residual[i] / residual[i + 1];
      CHECK(ratio > 3.5);
      CHECK(ratio < 4.5);
    }
  }

  SUBCASE("mean is one Euler step") {
    for (double dt : {1e-2, 5e-3}) {
      const auto spec = spec_for(dt);
      const cplx c{0.5, omega};
      const cplx euler = from * (1.0 - dt * c);
      CHECK(std::abs(integrate(spec).mean - euler) <= 2.0 * std::norm(c) * dt * dt * std::abs(from));
    }
  }

  SUBCASE("log-ratio against the density") {
    wtest::StateGen gen(5);
    for (int k = 0; k < 50; ++k) {
      const auto spec = spec_for(gen.uniform(1e-3, 1e-2));
      const cplx a = gen.cnormal();
      const cplx b = a + gen.cnormal(0.1);
      const double direct = std::log(propagator_density(spec, b, a)) - std::log(propagator_density(spec, std::conj(a), std::conj(b)));
      const double closed = propagator_log_ratio(spec, b, a);
      CHECK(std::abs(direct - closed) < 1e-9 * std::max(1.0, std::abs(closed)));
      CHECK(std::abs(kernel_log_ratio(spec, b, a, KernelRatio::Full) - closed) < 1e-12 * std::max(1.0, std::abs(closed)));
      const double truncated = kernel_log_ratio(spec, b, a, KernelRatio::Truncated);
      CHECK(truncated == doctest::Approx((std::norm(a) - std::norm(b)) / 0.8).epsilon(1e-14));
      const double factor = 1.0 + spec.dt * (0.25 + omega * omega);
      CHECK(std::abs(truncated * factor - closed) < 1e-12 * std::max(1.0, std::abs(closed)));
    }
  }

  SUBCASE("noiseless propagator is unsupported") {
    auto spec = spec_for(1e-3);
    spec.gamma = 0.0;
    CHECK_THROWS_AS(propagator_density(spec, 0.0, 0.0), UnsupportedError);
  }
}

TEST_CASE("recorded paths") {
  auto spec = relaxing_spec(0.5, 200, 11);
  spec.omega = 0.8;
  const auto st = GaussianState::make(cplx{1.0, 0.2}, 0.8, std::polar(0.3, -1.0));
  SampleOptions opt;
  opt.keep_samples = true;
  const auto ens = sample_paths(spec, st, opt);
  const auto bg = langevin_background(spec, st);

  SUBCASE("re-accumulated entropy equals the sampler's") {
    for (const auto& p : ens.paths) {
      CHECK(p.samples.size() == spec.n_steps + 1);
      CHECK(std::abs(accumulate_sigma(p, bg, spec) - p.sigma) < 1e-10);
      CHECK(p.weight == std::exp(-p.sigma));
    }
  }

  SUBCASE("time reversal flips the kernel contribution") {
    for (const auto& p : ens.paths) {
      std::vector<cplx> reversed(p.samples.rbegin(), p.samples.rend());
      for (auto& a : reversed) a = std::conj(a);
      for (auto kernel : {KernelRatio::Truncated, KernelRatio::Full}) {
        const double fwd = kernel_sigma(p.samples, spec, kernel);
        const double bwd = kernel_sigma(reversed, spec, kernel);
        CHECK(std::abs(fwd + bwd) < 1e-12 * std::max(1.0, std::abs(fwd)));
      }
    }
  }

  SUBCASE("mismatched inputs") {
    auto shorter = spec;
    shorter.n_steps = 50;
    CHECK_THROWS_AS(accumulate_sigma(ens.paths[0], langevin_background(shorter, st), spec), UsageError);
    PathRecord cut = ens.paths[0];
    cut.samples.pop_back();
    CHECK_THROWS_AS(accumulate_sigma(cut, bg, spec), UsageError);
    SampleOptions bare;
    bare.compute_sigma = false;
    CHECK_THROWS_AS(fluctuation_theorem_estimator(sample_paths(spec, st, bare)), UsageError);
  }
}

TEST_CASE("fluctuation theorem on the relaxing coherent benchmark") {
  const auto st = GaussianState::coherent(1.0);
  for (double nbar : {0.0, 1.0}) {
    CAPTURE(nbar);
    const auto spec = relaxing_spec(nbar, 100000, 2024);
    const auto ens = sample_paths(spec, st);
    const auto est = fluctuation_theorem_estimator(ens);
    CHECK(est.blocks == 100);
    CHECK(std::abs(est.mean - 1.0) <= 3.0 * est.stderr);
    CHECK(est.jensen_ok);
    const double pi = mean_pi(spec, st);
    CHECK(std::abs(est.mean_sigma / spec.duration() - pi) <= 0.05 * pi);
    CHECK(std::abs(est.mean_sigma - euler_expected_sigma(spec, st)) <= 4.0 * est.stderr_sigma);
  }
  CHECK(mean_pi(relaxing_spec(0.0, 1, 0), st) == doctest::Approx(20.0 * (1.0 - std::exp(-0.1))).epsilon(1e-9));

  SUBCASE("ten disjoint seeds") {
    int bad = 0;
    for (std::uint64_t seed = 100; seed < 110; ++seed) {
      const auto est = fluctuation_theorem_estimator(sample_paths(relaxing_spec(0.0, 20000, seed), st));
      if (std::abs(est.mean - 1.0) > 3.0 * est.stderr) ++bad;
    }
    CHECK(bad == 0);
  }
}

TEST_CASE("mean entropy converges at first order in dt") {
  // The Euler-chain expectation removes sampling noise from the comparison.
  const auto st = GaussianState::coherent(1.0);
  std::vector<double> err;
  for (double dt : {4e-3, 2e-3, 1e-3, 5e-4}) {
    auto spec = relaxing_spec(1.0, 1, 0);
    spec.dt = dt;
    spec.n_steps = static_cast<std::size_t>(std::llround(0.4 / dt));
    const double pi = mean_pi(spec, st);
    err.push_back(std::abs(euler_expected_sigma(spec, st) / spec.duration() - pi));
  }
  for (std::size_t i = 0; i + 1 < err.size(); ++i) {
    const double ratio = err[i] / err[i + 1];
    CHECK(ratio > 1.8);
    CHECK(ratio < 2.2);
  }
}

TEST_CASE("dephasing trajectories") {
  const auto st = GaussianState::coherent(cplx{1.5, 0.5});

  SUBCASE("lambda = 0 conserves the modulus on every path") {
    DephasingSpec spec;
    spec.lambda = 0.0;
    spec.omega = 3.0;
    spec.n_steps = 400;
    spec.n_paths = 20;
    SampleOptions opt;
    opt.keep_samples = true;
    const auto ens = dephasing_paths(spec, st, opt);
    for (const auto& p : ens.paths) {
      for (const auto& a : p.samples) CHECK(std::abs(std::abs(a) - std::abs(p.samples[0])) < 1e-12);
    }
  }

  SUBCASE("no stochastic entropy") {
    DephasingSpec spec;
    spec.n_paths = 10;
    SampleOptions opt;
    opt.keep_samples = true;
    const auto ens = dephasing_paths(spec, st, opt);
    CHECK_FALSE(ens.has_sigma);
    CHECK_THROWS_AS(fluctuation_theorem_estimator(ens), UnsupportedError);
    LangevinSpec lspec;
    lspec.n_steps = spec.n_steps;
    CHECK_THROWS_AS(accumulate_sigma(ens.paths[0], langevin_background(lspec, st), lspec), UnsupportedError);
    spec.lambda = 100.0;
    CHECK_THROWS_AS(dephasing_paths(spec, st, {}), ConfigError);
  }
}

TEST_CASE("dephasing ensemble moments") {
  const auto st = GaussianState::coherent(cplx{1.5, 0.5});
  for (auto noise : {DephasingNoise::Conjugate, DephasingNoise::Phase}) {
    CAPTURE(static_cast<int>(noise));
    DephasingSpec spec;
    spec.lambda = 1.0;
    spec.omega = 0.7;
    spec.dt = 1e-3;
    spec.n_steps = 500;
    spec.n_paths = 100000;
    spec.seed = 9;
    spec.noise = noise;
    const auto ens = dephasing_paths(spec, st, {});
    const double rate = noise == DephasingNoise::Conjugate ? spec.lambda : 0.5 * spec.lambda;

    int bad = 0;
    for (std::size_t k = 0; k < ens.moments.size(); k += 50) {
      const auto& tm = ens.moments[k];
      const cplx want = st.mu() * std::exp(cplx{-rate, -spec.omega} * tm.t);
      if (std::abs(tm.mean_a.real() - want.real()) > 4.0 * tm.stderr_a.real()) ++bad;
      if (std::abs(tm.mean_a.imag() - want.imag()) > 4.0 * tm.stderr_a.imag()) ++bad;
    }
    CHECK(bad == 0);

    // An O(dt) drift of <|A|^2> would be of order lambda t <|A|^2> ~ 1; the Ito scheme
    // leaves only lambda^2 t dt.
    const auto& first = ens.moments.front();
    const auto& last = ens.moments.back();
    const double drift = std::abs(last.mean_abs2 - first.mean_abs2);
    CHECK(drift <= 4.0 * std::hypot(first.stderr_abs2, last.stderr_abs2) + spec.lambda * spec.lambda * last.t * spec.dt);
    CHECK(4.0 * std::hypot(first.stderr_abs2, last.stderr_abs2) < 0.25 * spec.lambda * last.t * first.mean_abs2);
  }

}
