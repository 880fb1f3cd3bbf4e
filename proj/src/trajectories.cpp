#include "wflux/trajectories.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "wflux/errors.hpp"

namespace wflux {

namespace {

constexpr cplx kI{0.0, 1.0};
constexpr std::size_t kChunk = 256;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t path_seed(std::uint64_t base, std::size_t index) {
  return splitmix64(splitmix64(base) ^ splitmix64(0xa0761d6478bd642fULL + index));
}

// Cholesky factor of the real covariance of (Re alpha, Im alpha).
struct InitialSampler {
  cplx mu;
  double l11, l21, l22;

  explicit InitialSampler(const GaussianState& st) : mu(st.mu()) {
    const double vx = 0.5 * (st.s() + st.m().real());
    const double vy = 0.5 * (st.s() - st.m().real());
    const double cxy = 0.5 * st.m().imag();
    l11 = std::sqrt(vx);
    l21 = cxy / l11;
    l22 = std::sqrt(std::max(0.0, vy - l21 * l21));
  }

  template <class Rng>
  cplx operator()(Rng& rng, std::normal_distribution<double>& normal) const {
    const double z1 = normal(rng);
    const double z2 = normal(rng);
    return mu + cplx{l11 * z1, l21 * z1 + l22 * z2};
  }
};

double log_wigner(const GaussianState& st, cplx alpha) {
  const cplx d = alpha - st.mu();
  const double det = st.det();
  const double q = (2.0 * st.s() * std::norm(d) - 2.0 * std::real(st.m() * std::conj(d * d))) / det;
  return -0.5 * q - std::log(kPi * std::sqrt(det));
}

struct Accumulator {
  std::vector<cplx> sum_a;
  std::vector<double> sum_abs2;
  std::vector<cplx> sum_a2;
  std::vector<double> sum_abs4;

  explicit Accumulator(std::size_t n) : sum_a(n), sum_abs2(n), sum_a2(n), sum_abs4(n) {}

  void add(std::size_t k, cplx a) {
    const double r2 = std::norm(a);
    sum_a[k] += a;
    sum_abs2[k] += r2;
    sum_a2[k] += a * a;
    sum_abs4[k] += r2 * r2;
  }

  void merge(const Accumulator& o) {
    for (std::size_t k = 0; k < sum_a.size(); ++k) {
      sum_a[k] += o.sum_a[k];
      sum_abs2[k] += o.sum_abs2[k];
      sum_a2[k] += o.sum_a2[k];
      sum_abs4[k] += o.sum_abs4[k];
    }
  }

  void clear() {
    std::fill(sum_a.begin(), sum_a.end(), cplx{});
    std::fill(sum_abs2.begin(), sum_abs2.end(), 0.0);
    std::fill(sum_a2.begin(), sum_a2.end(), cplx{});
    std::fill(sum_abs4.begin(), sum_abs4.end(), 0.0);
  }
};

std::vector<TimeMoments> finish_moments(const Accumulator& acc, const std::vector<double>& times, std::size_t n) {
  const double nd = static_cast<double>(n);
  std::vector<TimeMoments> out(times.size());
  for (std::size_t k = 0; k < times.size(); ++k) {
    TimeMoments& tm = out[k];
    tm.t = times[k];
    tm.mean_a = acc.sum_a[k] / nd;
    tm.mean_abs2 = acc.sum_abs2[k] / nd;
    tm.mean_a2 = acc.sum_a2[k] / nd;
    const double e_re2 = 0.5 * (tm.mean_abs2 + tm.mean_a2.real());
    const double e_im2 = 0.5 * (tm.mean_abs2 - tm.mean_a2.real());
    const double var_re = std::max(0.0, e_re2 - tm.mean_a.real() * tm.mean_a.real());
    const double var_im = std::max(0.0, e_im2 - tm.mean_a.imag() * tm.mean_a.imag());
    const double var_abs2 = std::max(0.0, acc.sum_abs4[k] / nd - tm.mean_abs2 * tm.mean_abs2);
    const double denom = n > 1 ? nd - 1.0 : 1.0;
    tm.stderr_a = {std::sqrt(var_re / denom), std::sqrt(var_im / denom)};
    tm.stderr_abs2 = std::sqrt(var_abs2 / denom);
  }
  return out;
}

// Runs n_paths independent paths in fixed chunks. Chunks are reduced in index order so the
// floating-point sums do not depend on the thread count.
template <class PathFn>
void run_paths(std::size_t n_paths, std::size_t n_times, unsigned threads, TrajectoryEnsemble& ens, Accumulator& total,
               PathFn&& path_fn) {
  const std::size_t n_chunks = (n_paths + kChunk - 1) / kChunk;
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n_chunks)));
  std::vector<Accumulator> partial(workers, Accumulator(n_times));

  for (std::size_t first = 0; first < n_chunks; first += workers) {
    const std::size_t batch = std::min<std::size_t>(workers, n_chunks - first);
    auto work = [&](std::size_t slot) {
      Accumulator& acc = partial[slot];
      acc.clear();
      const std::size_t chunk = first + slot;
      const std::size_t begin = chunk * kChunk;
      const std::size_t end = std::min(n_paths, begin + kChunk);
      for (std::size_t i = begin; i < end; ++i) path_fn(i, ens.paths[i], acc);
    };
    if (batch == 1) {
      work(0);
    } else {
      std::vector<std::thread> pool;
      pool.reserve(batch);
      for (std::size_t slot = 0; slot < batch; ++slot) pool.emplace_back(work, slot);
      for (auto& th : pool) th.join();
    }
    for (std::size_t slot = 0; slot < batch; ++slot) total.merge(partial[slot]);
  }
}

std::vector<double> time_grid(double dt, std::size_t n_steps) {
  std::vector<double> times(n_steps + 1);
  for (std::size_t k = 0; k <= n_steps; ++k) times[k] = dt * static_cast<double>(k);
  return times;
}

double noise_variance(const LangevinSpec& spec) { return spec.gamma * (spec.nbar + 0.5) * spec.dt; }

}  // namespace

void validate(const LangevinSpec& spec) {
  if (!std::isfinite(spec.omega)) throw ConfigError("omega must be finite");
  if (!(spec.gamma >= 0.0) || !std::isfinite(spec.gamma)) throw ConfigError("gamma must be non-negative");
  if (!(spec.nbar >= 0.0) || !std::isfinite(spec.nbar)) throw ConfigError("nbar must be non-negative");
  if (!(spec.dt > 0.0) || !std::isfinite(spec.dt)) throw ConfigError("dt must be positive");
  if (spec.gamma * spec.dt > 0.01) throw ConfigError("gamma dt must not exceed 0.01");
  if (spec.n_steps == 0) throw ConfigError("n_steps must be at least 1");
  if (spec.n_paths == 0) throw ConfigError("n_paths must be at least 1");
}

MomentTrajectory langevin_background(const LangevinSpec& spec, const GaussianState& initial) {
  validate(spec);
  if (!(spec.gamma > 0.0)) throw ConfigError("the stochastic entropy needs gamma > 0");
  return evolve_steps(initial, ThermalBath{spec.gamma, spec.nbar}, HamiltonianSpec{spec.omega, std::nullopt}, 0.0,
                      spec.duration(), spec.n_steps);
}

TrajectoryEnsemble sample_paths(const LangevinSpec& spec, const GaussianState& initial, const SampleOptions& options) {
  validate(spec);
  TrajectoryEnsemble ens;
  ens.kind = PathKind::Thermal;
  ens.kernel = options.kernel;
  ens.has_sigma = options.compute_sigma;
  ens.times = time_grid(spec.dt, spec.n_steps);
  ens.paths.resize(spec.n_paths);

  std::vector<GaussianState> background;
  if (options.compute_sigma) background = langevin_background(spec, initial).states;

  const InitialSampler init(initial);
  const cplx decay = 1.0 - spec.dt * cplx{0.5 * spec.gamma, spec.omega};
  const double amp = std::sqrt(0.5 * noise_variance(spec));
  const std::size_t n_times = ens.times.size();
  Accumulator total(n_times);

  run_paths(spec.n_paths, n_times, options.threads, ens, total, [&](std::size_t i, PathRecord& rec, Accumulator& acc) {
    std::mt19937_64 rng(path_seed(spec.seed, i));
    std::normal_distribution<double> normal;
    rec.kind = PathKind::Thermal;
    if (options.keep_samples) rec.samples.resize(n_times);
    cplx a = init(rng, normal);
    double sigma = 0.0;
    double prev_log_w = options.compute_sigma ? log_wigner(background[0], a) : 0.0;
    for (std::size_t k = 0; k < n_times; ++k) {
      if (options.keep_samples) rec.samples[k] = a;
      acc.add(k, a);
      if (k + 1 == n_times) break;
      const double n1 = normal(rng);
      const double n2 = normal(rng);
      const cplx next = decay * a + amp * cplx{n1, n2};
      if (options.compute_sigma) {
        const double next_log_w = log_wigner(background[k + 1], next);
        sigma += prev_log_w - next_log_w + kernel_log_ratio(spec, next, a, options.kernel);
        prev_log_w = next_log_w;
      }
      a = next;
    }
    if (options.compute_sigma) {
      rec.sigma = sigma;
      rec.weight = std::exp(-sigma);
    }
  });
  ens.moments = finish_moments(total, ens.times, spec.n_paths);
  return ens;
}

double propagator_density(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from) {
  validate(spec);
  const double var = noise_variance(spec);
  if (!(var > 0.0)) throw UnsupportedError("the noiseless propagator is a delta function");
  const cplx c{0.5 * spec.gamma, spec.omega};
  const double q = std::norm(alpha_to * (1.0 + spec.dt * c) - alpha_from);
  return std::exp(spec.gamma * spec.dt) / (kPi * var) * std::exp(-q / var);
}

double propagator_log_ratio(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from) {
  validate(spec);
  const double var = noise_variance(spec);
  if (!(var > 0.0)) throw UnsupportedError("the noiseless propagator is a delta function");
  const cplx c{0.5 * spec.gamma, spec.omega};
  const double forward = std::norm(alpha_to * (1.0 + spec.dt * c) - alpha_from);
  const double backward = std::norm(std::conj(alpha_from) * (1.0 + spec.dt * c) - std::conj(alpha_to));
  return (backward - forward) / var;
}

double kernel_log_ratio(const LangevinSpec& spec, cplx alpha_to, cplx alpha_from, KernelRatio kernel) {
  const double sigma = spec.nbar + 0.5;
  const double base = (std::norm(alpha_from) - std::norm(alpha_to)) / sigma;
  if (kernel == KernelRatio::Truncated) return base;
  const cplx c{0.5 * spec.gamma, spec.omega};
  return base * (1.0 + spec.dt * std::norm(c) / spec.gamma);
}

double kernel_sigma(const std::vector<cplx>& samples, const LangevinSpec& spec, KernelRatio kernel) {
  double total = 0.0;
  for (std::size_t k = 0; k + 1 < samples.size(); ++k) total += kernel_log_ratio(spec, samples[k + 1], samples[k], kernel);
  return total;
}

double accumulate_sigma(const PathRecord& path, const MomentTrajectory& background, const LangevinSpec& spec,
                        KernelRatio kernel) {
  if (path.kind == PathKind::Dephasing) {
    throw UnsupportedError("stochastic entropy is not defined for dephasing trajectories");
  }
  validate(spec);
  if (path.samples.size() != spec.n_steps + 1) throw UsageError("path length does not match n_steps + 1");
  if (background.states.size() != path.samples.size()) {
    throw UsageError("background has " + std::to_string(background.states.size()) + " states, path has " +
                     std::to_string(path.samples.size()));
  }
  const double tol = 1e-9 * std::max(1.0, spec.duration());
  for (std::size_t k = 0; k < background.times.size(); ++k) {
    if (std::abs(background.times[k] - background.times[0] - spec.dt * static_cast<double>(k)) > tol) {
      throw UsageError("background time grid does not match the path time grid");
    }
  }
  double sigma = 0.0;
  for (std::size_t k = 0; k + 1 < path.samples.size(); ++k) {
    sigma += log_wigner(background.states[k], path.samples[k]) -
             log_wigner(background.states[k + 1], path.samples[k + 1]) +
             kernel_log_ratio(spec, path.samples[k + 1], path.samples[k], kernel);
  }
  return sigma;
}

FluctuationEstimate fluctuation_theorem_estimator(const TrajectoryEnsemble& ensemble) {
  if (ensemble.kind == PathKind::Dephasing) {
    throw UnsupportedError("stochastic entropy is not defined for dephasing trajectories");
  }
  if (!ensemble.has_sigma) throw UsageError("ensemble was sampled without stochastic entropy");
  if (ensemble.paths.empty()) throw UsageError("empty ensemble");

  const std::size_t n = ensemble.paths.size();
  const std::size_t blocks = std::min<std::size_t>(100, n);
  std::vector<double> block_w(blocks, 0.0);
  std::vector<double> block_s(blocks, 0.0);
  std::vector<std::size_t> block_n(blocks, 0);
  double sum_w = 0.0;
  double sum_s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i * blocks / n;
    block_w[b] += ensemble.paths[i].weight;
    block_s[b] += ensemble.paths[i].sigma;
    ++block_n[b];
    sum_w += ensemble.paths[i].weight;
    sum_s += ensemble.paths[i].sigma;
  }

  FluctuationEstimate est;
  est.n_paths = n;
  est.blocks = blocks;
  const double nd = static_cast<double>(n);
  est.mean = sum_w / nd;
  est.mean_sigma = sum_s / nd;
  if (blocks > 1) {
    double var_w = 0.0;
    double var_s = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const double rest = nd - static_cast<double>(block_n[b]);
      const double loo_w = (sum_w - block_w[b]) / rest;
      const double loo_s = (sum_s - block_s[b]) / rest;
      var_w += (loo_w - est.mean) * (loo_w - est.mean);
      var_s += (loo_s - est.mean_sigma) * (loo_s - est.mean_sigma);
    }
    const double bd = static_cast<double>(blocks);
    est.stderr = std::sqrt((bd - 1.0) / bd * var_w);
    est.stderr_sigma = std::sqrt((bd - 1.0) / bd * var_s);
  }
  est.jensen_ok = est.mean_sigma >= -3.0 * est.stderr_sigma;
  return est;
}

void validate(const DephasingSpec& spec) {
  if (!(spec.lambda >= 0.0) || !std::isfinite(spec.lambda)) throw ConfigError("lambda must be non-negative");
  if (!std::isfinite(spec.omega)) throw ConfigError("omega must be finite");
  if (!(spec.dt > 0.0) || !std::isfinite(spec.dt)) throw ConfigError("dt must be positive");
  if (spec.lambda * spec.dt > 0.01) throw ConfigError("lambda dt must not exceed 0.01");
  if (spec.n_steps == 0) throw ConfigError("n_steps must be at least 1");
  if (spec.n_paths == 0) throw ConfigError("n_paths must be at least 1");
}

TrajectoryEnsemble dephasing_paths(const DephasingSpec& spec, const GaussianState& initial,
                                   const SampleOptions& options) {
  validate(spec);
  TrajectoryEnsemble ens;
  ens.kind = PathKind::Dephasing;
  ens.has_sigma = false;
  ens.times = time_grid(spec.dt, spec.n_steps);
  ens.paths.resize(spec.n_paths);

  const InitialSampler init(initial);
  const cplx rotation = std::polar(1.0, -spec.omega * spec.dt);
  const bool conjugate = spec.noise == DephasingNoise::Conjugate;
  const double drift = conjugate ? spec.lambda : 0.5 * spec.lambda;
  const double amp = std::sqrt((conjugate ? 2.0 : 1.0) * spec.lambda * spec.dt);
  const std::size_t n_times = ens.times.size();
  Accumulator total(n_times);

  run_paths(spec.n_paths, n_times, options.threads, ens, total, [&](std::size_t i, PathRecord& rec, Accumulator& acc) {
    std::mt19937_64 rng(path_seed(spec.seed, i));
    std::normal_distribution<double> normal;
    rec.kind = PathKind::Dephasing;
    rec.sigma = std::nan("");
    rec.weight = std::nan("");
    if (options.keep_samples) rec.samples.resize(n_times);
    cplx a = init(rng, normal);
    for (std::size_t k = 0; k < n_times; ++k) {
      if (options.keep_samples) rec.samples[k] = a;
      acc.add(k, a);
      if (k + 1 == n_times) break;
      const double dw = amp * normal(rng);
      const cplx kick = kI * dw * (conjugate ? std::conj(a) : a);
      a = rotation * (a * (1.0 - drift * spec.dt) + kick);
    }
  });
  ens.moments = finish_moments(total, ens.times, spec.n_paths);
  return ens;
}

}  // namespace wflux
