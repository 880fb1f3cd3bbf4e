#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "wflux/model.hpp"
#include "wflux/phasespace.hpp"

namespace wflux::cli {

inline constexpr std::string_view kVersion = "0.1.0";

enum class Command { Rates, Evolve, Trajectories, Field, FpCheck };
enum class Format { Csv, Json };

std::string_view to_string(Command command);

/// Named initial state. Presets: vacuum, coherent(mu), thermal(nbar, mu), squeezed_thermal(nbar, m, mu),
/// gaussian(mu, s, m), equilibrium (Gibbs state of the bath), steady_state (pumped steady state).
struct InitialSpec {
  std::string preset = "vacuum";
  cplx mu;
  double nbar = 0.0;
  double s = 0.5;
  cplx m;
};

struct GridSpec {
  std::size_t n = 64;
  /// 0 sizes the box from the state (mean + 8 standard deviations).
  double half_width = 0.0;
};

struct SweepSpec {
  double t_min = 0.01;
  double t_max = 100.0;
  std::size_t points_per_decade = 4;
  /// Energy flux held fixed across the sweep.
  double energy_flux = 0.3;
};

struct RunSpec {
  double t = 0.0;
  double t_end = 1.0;
  double dt = 1e-3;
  std::size_t n_steps = 100;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 0;
  std::string kernel = "truncated";
  std::size_t histogram_bins = 0;
  std::vector<std::string> methods;
  std::size_t quadrature_nodes = 201;
  std::string benchmark = "coherent";
  GridSpec grid;
  std::size_t field_n = 101;
  double field_half_width = 3.0;
  SweepSpec sweep;
};

struct ScenarioConfig {
  Command command = Command::Rates;
  BathSpec bath = ThermalBath{};
  HamiltonianSpec hamiltonian;
  InitialSpec initial;
  RunSpec run;
  /// Empty when the config does not name one.
  std::string output_dir;
};

/// Defaults for a command; fpcheck defaults depend on the benchmark name.
ScenarioConfig default_config(Command command, std::string_view benchmark = "coherent");

/// Parses a JSON config on top of the command defaults. Unknown keys, wrong types and
/// unphysical parameters raise ConfigError.
ScenarioConfig parse_config(std::string_view text, Command command);

/// Canonical compact JSON of the effective config, echoed into every output.
std::string config_echo(const ScenarioConfig& config);

GaussianState initial_state(const ScenarioConfig& config);

/// Shortest round-trip decimal; "inf", "-inf" and "nan" for non-finite values.
std::string format_double(double value);

struct OutputFile {
  std::string name;
  std::string content;
};

struct CommandResult {
  std::vector<OutputFile> files;
  /// Short human-readable summary printed to stdout.
  std::string summary;
  int exit_code = 0;
  std::string diagnostic;
};

struct ExecOptions {
  Format format = Format::Csv;
  bool sweep_temperature = false;
  unsigned threads = 1;
};

/// Runs one command in memory. Library errors propagate as exceptions.
CommandResult execute(const ScenarioConfig& config, const ExecOptions& options);

/// Exit code for an exception escaping execute(): 2 config/usage, 3 numerical.
int exit_code_for(const std::exception& error);

/// Full command line: parses arguments, reads the config, writes outputs. Returns the exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace wflux::cli
