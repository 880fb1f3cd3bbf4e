#include "wflux/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

#include "wflux/errors.hpp"
#include "wflux/fpgrid.hpp"
#include "wflux/rates.hpp"
#include "wflux/trajectories.hpp"

namespace wflux::cli {

using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------- config reading

[[noreturn]] void config_fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + path + ": " + what);
}

std::string join(const std::string& path, std::string_view key) {
  return path.empty() ? std::string(key) : path + "." + std::string(key);
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) config_fail(path, "expected an object");
}

void allow_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
      config_fail(join(path, item.key()), "unknown key");
  }
}

double as_real(const json& v, const std::string& path) {
  if (!v.is_number()) config_fail(path, "expected a number");
  const double x = v.get<double>();
  if (!std::isfinite(x)) config_fail(path, "must be finite");
  return x;
}

void read_real(const json& j, std::string_view key, const std::string& path, double& out) {
  if (j.contains(key)) out = as_real(j.at(std::string(key)), join(path, key));
}

void read_count(const json& j, std::string_view key, const std::string& path, std::size_t& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(std::string(key));
  if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0))
    config_fail(join(path, key), "expected a non-negative integer");
  out = v.get<std::size_t>();
}

void read_text(const json& j, std::string_view key, const std::string& path, std::string& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(std::string(key));
  if (!v.is_string()) config_fail(join(path, key), "expected a string");
  out = v.get<std::string>();
}

/// A complex value is a number or a [re, im] pair.
void read_complex(const json& j, std::string_view key, const std::string& path, cplx& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(std::string(key));
  const std::string p = join(path, key);
  if (v.is_number()) {
    out = cplx{as_real(v, p), 0.0};
  } else if (v.is_array() && v.size() == 2) {
    out = cplx{as_real(v[0], p + "[0]"), as_real(v[1], p + "[1]")};
  } else {
    config_fail(p, "expected a number or [re, im]");
  }
}

json complex_json(cplx z) { return json::array({z.real(), z.imag()}); }

std::string_view bath_kind(const BathSpec& bath) {
  return std::visit(
      [](const auto& b) -> std::string_view {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ThermalBath>) return "thermal";
        else if constexpr (std::is_same_v<T, SqueezedBath>) return "squeezed";
        else return "dephasing";
      },
      bath);
}

void read_bath(const json& j, BathSpec& bath) {
  const std::string path = "bath";
  require_object(j, path);
  std::string kind(bath_kind(bath));
  read_text(j, "kind", path, kind);
  if (kind == "thermal") {
    ThermalBath b = std::holds_alternative<ThermalBath>(bath) ? std::get<ThermalBath>(bath) : ThermalBath{};
    allow_keys(j, path, {"kind", "gamma", "nbar"});
    read_real(j, "gamma", path, b.gamma);
    read_real(j, "nbar", path, b.nbar);
    bath = b;
  } else if (kind == "squeezed") {
    SqueezedBath b = std::holds_alternative<SqueezedBath>(bath) ? std::get<SqueezedBath>(bath) : SqueezedBath{};
    allow_keys(j, path, {"kind", "gamma", "nbar", "r", "theta", "omega_s"});
    read_real(j, "gamma", path, b.gamma);
    read_real(j, "nbar", path, b.nbar);
    read_real(j, "r", path, b.r);
    read_real(j, "theta", path, b.theta);
    read_real(j, "omega_s", path, b.omega_s);
    bath = b;
  } else if (kind == "dephasing") {
    DephasingBath b = std::holds_alternative<DephasingBath>(bath) ? std::get<DephasingBath>(bath) : DephasingBath{};
    allow_keys(j, path, {"kind", "lambda"});
    read_real(j, "lambda", path, b.lambda);
    bath = b;
  } else {
    config_fail("bath.kind", "expected thermal, squeezed or dephasing, got '" + kind + "'");
  }
}

void read_hamiltonian(const json& j, HamiltonianSpec& ham) {
  const std::string path = "hamiltonian";
  require_object(j, path);
  allow_keys(j, path, {"omega_c", "pump"});
  read_real(j, "omega_c", path, ham.omega_c);
  if (!j.contains("pump")) return;
  const json& p = j.at("pump");
  if (p.is_null()) {
    ham.pump.reset();
    return;
  }
  require_object(p, "hamiltonian.pump");
  allow_keys(p, "hamiltonian.pump", {"amplitude", "omega_p"});
  Pump pump = ham.pump.value_or(Pump{});
  read_complex(p, "amplitude", "hamiltonian.pump", pump.amplitude);
  read_real(p, "omega_p", "hamiltonian.pump", pump.omega_p);
  ham.pump = pump;
}

void read_initial(const json& j, InitialSpec& init) {
  const std::string path = "initial_state";
  require_object(j, path);
  std::string preset = init.preset;
  read_text(j, "preset", path, preset);
  if (preset != init.preset) {
    init = InitialSpec{};
    init.preset = preset;
  }
  if (preset == "vacuum" || preset == "equilibrium" || preset == "steady_state") {
    allow_keys(j, path, {"preset"});
  } else if (preset == "coherent") {
    allow_keys(j, path, {"preset", "mu"});
  } else if (preset == "thermal") {
    allow_keys(j, path, {"preset", "mu", "nbar"});
  } else if (preset == "squeezed_thermal") {
    allow_keys(j, path, {"preset", "mu", "nbar", "m"});
  } else if (preset == "gaussian") {
    allow_keys(j, path, {"preset", "mu", "s", "m"});
  } else {
    config_fail("initial_state.preset", "unknown preset '" + preset + "'");
  }
  read_complex(j, "mu", path, init.mu);
  read_real(j, "nbar", path, init.nbar);
  read_real(j, "s", path, init.s);
  read_complex(j, "m", path, init.m);
}

void read_grid(const json& j, GridSpec& grid) {
  require_object(j, "run.grid");
  allow_keys(j, "run.grid", {"n", "half_width"});
  read_count(j, "n", "run.grid", grid.n);
  read_real(j, "half_width", "run.grid", grid.half_width);
}

void read_run(const json& j, Command command, RunSpec& run) {
  const std::string path = "run";
  require_object(j, path);
  switch (command) {
    case Command::Rates:
      allow_keys(j, path, {"t", "methods", "quadrature_nodes", "sweep"});
      read_real(j, "t", path, run.t);
      read_count(j, "quadrature_nodes", path, run.quadrature_nodes);
      if (j.contains("methods")) {
        const json& m = j.at("methods");
        if (!m.is_array()) config_fail("run.methods", "expected an array of method names");
        run.methods.clear();
        for (const auto& v : m) {
          if (!v.is_string()) config_fail("run.methods", "expected an array of method names");
          run.methods.push_back(v.get<std::string>());
        }
      }
      if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        require_object(s, "run.sweep");
        allow_keys(s, "run.sweep", {"t_min", "t_max", "points_per_decade", "energy_flux"});
        read_real(s, "t_min", "run.sweep", run.sweep.t_min);
        read_real(s, "t_max", "run.sweep", run.sweep.t_max);
        read_count(s, "points_per_decade", "run.sweep", run.sweep.points_per_decade);
        read_real(s, "energy_flux", "run.sweep", run.sweep.energy_flux);
      }
      break;
    case Command::Evolve:
      allow_keys(j, path, {"t", "t_end", "dt"});
      read_real(j, "t", path, run.t);
      read_real(j, "t_end", path, run.t_end);
      read_real(j, "dt", path, run.dt);
      break;
    case Command::Trajectories:
      allow_keys(j, path, {"dt", "n_steps", "n_paths", "seed", "kernel", "histogram_bins"});
      read_real(j, "dt", path, run.dt);
      read_count(j, "n_steps", path, run.n_steps);
      read_count(j, "n_paths", path, run.n_paths);
      if (j.contains("seed")) {
        const json& v = j.at("seed");
        if (!v.is_number_unsigned()) config_fail("run.seed", "expected an unsigned 64-bit integer");
        run.seed = v.get<std::uint64_t>();
      }
      read_text(j, "kernel", path, run.kernel);
      read_count(j, "histogram_bins", path, run.histogram_bins);
      break;
    case Command::Field:
      allow_keys(j, path, {"t", "field"});
      read_real(j, "t", path, run.t);
      if (j.contains("field")) {
        const json& f = j.at("field");
        require_object(f, "run.field");
        allow_keys(f, "run.field", {"n", "half_width"});
        read_count(f, "n", "run.field", run.field_n);
        read_real(f, "half_width", "run.field", run.field_half_width);
      }
      break;
    case Command::FpCheck:
      allow_keys(j, path, {"benchmark", "t", "t_end", "grid"});
      read_real(j, "t", path, run.t);
      read_real(j, "t_end", path, run.t_end);
      if (j.contains("grid")) read_grid(j.at("grid"), run.grid);
      break;
  }
}

RateMethod method_from_name(const std::string& name) {
  if (name == "closed_form") return RateMethod::ClosedForm;
  if (name == "quadrature") return RateMethod::Quadrature;
  if (name == "quadratic_form") return RateMethod::QuadraticForm;
  throw ConfigError("config: run.methods: unknown method '" + name + "'");
}

void check_run(const ScenarioConfig& c) {
  const RunSpec& r = c.run;
  switch (c.command) {
    case Command::Rates:
      for (const auto& m : r.methods) method_from_name(m);
      if (r.quadrature_nodes < 16) config_fail("run.quadrature_nodes", "needs at least 16 nodes");
      if (!(r.sweep.t_min > 0.0) || !(r.sweep.t_max > r.sweep.t_min))
        config_fail("run.sweep", "needs 0 < t_min < t_max");
      if (r.sweep.points_per_decade == 0) config_fail("run.sweep.points_per_decade", "must be positive");
      if (!(r.sweep.energy_flux > 0.0)) config_fail("run.sweep.energy_flux", "must be positive");
      break;
    case Command::Evolve:
      if (!(r.t_end > r.t)) config_fail("run.t_end", "must exceed run.t");
      if (!(r.dt > 0.0)) config_fail("run.dt", "must be positive");
      break;
    case Command::Trajectories:
      if (r.kernel != "truncated" && r.kernel != "full") config_fail("run.kernel", "expected truncated or full");
      break;
    case Command::Field:
      if (r.field_n < 2) config_fail("run.field.n", "needs at least 2 points per axis");
      if (!(r.field_half_width > 0.0)) config_fail("run.field.half_width", "must be positive");
      break;
    case Command::FpCheck:
      if (r.benchmark != "coherent" && r.benchmark != "equilibrium" && r.benchmark != "dephasing")
        config_fail("run.benchmark", "expected coherent, equilibrium or dephasing");
      if (!(r.t_end > r.t)) config_fail("run.t_end", "must exceed run.t");
      if (r.grid.n < 8) config_fail("run.grid.n", "needs at least 8 cells per axis");
      if (r.grid.half_width < 0.0) config_fail("run.grid.half_width", "must be non-negative");
      break;
  }
}

// ---------------------------------------------------------------- config echo

json bath_json(const BathSpec& bath) {
  return std::visit(
      [](const auto& b) -> json {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, ThermalBath>) {
          return {{"kind", "thermal"}, {"gamma", b.gamma}, {"nbar", b.nbar}};
        } else if constexpr (std::is_same_v<T, SqueezedBath>) {
          return {{"kind", "squeezed"}, {"gamma", b.gamma},   {"nbar", b.nbar},
                  {"r", b.r},           {"theta", b.theta},   {"omega_s", b.omega_s}};
        } else {
          return {{"kind", "dephasing"}, {"lambda", b.lambda}};
        }
      },
      bath);
}

json config_json(const ScenarioConfig& c) {
  json ham = {{"omega_c", c.hamiltonian.omega_c}, {"pump", nullptr}};
  if (c.hamiltonian.pump)
    ham["pump"] = {{"amplitude", complex_json(c.hamiltonian.pump->amplitude)}, {"omega_p", c.hamiltonian.pump->omega_p}};

  const InitialSpec& i = c.initial;
  json init = {{"preset", i.preset}};
  if (i.preset == "coherent") init["mu"] = complex_json(i.mu);
  if (i.preset == "thermal") init.update({{"mu", complex_json(i.mu)}, {"nbar", i.nbar}});
  if (i.preset == "squeezed_thermal")
    init.update({{"mu", complex_json(i.mu)}, {"nbar", i.nbar}, {"m", complex_json(i.m)}});
  if (i.preset == "gaussian") init.update({{"mu", complex_json(i.mu)}, {"s", i.s}, {"m", complex_json(i.m)}});

  const RunSpec& r = c.run;
  json run;
  switch (c.command) {
    case Command::Rates:
      run = {{"t", r.t},
             {"methods", r.methods},
             {"quadrature_nodes", r.quadrature_nodes},
             {"sweep",
              {{"t_min", r.sweep.t_min},
               {"t_max", r.sweep.t_max},
               {"points_per_decade", r.sweep.points_per_decade},
               {"energy_flux", r.sweep.energy_flux}}}};
      break;
    case Command::Evolve:
      run = {{"t", r.t}, {"t_end", r.t_end}, {"dt", r.dt}};
      break;
    case Command::Trajectories:
      run = {{"dt", r.dt},     {"n_steps", r.n_steps}, {"n_paths", r.n_paths},
             {"seed", r.seed}, {"kernel", r.kernel},   {"histogram_bins", r.histogram_bins}};
      break;
    case Command::Field:
      run = {{"t", r.t}, {"field", {{"n", r.field_n}, {"half_width", r.field_half_width}}}};
      break;
    case Command::FpCheck:
      run = {{"benchmark", r.benchmark},
             {"t", r.t},
             {"t_end", r.t_end},
             {"grid", {{"n", r.grid.n}, {"half_width", r.grid.half_width}}}};
      break;
  }
  return {{"command", std::string(to_string(c.command))},
          {"bath", bath_json(c.bath)},
          {"hamiltonian", ham},
          {"initial_state", init},
          {"run", run}};
}

// ---------------------------------------------------------------- output helpers

std::string schema_tag(std::string_view schema) { return std::string(schema) + "/1"; }

json header_json(const ScenarioConfig& c, std::string_view schema) {
  return {{"wflux", std::string(kVersion)}, {"schema", schema_tag(schema)}, {"config", config_json(c)}};
}

/// Number as JSON; non-finite values become the strings "inf", "-inf", "nan".
json num(double x) {
  if (std::isfinite(x)) return x;
  return format_double(x);
}

std::string extended_text(const std::optional<ExtendedReal>& v) {
  if (!v) return "";
  return v->infinite ? "inf" : format_double(v->value);
}

/// Tabular output: CSV with a two-line preamble, or JSON lines whose first line is the header.
class Table {
 public:
  Table(const ScenarioConfig& c, std::string_view schema, std::vector<std::string> columns, Format format)
      : columns_(std::move(columns)), format_(format) {
    if (format_ == Format::Csv) {
      out_ << "# wflux " << kVersion << " schema=" << schema_tag(schema) << '\n';
      out_ << "# config: " << config_json(c).dump() << '\n';
      for (std::size_t k = 0; k < columns_.size(); ++k) out_ << (k ? "," : "") << columns_[k];
      out_ << '\n';
    } else {
      json h = header_json(c, schema);
      h["columns"] = columns_;
      out_ << h.dump() << '\n';
    }
  }

  /// One cell per column, already formatted; empty cells become JSON null.
  void row(const std::vector<std::string>& cells) {
    if (format_ == Format::Csv) {
      for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << cells[k];
      out_ << '\n';
      return;
    }
    json obj = json::object();
    for (std::size_t k = 0; k < cells.size(); ++k) obj[columns_[k]] = cell_json(cells[k]);
    out_ << obj.dump() << '\n';
  }

  std::string str() const { return out_.str(); }

 private:
  static json cell_json(const std::string& cell) {
    if (cell.empty()) return nullptr;
    double x = 0.0;
    const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), x);
    if (ec == std::errc() && p == cell.data() + cell.size() && std::isfinite(x)) return x;
    return cell;
  }

  std::vector<std::string> columns_;
  Format format_;
  std::ostringstream out_;
};

std::string ext(Format f) { return f == Format::Csv ? ".csv" : ".jsonl"; }

std::string f(double x) { return format_double(x); }

double rel_delta(double a, double ref) {
  const double scale = std::max(std::abs(ref), std::abs(a));
  return scale > 0.0 ? std::abs(a - ref) / scale : 0.0;
}

// ---------------------------------------------------------------- rates

CommandResult cmd_rates(const ScenarioConfig& c, const ExecOptions& o) {
  const GaussianState st = initial_state(c);
  std::vector<RateMethod> methods{RateMethod::ClosedForm};
  std::vector<std::string> names = c.run.methods;
  if (names.empty()) {
    names = {"closed_form", "quadrature"};
    if (!std::holds_alternative<DephasingBath>(c.bath)) names.push_back("quadratic_form");
  }
  for (const auto& n : names) {
    const RateMethod m = method_from_name(n);
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
  }

  const QuadratureSpec grid{c.run.quadrature_nodes};
  std::vector<RateReport> reports;
  for (RateMethod m : methods) reports.push_back(rate_report(st, c.bath, c.hamiltonian, c.run.t, m, grid));

  Table table(c, "rates",
              {"method", "t", "pi", "phi", "dsdt", "phi_e", "entropy", "phi_vn", "balance_residual", "delta_pi",
               "delta_phi", "delta_dsdt"},
              o.format);
  const RateReport& ref = reports.front();
  std::ostringstream summary;
  for (const auto& r : reports) {
    table.row({std::string(to_string(r.method)), f(c.run.t), f(r.pi), f(r.phi), f(r.dsdt), f(r.phi_e), f(r.entropy),
               extended_text(r.phi_vn), f(r.balance_residual), f(r.pi - ref.pi), f(r.phi - ref.phi),
               f(r.dsdt - ref.dsdt)});
    summary << to_string(r.method) << ": pi=" << f(r.pi) << " phi=" << f(r.phi) << " dsdt=" << f(r.dsdt)
            << " phi_e=" << f(r.phi_e) << '\n';
  }
  CommandResult res;
  res.files.push_back({"rates" + ext(o.format), table.str()});
  res.summary = summary.str();
  return res;
}

CommandResult cmd_sweep(const ScenarioConfig& c, const ExecOptions& o) {
  const auto* th = std::get_if<ThermalBath>(&c.bath);
  if (!th) throw ConfigError("--sweep T needs a thermal bath");
  const double omega = c.hamiltonian.omega_c;
  if (!(omega > 0.0)) throw ConfigError("--sweep T needs hamiltonian.omega_c > 0");
  if (c.hamiltonian.pump) throw ConfigError("--sweep T runs without a pump");
  const SweepSpec& s = c.run.sweep;
  const double mu_abs = std::sqrt(s.energy_flux / (th->gamma * omega));

  Table table(c, "sweep_T",
              {"T", "nbar", "phi_e", "phi", "phi_vn", "pi", "phi_e_over_T", "two_phi_e_over_omega"}, o.format);
  const double decades = std::log10(s.t_max / s.t_min);
  const auto n_points =
      static_cast<std::size_t>(std::llround(decades * static_cast<double>(s.points_per_decade))) + 1;
  double low_phi = 0.0;
  ExtendedReal low_vn;
  for (std::size_t k = 0; k < n_points; ++k) {
    const double temp =
        k + 1 == n_points ? s.t_max : s.t_min * std::pow(10.0, static_cast<double>(k) / s.points_per_decade);
    const double nbar = nbar_from_beta(1.0 / temp, omega);
    const ThermalBath bath{th->gamma, nbar};
    const auto st = GaussianState::thermal(nbar, cplx{mu_abs, 0.0});
    const RateReport r = rate_report(st, bath, c.hamiltonian, c.run.t, RateMethod::ClosedForm);
    table.row({f(temp), f(nbar), f(r.phi_e), f(r.phi), extended_text(r.phi_vn), f(r.pi), f(r.phi_e / temp),
               f(2.0 * r.phi_e / omega)});
    if (k == 0) {
      low_phi = r.phi;
      low_vn = r.phi_vn.value_or(ExtendedReal{});
    }
  }
  CommandResult res;
  res.files.push_back({"sweep_T" + ext(o.format), table.str()});
  std::ostringstream summary;
  summary << "sweep over " << n_points << " temperatures; at T=" << f(s.t_min) << " phi=" << f(low_phi)
          << " (2 phi_e/omega=" << f(2.0 * s.energy_flux / omega)
          << ") phi_vn=" << (low_vn.infinite ? std::string("inf") : f(low_vn.value)) << '\n';
  res.summary = summary.str();
  return res;
}

// ---------------------------------------------------------------- evolve

CommandResult cmd_evolve(const ScenarioConfig& c, const ExecOptions& o) {
  if (std::holds_alternative<DephasingBath>(c.bath))
    throw GaussianityNotPreserved(
        "evolve: dephasing does not keep the state Gaussian, so the moment equations cannot be closed; "
        "run `wflux fpcheck` with run.benchmark = \"dephasing\" to evolve the Wigner function on a grid");
  const GaussianState st = initial_state(c);
  const MomentTrajectory traj = evolve(st, c.bath, c.hamiltonian, c.run.t, c.run.t_end, c.run.dt);

  Table table(c, "evolve",
              {"t", "mu_re", "mu_im", "s", "m_re", "m_im", "entropy", "pi", "phi", "dsdt", "phi_e",
               "balance_residual"},
              o.format);
  double worst = 0.0;
  for (std::size_t k = 0; k < traj.states.size(); ++k) {
    const double t = traj.times[k];
    const auto& s = traj.states[k];
    const double pi = pi_closed_form(s, c.bath, t);
    const double phi = phi_rate(s, c.bath, t);
    const double dsdt = entropy_rate(s, c.bath, c.hamiltonian, t);
    const double residual = dsdt - (pi - phi);
    worst = std::max(worst, std::abs(residual));
    table.row({f(t), f(s.mu().real()), f(s.mu().imag()), f(s.s()), f(s.m().real()), f(s.m().imag()),
               f(wigner_entropy(s)), f(pi), f(phi), f(dsdt), f(energy_flux(s, c.bath, c.hamiltonian, t)),
               f(residual)});
  }
  CommandResult res;
  res.files.push_back({"evolve" + ext(o.format), table.str()});
  std::ostringstream summary;
  summary << traj.states.size() << " rows, worst balance residual " << f(worst) << '\n';
  res.summary = summary.str();
  if (worst > 1e-8) {
    res.exit_code = 3;
    res.diagnostic = "evolve: balance residual " + f(worst) + " exceeds 1e-8";
  }
  return res;
}

// ---------------------------------------------------------------- trajectories

CommandResult cmd_trajectories(const ScenarioConfig& c, const ExecOptions& o) {
  if (std::holds_alternative<DephasingBath>(c.bath))
    throw UnsupportedError("trajectories: dephasing paths carry no stochastic entropy; use a thermal bath");
  const auto* th = std::get_if<ThermalBath>(&c.bath);
  if (!th) throw ConfigError("trajectories: the Langevin runner needs bath.kind = \"thermal\"");
  if (c.hamiltonian.pump) throw UnsupportedError("trajectories: the Langevin runner has no pump term");

  LangevinSpec spec;
  spec.omega = c.hamiltonian.omega_c;
  spec.gamma = th->gamma;
  spec.nbar = th->nbar;
  spec.dt = c.run.dt;
  spec.n_steps = c.run.n_steps;
  spec.n_paths = c.run.n_paths;
  spec.seed = c.run.seed;
  validate(spec);

  const GaussianState st = initial_state(c);
  SampleOptions opts;
  opts.threads = o.threads;
  opts.kernel = c.run.kernel == "full" ? KernelRatio::Full : KernelRatio::Truncated;
  const TrajectoryEnsemble ens = sample_paths(spec, st, opts);
  const FluctuationEstimate est = fluctuation_theorem_estimator(ens);

  // Trapezoid average of the closed-form Pi along the background evolution.
  const MomentTrajectory bg = langevin_background(spec, st);
  double pi_avg = 0.0;
  for (std::size_t k = 0; k + 1 < bg.states.size(); ++k)
    pi_avg += 0.5 * (pi_closed_form(bg.states[k], c.bath, bg.times[k]) +
                     pi_closed_form(bg.states[k + 1], c.bath, bg.times[k + 1]));
  pi_avg /= static_cast<double>(spec.n_steps);
  const double pi0 = pi_closed_form(st, c.bath, 0.0);
  const double tau = spec.duration();
  const double rate = est.mean_sigma / tau;
  const double deviation = est.stderr > 0.0 ? std::abs(est.mean - 1.0) / est.stderr : 0.0;
  const bool pass = std::abs(est.mean - 1.0) <= 5.0 * est.stderr;

  json doc = header_json(c, "trajectories");
  doc["n_paths"] = est.n_paths;
  doc["dt"] = spec.dt;
  doc["n_steps"] = spec.n_steps;
  doc["tau"] = tau;
  doc["seed"] = spec.seed;
  doc["kernel"] = c.run.kernel;
  doc["blocks"] = est.blocks;
  doc["exp_minus_sigma"] = {{"mean", num(est.mean)}, {"stderr", num(est.stderr)}, {"deviation_in_stderr", num(deviation)}};
  doc["sigma"] = {{"mean", num(est.mean_sigma)}, {"stderr", num(est.stderr_sigma)}, {"jensen_ok", est.jensen_ok}};
  doc["sigma_rate"] = num(rate);
  doc["pi_initial"] = num(pi0);
  doc["pi_time_averaged"] = num(pi_avg);
  doc["sigma_rate_rel_delta"] = num(rel_delta(rate, pi_avg));
  doc["self_check"] = pass ? "pass" : "fail";

  CommandResult res;
  res.files.push_back({"trajectories.json", doc.dump(2) + "\n"});

  if (c.run.histogram_bins > 0) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& p : ens.paths) {
      lo = std::min(lo, p.sigma);
      hi = std::max(hi, p.sigma);
    }
    if (!(hi > lo)) {
      lo -= 0.5;
      hi += 0.5;
    }
    const std::size_t bins = c.run.histogram_bins;
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> counts(bins, 0);
    for (const auto& p : ens.paths) {
      auto b = static_cast<std::size_t>((p.sigma - lo) / width);
      counts[std::min(b, bins - 1)] += 1;
    }
    Table table(c, "sigma_histogram", {"bin_lo", "bin_hi", "count", "density"}, o.format);
    const double norm = static_cast<double>(ens.paths.size()) * width;
    for (std::size_t b = 0; b < bins; ++b) {
      const double a = lo + width * static_cast<double>(b);
      table.row({f(a), f(b + 1 == bins ? hi : a + width), std::to_string(counts[b]),
                 f(static_cast<double>(counts[b]) / norm)});
    }
    res.files.push_back({"sigma_histogram" + ext(o.format), table.str()});
  }

  std::ostringstream summary;
  summary << "<exp(-sigma)> = " << f(est.mean) << " +- " << f(est.stderr) << ", <sigma>/tau = " << f(rate)
          << ", time-averaged pi = " << f(pi_avg) << ", self-check " << (pass ? "pass" : "fail") << '\n';
  res.summary = summary.str();
  if (!pass) {
    res.exit_code = 4;
    res.diagnostic = "trajectories: |<exp(-sigma)> - 1| = " + f(std::abs(est.mean - 1.0)) + " exceeds 5 stderr (" +
                     f(5.0 * est.stderr) + ")";
  }
  return res;
}

// ---------------------------------------------------------------- field

CommandResult cmd_field(const ScenarioConfig& c, const ExecOptions& o) {
  SqueezedBath bath;
  if (const auto* sq = std::get_if<SqueezedBath>(&c.bath)) {
    bath = *sq;
  } else if (const auto* th = std::get_if<ThermalBath>(&c.bath)) {
    bath = as_squeezed(*th);
  } else {
    throw ConfigError("field: needs a squeezed (or thermal) bath");
  }
  if (c.hamiltonian.pump) throw ConfigError("field: the closed-form field needs the pump off");
  if (c.initial.preset != "steady_state") throw ConfigError("field: initial_state.preset must be steady_state");

  const double t = c.run.t;
  const GaussianState st = steady_state(bath, c.hamiltonian, t);
  const std::size_t n = c.run.field_n;
  const double hw = c.run.field_half_width;

  struct Cell {
    cplx a;
    double w, closed, direct;
  };
  std::vector<Cell> cells;
  cells.reserve(n * n);
  double peak = 0.0;
  double w_max = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const cplx a{-hw + 2.0 * hw * static_cast<double>(i) / static_cast<double>(n - 1),
                   -hw + 2.0 * hw * static_cast<double>(j) / static_cast<double>(n - 1)};
      const double w = wigner_eval(st, PhasePoint{a});
      const double closed = jb_field_squared(bath, c.hamiltonian, t, PhasePoint{a}) * w;
      const double direct = std::norm(current_eval(CurrentKind::SqueezedJb, st, bath, t, PhasePoint{a})) / w;
      cells.push_back({a, w, closed, direct});
      peak = std::max(peak, closed);
      w_max = std::max(w_max, w);
    }
  }
  // Relative to the larger value, floored at 1e-14 of the field scale so exact zeros compare cleanly.
  const double floor = 1e-14 * std::max(peak, bath.gamma * bath.gamma * w_max);
  Table table(c, "field", {"re", "im", "w", "closed", "direct", "rel_delta"}, o.format);
  double worst = 0.0;
  for (const auto& cell : cells) {
    const double d = std::abs(cell.closed - cell.direct) / std::max({cell.closed, cell.direct, floor});
    worst = std::max(worst, d);
    table.row({f(cell.a.real()), f(cell.a.imag()), f(cell.w), f(cell.closed), f(cell.direct), f(d)});
  }

  json doc = header_json(c, "field_summary");
  doc["points"] = n * n;
  doc["max_rel_delta"] = worst;
  doc["peak_closed"] = peak;
  doc["self_check"] = worst <= 1e-8 ? "pass" : "fail";

  CommandResult res;
  res.files.push_back({"field" + ext(o.format), table.str()});
  res.files.push_back({"field_summary.json", doc.dump(2) + "\n"});
  res.summary = std::to_string(n * n) + " points, max relative delta " + f(worst) + "\n";
  if (worst > 1e-8) {
    res.exit_code = 4;
    res.diagnostic = "field: closed form and direct current disagree by " + f(worst);
  }
  return res;
}

// ---------------------------------------------------------------- fpcheck

std::optional<double> order(double coarse, double fine, double floor) {
  if (!(fine > floor) || !(coarse > floor)) return std::nullopt;
  return std::log2(coarse / fine);
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

CommandResult cmd_fpcheck(const ScenarioConfig& c, const ExecOptions&) {
  const GaussianState st = initial_state(c);
  const bool dephasing = std::holds_alternative<DephasingBath>(c.bath);
  const double t0 = c.run.t;
  const double t1 = c.run.t_end;

  // Dephasing has no Gaussian reference past t0, so its rates are checked on the initial snapshot.
  const double t_ref = dephasing ? t0 : t1;
  const GaussianState ref = dephasing ? st : evolve(st, c.bath, c.hamiltonian, t0, t1, 1e-3).states.back();
  const double pi_ref = pi_closed_form(ref, c.bath, t_ref);
  const double phi_ref = phi_rate(ref, c.bath, t_ref);
  const double dsdt_ref = dephasing ? pi_ref : entropy_rate(ref, c.bath, c.hamiltonian, t_ref);

  json levels = json::array();
  std::vector<double> e_pi, e_phi, e_dsdt;
  for (std::size_t k = 0; k < 3; ++k) {
    const std::size_t n = c.run.grid.n << k;
    GridField g = sample_gaussian(st, n, c.run.grid.half_width, t0);
    if (!dephasing) g = advance(g, c.bath, c.hamiltonian, t1);
    const GridRates r = grid_rates(g, c.bath, c.hamiltonian);
    e_pi.push_back(std::abs(r.pi - pi_ref));
    e_phi.push_back(std::abs(r.phi - phi_ref));
    e_dsdt.push_back(std::abs(r.dsdt - dsdt_ref));
    levels.push_back({{"n", n},
                      {"h", g.h()},
                      {"half_width", g.L},
                      {"t", g.t},
                      {"pi", r.pi},
                      {"phi", r.phi},
                      {"dsdt", r.dsdt},
                      {"delta_pi", r.pi - pi_ref},
                      {"delta_phi", r.phi - phi_ref},
                      {"delta_dsdt", r.dsdt - dsdt_ref},
                      {"rel_delta_pi", rel_delta(r.pi, pi_ref)},
                      {"delta_mean", std::abs(g.mean_a() - ref.mu())},
                      {"delta_number", g.number() - ref.number()},
                      {"delta_anomalous", std::abs(g.anomalous() - ref.anomalous())},
                      {"mass", g.mass()},
                      {"masked_fraction", r.masked_fraction}});
  }
  const double floor = 1e-12;
  json orders = {{"pi", json::array()}, {"phi", json::array()}, {"dsdt", json::array()}};
  for (std::size_t k = 0; k + 1 < e_pi.size(); ++k) {
    orders["pi"].push_back(optional_json(order(e_pi[k], e_pi[k + 1], floor * (1.0 + std::abs(pi_ref)))));
    orders["phi"].push_back(optional_json(order(e_phi[k], e_phi[k + 1], floor * (1.0 + std::abs(phi_ref)))));
    orders["dsdt"].push_back(optional_json(order(e_dsdt[k], e_dsdt[k + 1], floor * (1.0 + std::abs(dsdt_ref)))));
  }

  json doc = header_json(c, "fpcheck");
  doc["reference"] = {{"t", t_ref},
                      {"pi", pi_ref},
                      {"phi", phi_ref},
                      {"dsdt", dsdt_ref},
                      {"mean", complex_json(ref.mu())},
                      {"number", ref.number()},
                      {"anomalous", complex_json(ref.anomalous())}};
  doc["levels"] = levels;
  doc["convergence_order"] = orders;

  if (dephasing) {
    // Evolve on the state's own box: mass and <a^dag a> are conserved, entropy may only grow and
    // <a> decays at lambda / 2.
    const double lambda = std::get<DephasingBath>(c.bath).lambda;
    GridField g = sample_gaussian(st, c.run.grid.n << 1, 0.0, t0);
    const double n0 = g.number();
    const double m0 = g.mass();
    const double dt = stability_bound(g, c.bath, c.hamiltonian);
    const auto steps = static_cast<std::size_t>(std::ceil((t1 - t0) / dt));
    const double h = (t1 - t0) / static_cast<double>(steps);
    double s_prev = g.entropy();
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < steps; ++k) {
      g = step(g, c.bath, c.hamiltonian, h);
      const double s = g.entropy();
      worst = std::min(worst, (s - s_prev) / h);
      s_prev = s;
    }
    const double span = g.t - t0;
    const cplx mean_want = st.mu() * std::exp(cplx{-0.5 * lambda, -c.hamiltonian.omega_c} * span);
    doc["evolution"] = {{"n", g.n},
                        {"half_width", g.L},
                        {"t_end", g.t},
                        {"steps", steps},
                        {"number_drift", g.number() - n0},
                        {"mass_drift", g.mass() - m0},
                        {"min_dsdt", worst},
                        {"entropy_gain", s_prev - wigner_entropy(st)},
                        {"delta_mean", std::abs(g.mean_a() - mean_want)}};
  }

  CommandResult res;
  res.files.push_back({"fpcheck.json", doc.dump(2) + "\n"});
  std::ostringstream summary;
  summary << "benchmark " << c.run.benchmark << ": pi reference " << f(pi_ref);
  for (std::size_t k = 0; k < e_pi.size(); ++k)
    summary << ", n=" << (c.run.grid.n << k) << " |delta pi| " << f(e_pi[k]);
  summary << '\n';
  res.summary = summary.str();
  return res;
}

unsigned thread_count() {
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("WFLUX_THREADS"); env && *env) {
    unsigned cap = 0;
    const std::string_view v(env);
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), cap);
    if (ec != std::errc() || p != v.data() + v.size() || cap == 0)
      throw ConfigError("WFLUX_THREADS must be a positive integer");
    threads = std::min(threads, cap);
  }
  return threads;
}

}  // namespace

// ---------------------------------------------------------------- public

std::string_view to_string(Command command) {
  switch (command) {
    case Command::Rates: return "rates";
    case Command::Evolve: return "evolve";
    case Command::Trajectories: return "trajectories";
    case Command::Field: return "field";
    case Command::FpCheck: return "fpcheck";
  }
  return "?";
}

ScenarioConfig default_config(Command command, std::string_view benchmark) {
  ScenarioConfig c;
  c.command = command;
  c.bath = ThermalBath{1.0, 0.0};
  c.hamiltonian = HamiltonianSpec{0.0, std::nullopt};
  switch (command) {
    case Command::Rates:
    case Command::Evolve:
      // Cooling: a thermal state with one quantum relaxing into a zero-temperature bath.
      c.hamiltonian.omega_c = 1.0;
      c.initial = InitialSpec{"thermal", {}, 1.0, 0.5, {}};
      c.run.t_end = 5.0;
      c.run.dt = 1e-2;
      break;
    case Command::Trajectories:
      c.initial = InitialSpec{"coherent", cplx{1.0, 0.0}, 0.0, 0.5, {}};
      break;
    case Command::Field:
      c.bath = SqueezedBath{2.0, 0.0, 0.5, 0.0, 0.0};
      c.hamiltonian.omega_c = 0.9;
      c.initial = InitialSpec{"steady_state", {}, 0.0, 0.5, {}};
      break;
    case Command::FpCheck:
      c.run.benchmark = std::string(benchmark);
      c.run.t_end = 0.5;
      if (benchmark == "equilibrium") {
        c.bath = ThermalBath{1.0, 0.5};
        c.initial = InitialSpec{"equilibrium", {}, 0.0, 0.5, {}};
        c.run.grid = GridSpec{64, 0.0};
      } else if (benchmark == "dephasing") {
        c.bath = DephasingBath{1.0};
        c.initial = InitialSpec{"gaussian", cplx{0.5, 0.2}, 0.0, 0.5 * std::cosh(0.7),
                                std::polar(0.5 * std::sinh(0.7), 0.4)};
        c.run.t_end = 0.1;
        c.run.grid = GridSpec{64, 4.2};
      } else {
        c.initial = InitialSpec{"coherent", cplx{1.0, 0.0}, 0.0, 0.5, {}};
        c.run.grid = GridSpec{64, 4.0};
      }
      break;
  }
  return c;
}

ScenarioConfig parse_config(std::string_view text, Command command) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  require_object(j, "(root)");
  allow_keys(j, "", {"bath", "hamiltonian", "initial_state", "run", "output"});

  std::string benchmark = "coherent";
  if (command == Command::FpCheck && j.contains("run") && j.at("run").is_object())
    read_text(j.at("run"), "benchmark", "run", benchmark);
  ScenarioConfig c = default_config(command, benchmark);

  if (j.contains("bath")) read_bath(j.at("bath"), c.bath);
  if (j.contains("hamiltonian")) read_hamiltonian(j.at("hamiltonian"), c.hamiltonian);
  if (j.contains("initial_state")) read_initial(j.at("initial_state"), c.initial);
  if (j.contains("run")) read_run(j.at("run"), command, c.run);
  if (j.contains("output")) {
    const json& out = j.at("output");
    require_object(out, "output");
    allow_keys(out, "output", {"dir"});
    read_text(out, "dir", "output", c.output_dir);
  }

  try {
    validate(c.bath);
    validate(c.hamiltonian);
    initial_state(c);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const UsageError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_run(c);
  return c;
}

std::string config_echo(const ScenarioConfig& config) { return config_json(config).dump(); }

GaussianState initial_state(const ScenarioConfig& c) {
  const InitialSpec& i = c.initial;
  if (i.preset == "vacuum") return GaussianState::vacuum();
  if (i.preset == "coherent") return GaussianState::coherent(i.mu);
  if (i.preset == "thermal") return GaussianState::thermal(i.nbar, i.mu);
  if (i.preset == "squeezed_thermal") return GaussianState::squeezed_thermal(i.nbar, i.m, i.mu);
  if (i.preset == "gaussian") return GaussianState::make(i.mu, i.s, i.m);
  if (i.preset == "equilibrium" || i.preset == "steady_state") {
    if (std::holds_alternative<DephasingBath>(c.bath))
      throw ConfigError("config: initial_state.preset '" + i.preset + "' is undefined for a dephasing bath");
    HamiltonianSpec ham = c.hamiltonian;
    if (i.preset == "equilibrium") ham.pump.reset();
    return steady_state(c.bath, ham, c.run.t);
  }
  throw ConfigError("config: unknown initial_state.preset '" + i.preset + "'");
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, p);
}

CommandResult execute(const ScenarioConfig& config, const ExecOptions& options) {
  switch (config.command) {
    case Command::Rates:
      return options.sweep_temperature ? cmd_sweep(config, options) : cmd_rates(config, options);
    case Command::Evolve: return cmd_evolve(config, options);
    case Command::Trajectories: return cmd_trajectories(config, options);
    case Command::Field: return cmd_field(config, options);
    case Command::FpCheck: return cmd_fpcheck(config, options);
  }
  throw UsageError("unknown command");
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const ConfigError*>(&error) || dynamic_cast<const UsageError*>(&error) ||
      dynamic_cast<const UnsupportedError*>(&error) || dynamic_cast<const DomainError*>(&error))
    return 2;
  return 3;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Entropy production of a bosonic mode in Wigner phase space", "wflux"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kVersion));

  struct Flags {
    std::string config, out, format = "csv", sweep;
    std::uint64_t seed = 0;
  } flags;
  struct Entry {
    Command command;
    const char* help;
    CLI::App* app = nullptr;
    CLI::Option* seed = nullptr;
  };
  std::vector<Entry> entries{
      {Command::Rates, "Entropy production, flux and entropy rates at one instant"},
      {Command::Evolve, "Moment evolution with per-step rates"},
      {Command::Trajectories, "Langevin ensemble and fluctuation-theorem check"},
      {Command::Field, "|J_b|^2 / W over the phase plane at the squeezed steady state"},
      {Command::FpCheck, "Grid Fokker-Planck solver against the closed forms"},
  };
  for (auto& e : entries) {
    e.app = app.add_subcommand(std::string(to_string(e.command)), e.help);
    e.app->add_option("--config", flags.config, "JSON scenario file")->check(CLI::ExistingFile);
    e.app->add_option("--out", flags.out, "Output directory (overrides WFLUX_OUT_DIR and output.dir)");
    e.seed = e.app->add_option("--seed", flags.seed, "Random seed (overrides run.seed)");
    e.app->add_option("--format", flags.format, "Tabular output format")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();
    if (e.command == Command::Rates)
      e.app->add_option("--sweep", flags.sweep, "Sweep a parameter instead of a single instant")
          ->check(CLI::IsMember({"T"}));
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? 0 : 2;
  }

  const Entry* chosen = nullptr;
  for (const auto& e : entries)
    if (e.app->parsed()) chosen = &e;
  const std::string name(to_string(chosen->command));

  try {
    ScenarioConfig config;
    if (flags.config.empty()) {
      config = default_config(chosen->command);
    } else {
      std::ifstream in(flags.config);
      std::stringstream buf;
      buf << in.rdbuf();
      if (!in) throw ConfigError("cannot read " + flags.config);
      config = parse_config(buf.str(), chosen->command);
    }
    if (chosen->seed->count() > 0) config.run.seed = flags.seed;

    std::string dir = ".";
    if (!flags.out.empty()) dir = flags.out;
    else if (const char* env = std::getenv("WFLUX_OUT_DIR"); env && *env) dir = env;
    else if (!config.output_dir.empty()) dir = config.output_dir;

    ExecOptions opts;
    opts.format = flags.format == "json" ? Format::Json : Format::Csv;
    opts.sweep_temperature = flags.sweep == "T";
    opts.threads = thread_count();

    const CommandResult res = execute(config, opts);

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir + ": " + ec.message());
    for (const auto& file : res.files) {
      const auto path = std::filesystem::path(dir) / file.name;
      std::ofstream o(path, std::ios::binary);
      o << file.content;
      if (!o) throw ConfigError("cannot write " + path.string());
      out << "wrote " << path.string() << '\n';
    }
    out << res.summary;
    if (res.exit_code != 0) err << "wflux " << name << ": " << res.diagnostic << '\n';
    return res.exit_code;
  } catch (const std::exception& e) {
    err << "wflux " << name << ": error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace wflux::cli
