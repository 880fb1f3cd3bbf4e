#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "wflux/cli.hpp"
#include "wflux/errors.hpp"

using namespace wflux;
using namespace wflux::cli;

namespace {

namespace fs = std::filesystem;

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

/// Data rows of a CSV output keyed by column name.
std::vector<std::map<std::string, std::string>> csv_rows(const std::string& text) {
  std::vector<std::map<std::string, std::string>> rows;
  std::vector<std::string> header;
  for (const auto& line : lines_of(text)) {
    if (line.empty() || line[0] == '#') continue;
    if (header.empty()) {
      header = split(line);
      continue;
    }
    const auto cells = split(line);
    REQUIRE(cells.size() == header.size());
    std::map<std::string, std::string> row;
    for (std::size_t k = 0; k < cells.size(); ++k) row[header[k]] = cells[k];
    rows.push_back(row);
  }
  return rows;
}

double num(const std::map<std::string, std::string>& row, const std::string& key) { return std::stod(row.at(key)); }

const OutputFile& file(const CommandResult& r, const std::string& name) {
  for (const auto& f : r.files)
    if (f.name == name) return f;
  FAIL("missing output " << name);
  return r.files.front();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("wflux_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string write(const std::string& name, const std::string& content) const {
    std::ofstream(path / name) << content;
    return (path / name).string();
  }
};

struct Invocation {
  int code;
  std::string out, err;
};

Invocation invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "wflux");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("float formatting is shortest round-trip") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(-2.5e-300) == "-2.5e-300");
  CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
  CHECK(format_double(INFINITY) == "inf");
  CHECK(format_double(-INFINITY) == "-inf");
  CHECK(format_double(NAN) == "nan");
}

TEST_CASE("golden rates header") {
  const auto res = execute(default_config(Command::Rates), {});
  const auto lines = lines_of(file(res, "rates.csv").content);
  REQUIRE(lines.size() == 6);
  CHECK(lines[0] == "# wflux 0.1.0 schema=rates/1");
  CHECK(lines[1] ==
        "# config: {\"bath\":{\"gamma\":1.0,\"kind\":\"thermal\",\"nbar\":0.0},\"command\":\"rates\","
        "\"hamiltonian\":{\"omega_c\":1.0,\"pump\":null},\"initial_state\":{\"mu\":[0.0,0.0],\"nbar\":1.0,"
        "\"preset\":\"thermal\"},\"run\":{\"methods\":[],\"quadrature_nodes\":201,\"sweep\":{\"energy_flux\":0.3,"
        "\"points_per_decade\":4,\"t_max\":100.0,\"t_min\":0.01},\"t\":0.0}}");
  CHECK(lines[2] ==
        "method,t,pi,phi,dsdt,phi_e,entropy,phi_vn,balance_residual,delta_pi,delta_phi,delta_dsdt");
  CHECK(lines[3] ==
        "closed_form,0,1.3333333333333335,2,-0.6666666666666666,1,2.5501949939575645,inf,"
        "-1.1102230246251565e-16,0,0,0");
}

TEST_CASE("golden headers of the other outputs") {
  SUBCASE("evolve") {
    const auto lines = lines_of(file(execute(default_config(Command::Evolve), {}), "evolve.csv").content);
    CHECK(lines[0] == "# wflux 0.1.0 schema=evolve/1");
    CHECK(lines[2] == "t,mu_re,mu_im,s,m_re,m_im,entropy,pi,phi,dsdt,phi_e,balance_residual");
  }
  SUBCASE("field") {
    auto c = default_config(Command::Field);
    c.run.field_n = 5;
    const auto lines = lines_of(file(execute(c, {}), "field.csv").content);
    CHECK(lines[0] == "# wflux 0.1.0 schema=field/1");
    CHECK(lines[2] == "re,im,w,closed,direct,rel_delta");
    CHECK(lines.size() == 3 + 25);
  }
  SUBCASE("json lines") {
    ExecOptions o;
    o.format = Format::Json;
    const auto lines = lines_of(file(execute(default_config(Command::Rates), o), "rates.jsonl").content);
    REQUIRE(lines.size() == 4);
    CHECK(lines[0].rfind("{\"columns\":[\"method\",", 0) == 0);
    CHECK(lines[0].find("\"schema\":\"rates/1\",\"wflux\":\"0.1.0\"}") != std::string::npos);
    CHECK(lines[1].find("\"phi_vn\":\"inf\"") != std::string::npos);
    CHECK(lines[1].find("\"method\":\"closed_form\"") != std::string::npos);
  }
}

TEST_CASE("config validation") {
  CHECK_NOTHROW(parse_config("{}", Command::Rates));
  CHECK_THROWS_AS(parse_config("{\"bath\": {\"gama\": 1}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"extra\": 1}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"run\": {\"n_paths\": 10}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"bath\": {\"gamma\": \"1\"}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"bath\": {\"gamma\": -1}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"bath\": {\"kind\": \"ohmic\"}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"initial_state\": {\"preset\": \"coherent\", \"nbar\": 1}}", Command::Rates),
                  ConfigError);
  CHECK_THROWS_AS(parse_config("{\"initial_state\": {\"preset\": \"gaussian\", \"s\": 0.4}}", Command::Rates),
                  ConfigError);
  CHECK_THROWS_AS(parse_config("{\"run\": {\"n_paths\": -3}}", Command::Trajectories), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"run\": {\"kernel\": \"exact\"}}", Command::Trajectories), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"run\": {\"methods\": [\"monte_carlo\"]}}", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"run\": {\"benchmark\": \"vacuum\"}}", Command::FpCheck), ConfigError);
  CHECK_THROWS_AS(parse_config("[1, 2]", Command::Rates), ConfigError);
  CHECK_THROWS_AS(parse_config("{\"bath\": ", Command::Rates), ConfigError);

  const auto c = parse_config(
      "{\"bath\": {\"kind\": \"squeezed\", \"gamma\": 2, \"r\": 0.5}, \"hamiltonian\": {\"omega_c\": 0.9,"
      " \"pump\": {\"amplitude\": [0.3, -0.1], \"omega_p\": 1.1}}, \"initial_state\": {\"preset\": \"steady_state\"},"
      " \"output\": {\"dir\": \"runs\"}}",
      Command::Rates);
  const auto& sq = std::get<SqueezedBath>(c.bath);
  CHECK(sq.gamma == 2.0);
  CHECK(sq.r == 0.5);
  CHECK(sq.nbar == 0.0);
  REQUIRE(c.hamiltonian.pump);
  CHECK(c.hamiltonian.pump->amplitude == cplx{0.3, -0.1});
  CHECK(c.output_dir == "runs");
  const auto fp = parse_config("{\"run\": {\"benchmark\": \"dephasing\"}}", Command::FpCheck);
  CHECK(std::holds_alternative<DephasingBath>(fp.bath));
  CHECK(fp.run.grid.half_width == 4.2);
}

TEST_CASE("rates records") {
  SUBCASE("equilibrium preset gives zero rates") {
    const auto c = parse_config(
        "{\"bath\": {\"nbar\": 0.7}, \"initial_state\": {\"preset\": \"equilibrium\"}}", Command::Rates);
    const auto rows = csv_rows(file(execute(c, {}), "rates.csv").content);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
      CHECK(std::abs(num(r, "pi")) <= 1e-10);
      CHECK(std::abs(num(r, "phi")) <= 1e-10);
      CHECK(std::abs(num(r, "dsdt")) <= 1e-10);
      CHECK(std::abs(num(r, "phi_e")) <= 1e-10);
      CHECK(std::abs(num(r, "phi_vn")) <= 1e-10);
    }
  }
  SUBCASE("pumped-squeezed preset with the pump off") {
    const auto c = parse_config(
        "{\"bath\": {\"kind\": \"squeezed\", \"gamma\": 2, \"r\": 0.5}, \"hamiltonian\": {\"omega_c\": 0.9},"
        " \"initial_state\": {\"preset\": \"steady_state\"}}",
        Command::Rates);
    const auto rows = csv_rows(file(execute(c, {}), "rates.csv").content);
    REQUIRE(rows.size() == 3);
    for (const auto& r : rows) {
      CHECK(num(r, "pi") == doctest::Approx(1.23611).epsilon(1e-5));
      CHECK(std::abs(num(r, "dsdt")) <= 1e-8);
      CHECK(r.at("phi_vn").empty());
    }
  }
  SUBCASE("dephasing skips the quadratic form unless asked") {
    auto c = parse_config("{\"bath\": {\"kind\": \"dephasing\", \"lambda\": 0.5}, \"initial_state\": "
                          "{\"preset\": \"coherent\", \"mu\": [1, 0.5]}}",
                          Command::Rates);
    const auto rows = csv_rows(file(execute(c, {}), "rates.csv").content);
    REQUIRE(rows.size() == 2);
    CHECK(std::abs(num(rows[1], "delta_pi")) <= 1e-6 * num(rows[0], "pi"));
    c.run.methods = {"quadratic_form"};
    CHECK_THROWS_AS(execute(c, {}), UsageError);
  }
  SUBCASE("temperature sweep") {
    ExecOptions o;
    o.sweep_temperature = true;
    const auto res = execute(default_config(Command::Rates), o);
    const auto rows = csv_rows(file(res, "sweep_T.csv").content);
    REQUIRE(rows.size() == 17);
    const auto& cold = rows.front();
    CHECK(num(cold, "T") == 0.01);
    CHECK(num(cold, "phi") == doctest::Approx(num(cold, "two_phi_e_over_omega")).epsilon(1e-12));
    CHECK(num(cold, "phi_vn") > 25.0);
    for (std::size_t k = 0; k + 1 < rows.size(); ++k) {
      CHECK(num(rows[k], "phi_e") == doctest::Approx(0.3).epsilon(1e-12));
      CHECK(num(rows[k], "phi_vn") > num(rows[k + 1], "phi_vn"));
    }
    CHECK(num(rows.back(), "phi") == doctest::Approx(num(rows.back(), "phi_vn")).epsilon(1e-4));
  }
}

TEST_CASE("evolve series") {
  const auto res = execute(default_config(Command::Evolve), {});
  const auto rows = csv_rows(file(res, "evolve.csv").content);
  REQUIRE(rows.size() > 100);
  CHECK(num(rows[0], "pi") == doctest::Approx(4.0 / 3.0));
  CHECK(num(rows[0], "phi") == doctest::Approx(2.0));
  CHECK(num(rows[0], "dsdt") == doctest::Approx(-2.0 / 3.0));
  for (const auto& r : rows) CHECK(std::abs(num(r, "balance_residual")) <= 1e-8);
  CHECK(num(rows.back(), "t") == doctest::Approx(5.0));
  CHECK(num(rows.back(), "s") == doctest::Approx(0.5 + std::exp(-5.0)).epsilon(1e-6));

  SUBCASE("equilibrium rows are constant") {
    const auto c = parse_config(
        "{\"bath\": {\"nbar\": 0.3}, \"initial_state\": {\"preset\": \"equilibrium\"}, \"run\": {\"t_end\": 1}}",
        Command::Evolve);
    const auto eq = csv_rows(file(execute(c, {}), "evolve.csv").content);
    for (const auto& r : eq) {
      CHECK(num(r, "s") == doctest::Approx(0.8).epsilon(1e-14));
      CHECK(num(r, "entropy") == doctest::Approx(num(eq[0], "entropy")).epsilon(1e-14));
      CHECK(std::abs(num(r, "pi")) <= 1e-12);
    }
  }
  SUBCASE("dephasing points to the grid solver") {
    const auto c = parse_config("{\"bath\": {\"kind\": \"dephasing\"}}", Command::Evolve);
    CHECK_THROWS_AS(execute(c, {}), GaussianityNotPreserved);
  }
}

TEST_CASE("trajectories are deterministic and self-checking") {
  auto c = default_config(Command::Trajectories);
  c.run.n_paths = 3000;
  c.run.histogram_bins = 20;
  ExecOptions one, three;
  three.threads = 3;
  const auto a = execute(c, one);
  const auto b = execute(c, three);
  REQUIRE(a.files.size() == 2);
  for (std::size_t k = 0; k < a.files.size(); ++k) {
    CHECK(a.files[k].name == b.files[k].name);
    CHECK(a.files[k].content == b.files[k].content);
  }
  CHECK(a.exit_code == 0);
  CHECK(file(a, "trajectories.json").content.find("\"self_check\": \"pass\"") != std::string::npos);

  const auto hist = csv_rows(file(a, "sigma_histogram.csv").content);
  REQUIRE(hist.size() == 20);
  double total = 0.0;
  for (const auto& r : hist) total += num(r, "count");
  CHECK(total == 3000.0);

  c.run.seed = 1;
  CHECK(execute(c, one).files[0].content != a.files[0].content);

  SUBCASE("undersampled heavy tail fails the check") {
    auto bad = parse_config(
        "{\"initial_state\": {\"preset\": \"coherent\", \"mu\": 6}, \"run\": {\"n_paths\": 400, \"seed\": 2}}",
        Command::Trajectories);
    const auto r = execute(bad, one);
    CHECK(r.exit_code == 4);
    CHECK(file(r, "trajectories.json").content.find("\"self_check\": \"fail\"") != std::string::npos);
  }
  SUBCASE("non-thermal baths are refused") {
    CHECK_THROWS_AS(execute(parse_config("{\"bath\": {\"kind\": \"dephasing\"}}", Command::Trajectories), one),
                    UnsupportedError);
    CHECK_THROWS_AS(execute(parse_config("{\"bath\": {\"kind\": \"squeezed\"}}", Command::Trajectories), one),
                    ConfigError);
  }
}

TEST_CASE("field defaults") {
  const auto res = execute(default_config(Command::Field), {});
  CHECK(res.exit_code == 0);
  const auto rows = csv_rows(file(res, "field.csv").content);
  REQUIRE(rows.size() == 101 * 101);
  double worst = 0.0;
  for (const auto& r : rows) {
    worst = std::max(worst, num(r, "rel_delta"));
    const double re = num(r, "re");
    const double im = num(r, "im");
    // beta = alpha cosh r + alpha* sinh r at theta = 0
    const double beta2 = std::norm(cplx{re, im} * std::cosh(0.5) + cplx{re, -im} * std::sinh(0.5));
    CHECK(num(r, "closed") == doctest::Approx(0.38197 * beta2 * num(r, "w")).epsilon(1e-4));
  }
  CHECK(worst <= 1e-8);
  const auto& centre = rows[50 * 101 + 50];
  CHECK(num(centre, "re") == 0.0);
  CHECK(num(centre, "im") == 0.0);
  CHECK(num(centre, "closed") == 0.0);
}

TEST_CASE("fpcheck benchmarks") {
  SUBCASE("equilibrium") {
    const auto c = parse_config("{\"run\": {\"benchmark\": \"equilibrium\", \"t_end\": 0.2}}", Command::FpCheck);
    const auto doc = nlohmann::json::parse(file(execute(c, {}), "fpcheck.json").content);
    CHECK(doc["schema"] == "fpcheck/1");
    for (const auto& level : doc["levels"]) {
      CHECK(std::abs(level["delta_pi"].get<double>()) <= 1e-10);
      CHECK(std::abs(level["delta_dsdt"].get<double>()) <= 1e-10);
      CHECK(std::abs(level["delta_number"].get<double>()) <= 1e-10);
    }
    CHECK(doc["convergence_order"]["pi"][0].is_null());
  }
  SUBCASE("coherent") {
    const auto doc =
        nlohmann::json::parse(file(execute(default_config(Command::FpCheck), {}), "fpcheck.json").content);
    REQUIRE(doc["levels"].size() == 3);
    CHECK(doc["levels"][2]["n"] == 256);
    for (const auto& level : doc["levels"]) CHECK(level["rel_delta_pi"].get<double>() <= 0.02);
    for (const auto& order : doc["convergence_order"]["pi"]) CHECK(order.get<double>() == doctest::Approx(2.0).epsilon(0.1));
  }
}

TEST_CASE("command line") {
  TempDir dir("run");

  CHECK(invoke({"--help"}).code == 0);
  CHECK(invoke({"--version"}).out.find("0.1.0") != std::string::npos);
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"rates", "--format", "xml"}).code == 2);
  CHECK(invoke({"rates", "--config", (dir.path / "missing.json").string()}).code == 2);
  CHECK(invoke({"evolve", "--sweep", "T"}).code == 2);

  const auto bad = dir.write("bad.json", "{\"bath\": {\"temperature\": 1}}");
  auto r = invoke({"rates", "--config", bad, "--out", dir.path.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bath.temperature") != std::string::npos);

  const auto deph = dir.write("deph.json", "{\"bath\": {\"kind\": \"dephasing\"}}");
  r = invoke({"evolve", "--config", deph, "--out", dir.path.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("fpcheck") != std::string::npos);

  const auto pumped = dir.write("pumped.json", "{\"hamiltonian\": {\"pump\": {\"amplitude\": 0.5, \"omega_p\": 1}}}");
  CHECK(invoke({"field", "--config", pumped, "--out", dir.path.string()}).code == 2);

  // A coarse box lets the relaxing thermal state run into the boundary.
  const auto coarse =
      dir.write("coarse.json", "{\"run\": {\"benchmark\": \"equilibrium\", \"grid\": {\"n\": 32}}}");
  r = invoke({"fpcheck", "--config", coarse, "--out", dir.path.string()});
  CHECK(r.code == 3);
  CHECK(r.err.find("negative") != std::string::npos);

  const auto heavy = dir.write(
      "heavy.json", "{\"initial_state\": {\"preset\": \"coherent\", \"mu\": 6}, \"run\": {\"n_paths\": 400}}");
  CHECK(invoke({"trajectories", "--config", heavy, "--seed", "2", "--out", dir.path.string()}).code == 4);
  CHECK(slurp(dir.path / "trajectories.json").find("\"seed\": 2") != std::string::npos);

  SUBCASE("output directory precedence") {
    const auto env_dir = dir.path / "env";
    const auto cfg_dir = dir.path / "cfg";
    const auto cfg = dir.write("out.json", "{\"output\": {\"dir\": \"" + cfg_dir.string() + "\"}}");
    CHECK(invoke({"rates", "--config", cfg}).code == 0);
    CHECK(fs::exists(cfg_dir / "rates.csv"));
    ::setenv("WFLUX_OUT_DIR", env_dir.string().c_str(), 1);
    CHECK(invoke({"rates", "--config", cfg}).code == 0);
    CHECK(fs::exists(env_dir / "rates.csv"));
    CHECK(invoke({"rates", "--config", cfg, "--out", dir.path.string()}).code == 0);
    CHECK(fs::exists(dir.path / "rates.csv"));
    ::unsetenv("WFLUX_OUT_DIR");
  }
  SUBCASE("thread cap does not change the bytes") {
    const auto small = dir.write("small.json", "{\"run\": {\"n_paths\": 2000}}");
    ::setenv("WFLUX_THREADS", "1", 1);
    CHECK(invoke({"trajectories", "--config", small, "--out", (dir.path / "t1").string()}).code == 0);
    ::setenv("WFLUX_THREADS", "4", 1);
    CHECK(invoke({"trajectories", "--config", small, "--out", (dir.path / "t4").string()}).code == 0);
    CHECK(slurp(dir.path / "t1" / "trajectories.json") == slurp(dir.path / "t4" / "trajectories.json"));
    ::setenv("WFLUX_THREADS", "zero", 1);
    CHECK(invoke({"trajectories", "--config", small, "--out", dir.path.string()}).code == 2);
    ::unsetenv("WFLUX_THREADS");
  }
}
