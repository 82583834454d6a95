#include <doctest.h>

#include "nlch/io/commands.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace nlch;
using namespace nlch::io;

namespace {

std::vector<std::string> errors_of(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const ConfigErrors& e) {
    return e.errors();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, std::initializer_list<const char*> parts) {
  for (const auto& s : v) {
    bool all = true;
    for (const char* p : parts) all = all && s.find(p) != std::string::npos;
    if (all) return true;
  }
  return false;
}

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("nlch_unit_" + name);
  std::filesystem::remove_all(p);
  return p;
}

int cli(const std::string& args) {
  const int status = std::system((std::string(NLCH_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("empty configuration gives the defaults") {
  const auto cfg = parse_config("");
  CHECK(cfg.grid.n_per_axis == 32);
  CHECK(cfg.kernel.spec.family == KernelFamily::PowerRegional);
  CHECK(cfg.scheme.mass_mode == MassMode::Conserved);
}

TEST_CASE("unknown keys are reported with their path") {
  const auto e = errors_of("grid:\n  n_per_axis: 8\n  colour: red\nbogus: 1\n");
  CHECK(any_contains(e, {"grid.colour"}));
  CHECK(any_contains(e, {"bogus"}));
}

TEST_CASE("type mismatches are reported") {
  CHECK(any_contains(errors_of("grid:\n  n_per_axis: eight\n"), {"grid.n_per_axis"}));
  CHECK(any_contains(errors_of("scheme:\n  T: [1, 2]\n"), {"scheme.T"}));
}

TEST_CASE("tau and T determine the step count") {
  auto cfg = parse_config("scheme:\n  T: 0.2\n  tau: 0.05\n");
  CHECK(cfg.scheme.n_steps == 4);
  cfg = parse_config("scheme:\n  n_steps: 8\n  tau: 0.01\n");
  CHECK(cfg.scheme.T == doctest::Approx(0.08));
  CHECK(any_contains(errors_of("scheme:\n  T: 0.2\n  tau: 0.03\n"), {"scheme.tau", "scheme.T"}));
  CHECK(any_contains(errors_of("scheme:\n  T: 0.2\n  n_steps: 4\n  tau: 0.1\n"), {"scheme.tau"}));
}

TEST_CASE("conserved mode with a dirichlet kernel names both keys") {
  const auto e = errors_of("kernel:\n  family: power_global\n  s: 0.5\n  mode: dirichlet\nscheme:\n  mass_mode: conserved\n");
  CHECK(any_contains(e, {"scheme.mass_mode", "kernel.mode"}));
}

TEST_CASE("configuration builds a consistent problem") {
  const auto cfg = parse_config(
      "grid:\n  n_per_axis: 12\nkernel:\n  family: power_regional\n  s: 0.4\ninitial:\n  kind: cosine\n  mean: 0.25\n  amplitude: 0.3\n");
  const auto pb = build_problem(cfg);
  CHECK(pb.grid.size() == 12);
  CHECK(pb.u0.size() == 12);
  CHECK(pb.scheme.mass == doctest::Approx(pb.grid.mean(pb.u0)));
  CHECK(pb.grid.mean(pb.u0) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("random initial data depends only on the seed") {
  const auto cfg = parse_config("initial:\n  kind: random\n  amplitude: 0.2\n");
  const auto g = build_grid(cfg.grid);
  CHECK((build_initial(cfg.initial, g, 3) - build_initial(cfg.initial, g, 3)).cwiseAbs().maxCoeff() == 0);
  CHECK((build_initial(cfg.initial, g, 3) - build_initial(cfg.initial, g, 4)).cwiseAbs().maxCoeff() > 0);
}

TEST_CASE("snapshot JSON round-trips bit for bit") {
  const auto g = build_grid<double>(1, Box<double>::interval(0, 1), 5);
  Snapshot s;
  s.field = "u";
  s.step = 3;
  s.time = 0.1 / 3;
  s.grid = grid_metadata(g);
  s.values = Vector<double>(5);
  s.values << 1.0 / 3, -2e-300, 0.1, 1e17 + 3, -0.0;
  const auto dir = scratch("snap");
  write_snapshot((dir / "s.json").string(), s);
  const auto r = read_snapshot((dir / "s.json").string());
  CHECK(r.field == "u");
  CHECK(r.step == 3);
  CHECK(r.time == s.time);
  CHECK(r.grid == s.grid);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(r.values[i] == s.values[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trace CSV has the fixed header and round-trips doubles") {
  Trajectory<double> tr;
  tr.times = {0, 1.0 / 3};
  tr.u = {Vector<double>::Zero(1), Vector<double>::Zero(1)};
  tr.energies = {0.1, 2.0 / 7};
  tr.masses = {0.2, 0.2};
  tr.dual_step_norms = {0, 1e-5 / 3};
  tr.el_residuals = {0, 3e-12};
  std::istringstream in(trace_csv(tr));
  std::string line;
  std::getline(in, line);
  CHECK(line == kTraceHeader);
  std::getline(in, line);
  std::getline(in, line);
  std::istringstream row(line);
  std::string cell;
  std::vector<double> v;
  while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
  REQUIRE(v.size() == 6);
  CHECK(v[1] == 1.0 / 3);
  CHECK(v[2] == 2.0 / 7);
  CHECK(v[4] == 1e-5 / 3);
}

TEST_CASE("non-finite check values are written as strings") {
  const json j = to_json(CheckResult{"c", std::numeric_limits<double>::infinity(), 1, false, ""});
  CHECK(j["value"] == "inf");
}

TEST_CASE("dispatch maps errors to exit codes") {
  std::ostringstream out, err;
  CommandOptions opt;
  opt.config = std::string(NLCH_TEST_DATA) + "/conserved_dirichlet.yaml";
  opt.out = scratch("dispatch").string();
  CHECK(dispatch("solve", opt, out, err) == kConfigError);
  CHECK(err.str().find("kernel.mode") != std::string::npos);
  opt.config = "/nonexistent/config.yaml";
  CHECK(dispatch("solve", opt, out, err) == kConfigError);
  std::filesystem::remove_all(*opt.out);
}

TEST_CASE("command line exit codes") {
  const std::string data = NLCH_TEST_DATA;
  const std::string out = scratch("cli").string();
  CHECK(cli("solve --config " + data + "/dirichlet_minimal.yaml --out " + out) == 0);
  CHECK(std::filesystem::exists(out + "/trace.csv"));
  CHECK(cli("solve --config " + data + "/conserved_dirichlet.yaml --out " + out) == 2);
  CHECK(cli("kernel-check --config " + data + "/k2_full.yaml --out " + out) == 1);
  CHECK(cli("potential-check obstacle --lambda-sweep 1e-1,1e-2 --out " + out) == 0);
  CHECK(cli("no-such-command") == 2);
  std::filesystem::remove_all(out);
}
