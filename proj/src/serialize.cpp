#include "nlch/io/serialize.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace nlch::io {

namespace {

std::string g17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string trace_csv(const Trajectory<double>& tr) {
  std::string out = std::string(kTraceHeader) + "\n";
  for (std::size_t n = 0; n < tr.u.size(); ++n) {
    out += std::to_string(n);
    for (double v : {tr.times[n], tr.energies[n], tr.masses[n], tr.dual_step_norms[n], tr.el_residuals[n]})
      out += "," + g17(v);
    out += "\n";
  }
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
}

void write_trace_csv(const std::string& path, const Trajectory<double>& tr) { write_text(path, trace_csv(tr)); }

json grid_metadata(const Grid<double>& grid) {
  json boxes = json::array();
  for (const auto& b : grid.components) {
    json lo = json::array(), hi = json::array();
    for (int a = 0; a < grid.dim; ++a) {
      lo.push_back(b.lo[a]);
      hi.push_back(b.hi[a]);
    }
    boxes.push_back({{"lo", lo}, {"hi", hi}});
  }
  return {{"dim", grid.dim}, {"n_per_axis", grid.n_per_axis}, {"size", grid.size()}, {"boxes", boxes}};
}

json snapshot_json(const Snapshot& s) {
  return {{"field", s.field},
          {"step", s.step},
          {"time", s.time},
          {"grid", s.grid},
          {"values", std::vector<double>(s.values.data(), s.values.data() + s.values.size())}};
}

Snapshot snapshot_from_json(const json& j) {
  Snapshot s;
  try {
    s.field = j.at("field").get<std::string>();
    s.step = j.at("step").get<int>();
    s.time = j.at("time").get<double>();
    s.grid = j.at("grid");
    const auto v = j.at("values").get<std::vector<double>>();
    s.values = Eigen::Map<const Vector<double>>(v.data(), Eigen::Index(v.size()));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed snapshot: ") + e.what());
  }
  if (s.grid.contains("size") && s.grid["size"].get<Eigen::Index>() != s.values.size())
    throw ConfigError("malformed snapshot: value count does not match grid size");
  return s;
}

void write_snapshot(const std::string& path, const Snapshot& s) { write_text(path, snapshot_json(s).dump() + "\n"); }

Snapshot read_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  try {
    return snapshot_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed snapshot: ") + e.what());
  }
}

int write_snapshots(const std::string& directory, const Trajectory<double>& tr, const Grid<double>& grid, int stride) {
  const json meta = grid_metadata(grid);
  const int last = int(tr.u.size()) - 1;
  int written = 0;
  for (int n = 0; n <= last; ++n) {
    const bool keep = stride > 0 ? (n % stride == 0 || n == last) : (n == 0 || n == last);
    if (!keep) continue;
    char name[32];
    std::snprintf(name, sizeof name, "%06d", n);
    const std::pair<const char*, const Vector<double>*> fields[] = {{"u", &tr.u[n]}, {"w", &tr.w[n]}, {"zeta", &tr.zeta[n]}};
    for (const auto& [field, values] : fields) {
      if (values->size() == 0) continue;
      write_snapshot(directory + "/" + field + "_" + name + ".json", {field, n, tr.times[n], meta, *values});
      ++written;
    }
  }
  return written;
}

json to_json(const CheckResult& c) {
  auto num = [](double x) { return std::isfinite(x) ? json(x) : json(x > 0 ? "inf" : (x < 0 ? "-inf" : "nan")); };
  return {{"name", c.name}, {"value", num(c.value)}, {"threshold", num(c.threshold)}, {"pass", c.pass}, {"notes", c.notes}};
}

json to_json(const Report& r) {
  json checks = json::array();
  for (const auto& c : r.checks) checks.push_back(to_json(c));
  return {{"name", r.name}, {"pass", r.pass()}, {"checks", checks}};
}

}  // namespace nlch::io
