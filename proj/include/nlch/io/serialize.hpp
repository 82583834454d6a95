#pragma once

#include "nlch/diagnostics.hpp"

#include <json.hpp>

#include <string>

namespace nlch::io {

using nlohmann::json;

inline const char* kTraceHeader = "n,t,energy,mass,dual_step_norm,el_residual";

/// Trace CSV, one row per saved step, 17 significant digits.
std::string trace_csv(const Trajectory<double>& tr);
void write_trace_csv(const std::string& path, const Trajectory<double>& tr);

struct Snapshot {
  std::string field;  ///< u | w | zeta
  int step = 0;
  double time = 0;
  json grid;
  Vector<double> values;
};

json grid_metadata(const Grid<double>& grid);
json snapshot_json(const Snapshot& s);
Snapshot snapshot_from_json(const json& j);
void write_snapshot(const std::string& path, const Snapshot& s);
Snapshot read_snapshot(const std::string& path);

/// Writes u, w, zeta snapshots of every `stride`-th step (0: first and last).
/// Returns the number of files written.
int write_snapshots(const std::string& directory, const Trajectory<double>& tr, const Grid<double>& grid, int stride);

json to_json(const CheckResult& c);
json to_json(const Report& r);

void write_text(const std::string& path, const std::string& text);

}  // namespace nlch::io
