#pragma once

#include "nlch/io/config.hpp"
#include "nlch/io/serialize.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace nlch::io {

enum ExitCode : int { kSuccess = 0, kCheckFailed = 1, kConfigError = 2, kNumericalError = 3 };

struct CommandOptions {
  std::string config;  ///< empty: built-in defaults
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  unsigned jobs = 0;
  std::vector<double> values;  ///< sweep values (tau, lambda or s)
  std::string potential;       ///< potential-check: quartic | logarithmic | obstacle
  std::vector<double> lambdas;  ///< potential-check --lambda-sweep
};

const std::vector<std::string>& command_names();

/// Runs one subcommand, writing its JSON report to `out`. Throws on
/// configuration and numerical errors.
int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out);

/// run_command with errors mapped to exit codes and reported on `err`.
int dispatch(const std::string& name, const CommandOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace nlch::io
