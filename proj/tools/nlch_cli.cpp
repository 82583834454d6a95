#include "nlch/io/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  using namespace nlch::io;
  CLI::App app{"Nonlocal Cahn-Hilliard solver"};
  app.require_subcommand(1);

  CommandOptions opt;
  std::uint64_t seed = 1;
  std::string out;
  for (const auto& name : command_names()) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", opt.config, "YAML run configuration")->envname("NLCH_CONFIG");
    sub->add_option("--seed", seed, "global seed (overrides the config)")->envname("NLCH_SEED");
    sub->add_option("--out", out, "output directory (overrides output.directory)")->envname("NLCH_OUT");
    sub->add_option("--jobs", opt.jobs, "worker threads for sweeps (0: hardware)")->envname("NLCH_JOBS");
    if (name.rfind("sweep-", 0) == 0 || name == "compare-local")
      sub->add_option("--values", opt.values, "comma-separated sweep values")
          ->delimiter(',')
          ->envname("NLCH_VALUES");
    if (name == "potential-check") {
      sub->add_option("potential", opt.potential, "quartic | logarithmic | obstacle");
      sub->add_option("--lambda-sweep", opt.lambdas, "comma-separated lambdas")
          ->delimiter(',')
          ->envname("NLCH_LAMBDA_SWEEP");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kSuccess : kConfigError;
  }

  auto* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--out")) opt.out = out;
  return dispatch(sub->get_name(), opt, std::cout, std::cerr);
}
