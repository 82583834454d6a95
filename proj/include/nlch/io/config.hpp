#pragma once

#include "nlch/scheme.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace nlch::io {

/// Every validation problem found in a configuration, each naming its keys.
class ConfigErrors : public ConfigError {
 public:
  explicit ConfigErrors(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const { return errors_; }

 private:
  std::vector<std::string> errors_;
};

struct GridBlock {
  int dim = 1;
  std::vector<Box<double>> boxes{Box<double>::interval(0, 1)};
  int n_per_axis = 32;
  double ext_radius = 0;
  int ext_refine = 4;
};

struct KernelBlock {
  KernelSpec<double> spec = KernelSpec<double>::power_regional(0.5, 2);
  KernelMode mode = KernelMode::Regional;
  std::string integrability = "full";  ///< full | local
  double local_margin = 0.25;
  int samples = 2000;
};

struct PotentialBlock {
  std::string kind = "quartic";  ///< quartic | logarithmic | obstacle | zero
  double theta = 1;
  double theta_c = 1.5;
};

struct OperatorBlock {
  std::string kind = "regional_fractional";
  double sigma = 0;  ///< order of fractional kinds; 0 reuses the kernel block
  std::vector<std::string> terms;  ///< kinds summed when kind = sum
};

struct InitialBlock {
  std::string kind = "cosine";  ///< constant | cosine | sine | random
  double mean = 0;
  double amplitude = 0.5;
  int mode = 2;
  double clamp = 0;  ///< > 0: clamp the datum to [-clamp, clamp]
};

struct SchemeBlock {
  double T = 0.1;
  int n_steps = 20;
  double lambda = 0.01;
  std::string phi = "power";  ///< power | half_power
  double q = 2;
  MassMode mass_mode = MassMode::Conserved;
  bool mass_given = false;
  double mass = 0;
  InnerSettings<double> inner;
};

struct OutputBlock {
  std::string directory = "out";
  int snapshot_stride = 0;  ///< 0: first and last only
  bool csv = true;
  bool json = true;
};

struct RunConfig {
  GridBlock grid;
  KernelBlock kernel;
  PotentialBlock potential;
  OperatorBlock op;
  InitialBlock initial;
  SchemeBlock scheme;
  OutputBlock output;
  std::uint64_t seed = 1;
};

/// Parses and validates YAML text; throws ConfigErrors listing all problems.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);

/// Objects built from a validated configuration.
struct Problem {
  Grid<double> grid;
  SchemeConfig<double> scheme;
  Vector<double> u0;
};

Grid<double> build_grid(const GridBlock& g);
Potential<double> build_potential(const PotentialBlock& p);
OperatorL<double> build_operator(const OperatorBlock& op, const KernelBlock& kernel, const Grid<double>& grid);
Vector<double> build_initial(const InitialBlock& init, const Grid<double>& grid, std::uint64_t seed);
Problem build_problem(const RunConfig& cfg);

}  // namespace nlch::io
