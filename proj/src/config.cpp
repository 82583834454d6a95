#include "nlch/io/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace nlch::io {

namespace {

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
  return out;
}

class Reader {
 public:
  std::vector<std::string> errors;

  /// Flags keys of `node` outside `allowed`.
  void keys(const YAML::Node& node, const std::string& block, const std::set<std::string>& allowed) {
    if (!node || node.IsNull()) return;
    if (!node.IsMap()) {
      errors.push_back(block + ": expected a mapping");
      return;
    }
    for (const auto& kv : node) {
      const auto key = kv.first.as<std::string>();
      if (!allowed.count(key)) errors.push_back(block + "." + key + ": unknown key");
    }
  }

  template <class T>
  bool get(const YAML::Node& node, const std::string& block, const std::string& key, T& out) {
    if (!node || !node.IsMap() || !node[key]) return false;
    try {
      out = node[key].as<T>();
      return true;
    } catch (const YAML::Exception&) {
      errors.push_back(block + "." + key + ": expected " + type_name<T>());
      return false;
    }
  }

  bool get_list(const YAML::Node& node, const std::string& block, const std::string& key, std::vector<double>& out) {
    if (!node || !node.IsMap() || !node[key]) return false;
    try {
      out = node[key].as<std::vector<double>>();
      return true;
    } catch (const YAML::Exception&) {
      errors.push_back(block + "." + key + ": expected a list of numbers");
      return false;
    }
  }

  void check(bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "a boolean";
    else if constexpr (std::is_integral_v<T>) return "an integer";
    else if constexpr (std::is_floating_point_v<T>) return "a number";
    else return "a string";
  }
};

std::optional<KernelFamily> family_from(const std::string& s) {
  for (auto f : {KernelFamily::PowerGlobal, KernelFamily::PowerRegional, KernelFamily::SumPower,
                 KernelFamily::VariableOrder, KernelFamily::PiecewiseRegion, KernelFamily::PeriodicLattice,
                 KernelFamily::NeumannK3, KernelFamily::SpectralNeumannK4})
    if (s == to_string(f)) return f;
  return std::nullopt;
}

std::optional<KernelMode> mode_from(const std::string& s) {
  for (auto m : {KernelMode::Dirichlet, KernelMode::Regional, KernelMode::Periodic})
    if (s == to_string(m)) return m;
  return std::nullopt;
}

const std::set<std::string> kOperatorKinds = {"identity_riesz", "laplacian_dirichlet", "laplacian_neumann",
                                              "fractional_dirichlet", "regional_fractional", "sum"};

bool kind_mass_split(const std::string& kind) { return kind == "laplacian_neumann" || kind == "regional_fractional"; }

/// Parses a 1D interval [a, b] or a 2D box [[ax, bx], [ay, by]].
bool parse_box(const YAML::Node& n, int dim, Box<double>& box) {
  try {
    if (dim == 1) {
      const auto v = n.as<std::vector<double>>();
      if (v.size() != 2) return false;
      box = Box<double>::interval(v[0], v[1]);
      return true;
    }
    const auto v = n.as<std::vector<std::vector<double>>>();
    if (v.size() != 2 || v[0].size() != 2 || v[1].size() != 2) return false;
    box = Box<double>::rectangle(v[0][0], v[0][1], v[1][0], v[1][1]);
    return true;
  } catch (const YAML::Exception&) {
    return false;
  }
}

}  // namespace

ConfigErrors::ConfigErrors(std::vector<std::string> errors)
    : ConfigError("invalid configuration:\n  " + join(errors, "\n  ")), errors_(std::move(errors)) {}

RunConfig parse_config(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigErrors({std::string("syntax: ") + e.what()});
  }
  if (!root || root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
  Reader rd;
  RunConfig cfg;
  rd.keys(root, "config", {"seed", "grid", "kernel", "potential", "operator", "initial", "scheme", "output"});
  rd.get(root, "config", "seed", cfg.seed);

  // grid
  const auto g = root["grid"];
  rd.keys(g, "grid", {"dim", "box", "boxes", "n_per_axis", "ext_radius", "ext_refine"});
  rd.get(g, "grid", "dim", cfg.grid.dim);
  rd.check(cfg.grid.dim == 1 || cfg.grid.dim == 2, "grid.dim: must be 1 or 2");
  const int dim = cfg.grid.dim == 2 ? 2 : 1;
  cfg.grid.boxes = {dim == 1 ? Box<double>::interval(0, 1) : Box<double>::rectangle(0, 1, 0, 1)};
  if (g && g["box"] && g["boxes"]) rd.errors.push_back("grid.box, grid.boxes: give only one of them");
  if (g && g["box"]) {
    Box<double> b;
    if (parse_box(g["box"], dim, b)) cfg.grid.boxes = {b};
    else rd.errors.push_back(dim == 1 ? "grid.box: expected [a, b]" : "grid.box: expected [[ax, bx], [ay, by]]");
  }
  if (g && g["boxes"]) {
    cfg.grid.boxes.clear();
    if (!g["boxes"].IsSequence()) rd.errors.push_back("grid.boxes: expected a list of boxes");
    else
      for (const auto& bn : g["boxes"]) {
        Box<double> b;
        if (parse_box(bn, dim, b)) cfg.grid.boxes.push_back(b);
        else rd.errors.push_back("grid.boxes: malformed entry");
      }
  }
  for (auto& b : cfg.grid.boxes) rd.check(!b.degenerate(), "grid.box: degenerate box");
  rd.get(g, "grid", "n_per_axis", cfg.grid.n_per_axis);
  rd.check(cfg.grid.n_per_axis >= 2, "grid.n_per_axis: must be >= 2");
  rd.get(g, "grid", "ext_radius", cfg.grid.ext_radius);
  rd.check(cfg.grid.ext_radius >= 0, "grid.ext_radius: must be >= 0");
  rd.get(g, "grid", "ext_refine", cfg.grid.ext_refine);
  rd.check(cfg.grid.ext_refine >= 1, "grid.ext_refine: must be >= 1");

  // kernel
  const auto k = root["kernel"];
  rd.keys(k, "kernel", {"family", "s", "s_alt", "q", "normalization", "rho", "truncate", "Lambda", "symmetric",
                        "region", "lattice_cutoff", "inner_resolution", "eigen_count", "mode", "integrability",
                        "local_margin", "samples"});
  auto& spec = cfg.kernel.spec;
  std::string family = to_string(spec.family);
  rd.get(k, "kernel", "family", family);
  if (auto f = family_from(family)) {
    spec.family = *f;
    if (spec.family == KernelFamily::SpectralNeumannK4) spec.Lambda = 4;
  } else rd.errors.push_back("kernel.family: unknown family '" + family + "'");
  rd.get(k, "kernel", "s", spec.s);
  rd.get(k, "kernel", "s_alt", spec.s_alt);
  rd.get(k, "kernel", "q", spec.q);
  rd.get(k, "kernel", "normalization", spec.normalization);
  rd.get(k, "kernel", "rho", spec.rho);
  rd.get(k, "kernel", "truncate", spec.truncate);
  rd.get(k, "kernel", "Lambda", spec.Lambda);
  rd.get(k, "kernel", "symmetric", spec.symmetric);
  if (k && k["region"]) {
    if (!parse_box(k["region"], dim, spec.region)) rd.errors.push_back("kernel.region: malformed box");
  }
  rd.get(k, "kernel", "lattice_cutoff", spec.lattice_cutoff);
  rd.get(k, "kernel", "inner_resolution", spec.inner_resolution);
  rd.get(k, "kernel", "eigen_count", spec.eigen_count);
  cfg.kernel.mode = spec.default_mode();
  std::string mode;
  if (rd.get(k, "kernel", "mode", mode)) {
    if (auto m = mode_from(mode)) cfg.kernel.mode = *m;
    else rd.errors.push_back("kernel.mode: unknown mode '" + mode + "'");
  }
  rd.get(k, "kernel", "integrability", cfg.kernel.integrability);
  rd.check(cfg.kernel.integrability == "full" || cfg.kernel.integrability == "local",
           "kernel.integrability: must be full or local");
  rd.get(k, "kernel", "local_margin", cfg.kernel.local_margin);
  rd.get(k, "kernel", "samples", cfg.kernel.samples);
  try {
    validate(spec);
  } catch (const ConfigError& e) {
    rd.errors.push_back(e.what());
  }
  if (const auto why = mode_conflict(spec, cfg.kernel.mode, cfg.grid.boxes.size() == 1); !why.empty())
    rd.errors.push_back(why + " (kernel.family=" + family + ")");
  if (spec.family == KernelFamily::PeriodicLattice) {
    const auto& b = cfg.grid.boxes.front();
    bool unit = cfg.grid.boxes.size() == 1;
    for (int a = 0; a < dim; ++a) unit = unit && b.lo[a] == 0 && b.hi[a] == 1;
    rd.check(unit, "kernel.family=periodic_lattice requires grid.box to be the unit box");
  }

  // potential
  const auto p = root["potential"];
  rd.keys(p, "potential", {"kind", "theta", "theta_c"});
  rd.get(p, "potential", "kind", cfg.potential.kind);
  rd.check(std::set<std::string>{"quartic", "logarithmic", "obstacle", "zero"}.count(cfg.potential.kind) > 0,
           "potential.kind: must be quartic, logarithmic, obstacle or zero");
  rd.get(p, "potential", "theta", cfg.potential.theta);
  rd.get(p, "potential", "theta_c", cfg.potential.theta_c);
  if (cfg.potential.kind == "logarithmic")
    rd.check(cfg.potential.theta > 0 && cfg.potential.theta < cfg.potential.theta_c,
             "potential.theta, potential.theta_c: need 0 < theta < theta_c");

  // operator
  const auto o = root["operator"];
  rd.keys(o, "operator", {"kind", "sigma", "terms"});
  rd.get(o, "operator", "kind", cfg.op.kind);
  rd.get(o, "operator", "sigma", cfg.op.sigma);
  if (o && o["terms"]) {
    try {
      cfg.op.terms = o["terms"].as<std::vector<std::string>>();
    } catch (const YAML::Exception&) {
      rd.errors.push_back("operator.terms: expected a list of operator kinds");
    }
  }
  rd.check(kOperatorKinds.count(cfg.op.kind) > 0, "operator.kind: unknown kind '" + cfg.op.kind + "'");
  rd.check(cfg.op.sigma == 0 || (cfg.op.sigma > 0 && cfg.op.sigma < 1), "operator.sigma: must lie in (0,1)");
  if (cfg.op.kind == "sum") {
    rd.check(!cfg.op.terms.empty(), "operator.terms: required when operator.kind=sum");
    for (const auto& t : cfg.op.terms)
      rd.check(kOperatorKinds.count(t) > 0 && t != "sum", "operator.terms: invalid term '" + t + "'");
  }
  const std::vector<std::string> kinds = cfg.op.kind == "sum" ? cfg.op.terms : std::vector<std::string>{cfg.op.kind};
  bool split = !kinds.empty();
  for (const auto& t : kinds) split = split && kind_mass_split(t);
  for (const auto& t : kinds) {
    const bool reuses_kernel = cfg.op.sigma == 0 && (t == "fractional_dirichlet" || t == "regional_fractional");
    if (reuses_kernel && spec.q != 2)
      rd.errors.push_back("operator.kind=" + t + " with operator.sigma unset reuses the kernel, which needs kernel.q = 2");
    if (reuses_kernel && t == "fractional_dirichlet" && cfg.kernel.mode != KernelMode::Dirichlet)
      rd.errors.push_back("operator.kind=fractional_dirichlet with operator.sigma unset needs kernel.mode=dirichlet");
    if (reuses_kernel && t == "regional_fractional" && cfg.kernel.mode == KernelMode::Dirichlet)
      rd.errors.push_back("operator.kind=regional_fractional with operator.sigma unset needs a regional kernel.mode");
    if ((t == "laplacian_dirichlet" || t == "laplacian_neumann" || t == "fractional_dirichlet") &&
        cfg.grid.boxes.size() != 1)
      rd.errors.push_back("operator.kind=" + t + " requires a single grid.box");
  }

  // initial datum
  const auto in = root["initial"];
  rd.keys(in, "initial", {"kind", "mean", "amplitude", "mode", "clamp"});
  rd.get(in, "initial", "kind", cfg.initial.kind);
  rd.check(std::set<std::string>{"constant", "cosine", "sine", "random"}.count(cfg.initial.kind) > 0,
           "initial.kind: must be constant, cosine, sine or random");
  rd.get(in, "initial", "mean", cfg.initial.mean);
  rd.get(in, "initial", "amplitude", cfg.initial.amplitude);
  rd.get(in, "initial", "mode", cfg.initial.mode);
  rd.get(in, "initial", "clamp", cfg.initial.clamp);
  rd.check(cfg.initial.clamp >= 0, "initial.clamp: must be >= 0");

  // scheme
  const auto s = root["scheme"];
  rd.keys(s, "scheme", {"T", "n_steps", "tau", "lambda", "phi", "q", "mass_mode", "mass", "inner"});
  const bool hasT = rd.get(s, "scheme", "T", cfg.scheme.T);
  const bool hasN = rd.get(s, "scheme", "n_steps", cfg.scheme.n_steps);
  double tau = 0;
  const bool hasTau = rd.get(s, "scheme", "tau", tau);
  if (hasTau) {
    if (!(tau > 0)) rd.errors.push_back("scheme.tau: must be > 0");
    else if (hasT && hasN) {
      rd.check(std::abs(cfg.scheme.T / cfg.scheme.n_steps - tau) <= 1e-12 * tau,
               "scheme.tau, scheme.T, scheme.n_steps: tau must equal T / n_steps");
    } else if (hasT) {
      const double n = cfg.scheme.T / tau;
      rd.check(std::abs(n - std::round(n)) <= 1e-9 * n, "scheme.tau, scheme.T: T / tau must be an integer");
      cfg.scheme.n_steps = int(std::lround(n));
    } else {
      cfg.scheme.T = tau * cfg.scheme.n_steps;
    }
  }
  rd.check(cfg.scheme.T > 0, "scheme.T: must be > 0");
  rd.check(cfg.scheme.n_steps >= 1, "scheme.n_steps: must be >= 1");
  rd.get(s, "scheme", "lambda", cfg.scheme.lambda);
  rd.check(cfg.scheme.lambda > 0 && cfg.scheme.lambda < 1, "scheme.lambda: must lie in (0,1)");
  rd.get(s, "scheme", "phi", cfg.scheme.phi);
  rd.check(cfg.scheme.phi == "power" || cfg.scheme.phi == "half_power", "scheme.phi: must be power or half_power");
  cfg.scheme.q = spec.q;
  if (rd.get(s, "scheme", "q", cfg.scheme.q))
    rd.check(cfg.scheme.q == spec.q, "scheme.q, kernel.q: must agree");
  cfg.scheme.mass_mode = split ? MassMode::Conserved : MassMode::Free;
  std::string mm;
  if (rd.get(s, "scheme", "mass_mode", mm)) {
    if (mm == "conserved") cfg.scheme.mass_mode = MassMode::Conserved;
    else if (mm == "free") cfg.scheme.mass_mode = MassMode::Free;
    else rd.errors.push_back("scheme.mass_mode: must be free or conserved");
  }
  cfg.scheme.mass_given = rd.get(s, "scheme", "mass", cfg.scheme.mass);
  const auto inner = s ? s["inner"] : YAML::Node();
  rd.keys(inner, "scheme.inner", {"tol", "max_iter", "newton", "energy_rtol"});
  rd.get(inner, "scheme.inner", "tol", cfg.scheme.inner.tol);
  rd.get(inner, "scheme.inner", "max_iter", cfg.scheme.inner.max_iter);
  rd.get(inner, "scheme.inner", "newton", cfg.scheme.inner.newton);
  rd.get(inner, "scheme.inner", "energy_rtol", cfg.scheme.inner.energy_rtol);
  rd.check(cfg.scheme.inner.tol > 0, "scheme.inner.tol: must be > 0");
  rd.check(cfg.scheme.inner.max_iter >= 1, "scheme.inner.max_iter: must be >= 1");

  if (cfg.scheme.mass_mode == MassMode::Conserved) {
    if (cfg.kernel.mode == KernelMode::Dirichlet)
      rd.errors.push_back("scheme.mass_mode=conserved is incompatible with kernel.mode=dirichlet");
    if (!split) rd.errors.push_back("scheme.mass_mode=conserved requires a mass-split operator.kind (laplacian_neumann, regional_fractional)");
  } else if (split) {
    rd.errors.push_back("scheme.mass_mode=free requires an invertible operator.kind (got " + cfg.op.kind + ")");
  }

  // output
  const auto out = root["output"];
  rd.keys(out, "output", {"directory", "snapshot_stride", "formats"});
  rd.get(out, "output", "directory", cfg.output.directory);
  rd.get(out, "output", "snapshot_stride", cfg.output.snapshot_stride);
  rd.check(cfg.output.snapshot_stride >= 0, "output.snapshot_stride: must be >= 0");
  if (out && out["formats"]) {
    try {
      const auto f = out["formats"].as<std::vector<std::string>>();
      cfg.output.csv = std::find(f.begin(), f.end(), "csv") != f.end();
      cfg.output.json = std::find(f.begin(), f.end(), "json") != f.end();
      for (const auto& x : f) rd.check(x == "csv" || x == "json", "output.formats: unknown format '" + x + "'");
    } catch (const YAML::Exception&) {
      rd.errors.push_back("output.formats: expected a list of strings");
    }
  }

  if (!rd.errors.empty()) throw ConfigErrors(rd.errors);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigErrors({"--config: cannot read '" + path + "'"});
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Grid<double> build_grid(const GridBlock& g) {
  if (g.boxes.size() == 1) return nlch::build_grid<double>(g.dim, g.boxes.front(), g.n_per_axis, g.ext_radius, g.ext_refine);
  return build_union_grid<double>(g.dim, g.boxes, g.n_per_axis);
}

Potential<double> build_potential(const PotentialBlock& p) {
  if (p.kind == "logarithmic") return Potential<double>::logarithmic(p.theta, p.theta_c);
  if (p.kind == "obstacle") return Potential<double>::obstacle();
  if (p.kind == "zero") return Potential<double>::zero();
  return Potential<double>::quartic();
}

OperatorL<double> build_operator(const OperatorBlock& op, const KernelBlock& kernel, const Grid<double>& grid) {
  auto single = [&](const std::string& kind) {
    if (kind == "identity_riesz") return OperatorL<double>::identity_riesz(grid);
    if (kind == "laplacian_dirichlet") return OperatorL<double>::laplacian_dirichlet(grid);
    if (kind == "laplacian_neumann") return OperatorL<double>::laplacian_neumann(grid);
    if (kind == "fractional_dirichlet") {
      const auto spec = op.sigma > 0 ? KernelSpec<double>::power_global(op.sigma, 2) : kernel.spec;
      return OperatorL<double>::fractional_dirichlet(assemble(spec, grid, KernelMode::Dirichlet));
    }
    if (kind == "regional_fractional") {
      if (op.sigma > 0)
        return OperatorL<double>::regional_fractional(
            assemble(KernelSpec<double>::power_regional(op.sigma, 2), grid, KernelMode::Regional));
      return OperatorL<double>::regional_fractional(assemble(kernel.spec, grid, kernel.mode));
    }
    throw ConfigError("operator.kind: unknown kind '" + kind + "'");
  };
  if (op.kind != "sum") return single(op.kind);
  std::vector<OperatorL<double>> terms;
  for (const auto& t : op.terms) terms.push_back(single(t));
  return OperatorL<double>::sum(terms);
}

Vector<double> build_initial(const InitialBlock& init, const Grid<double>& grid, std::uint64_t seed) {
  const Eigen::Index n = grid.size();
  Vector<double> u = Vector<double>::Constant(n, init.mean);
  const auto& box = grid.box();
  if (init.kind == "random") {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(-1, 1);
    for (Eigen::Index i = 0; i < n; ++i) u[i] += init.amplitude * unif(rng);
  } else if (init.kind == "cosine" || init.kind == "sine") {
    for (Eigen::Index i = 0; i < n; ++i) {
      double v = 1;
      for (int a = 0; a < grid.dim; ++a) {
        const double t = init.mode * pi_v<double>() * (grid.nodes[i][a] - box.lo[a]) / box.extent(a);
        v *= init.kind == "cosine" ? std::cos(t) : std::sin(t);
      }
      u[i] += init.amplitude * v;
    }
  }
  if (init.clamp > 0) u = u.cwiseMax(-init.clamp).cwiseMin(init.clamp);
  return u;
}

Problem build_problem(const RunConfig& cfg) {
  Problem pb;
  pb.grid = build_grid(cfg.grid);
  auto& sc = pb.scheme;
  sc.T = cfg.scheme.T;
  sc.n_steps = cfg.scheme.n_steps;
  sc.lambda = cfg.scheme.lambda;
  sc.phi = cfg.scheme.phi == "half_power" ? PhiSpec<double>::half_power(cfg.scheme.q)
                                          : PhiSpec<double>::power(cfg.scheme.q);
  sc.kernel = assemble(cfg.kernel.spec, pb.grid, cfg.kernel.mode);
  sc.opL = build_operator(cfg.op, cfg.kernel, pb.grid);
  sc.potential = build_potential(cfg.potential);
  sc.mass_mode = cfg.scheme.mass_mode;
  sc.inner = cfg.scheme.inner;
  pb.u0 = build_initial(cfg.initial, pb.grid, cfg.seed);
  sc.mass = cfg.scheme.mass_given ? cfg.scheme.mass : pb.grid.mean(pb.u0);
  if (cfg.scheme.mass_given && sc.mass_mode == MassMode::Conserved &&
      std::abs(pb.grid.mean(pb.u0) - sc.mass) > 1e-12 * (1 + std::abs(sc.mass)))
    throw ConfigErrors({"scheme.mass, initial: the initial datum has mass " + std::to_string(pb.grid.mean(pb.u0))});
  validate(sc);
  return pb;
}

}  // namespace nlch::io
