#include "nlch/io/commands.hpp"

#include <filesystem>
#include <iomanip>
#include <ostream>

namespace nlch::io {

namespace {

RunConfig load(const CommandOptions& opt) {
  RunConfig cfg = opt.config.empty() ? parse_config("") : load_config(opt.config);
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.out) cfg.output.directory = *opt.out;
  return cfg;
}

std::string member_dir(const RunConfig& cfg, const std::string& name) { return cfg.output.directory + "/" + name; }

json num(double x) { return std::isfinite(x) ? json(x) : json(x > 0 ? "inf" : "nan"); }

json series(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

void emit(std::ostream& out, const RunConfig& cfg, const std::string& file, const json& report) {
  const std::string text = report.dump(2) + "\n";
  out << text;
  write_text(cfg.output.directory + "/" + file, text);
}

int code(bool pass) { return pass ? kSuccess : kCheckFailed; }

json trajectory_summary(const Trajectory<double>& tr) {
  double drift = 0;
  for (double m : tr.masses) drift = std::max(drift, std::abs(m - tr.masses.front()));
  return {{"steps", tr.steps()},
          {"tau", tr.tau},
          {"initial_energy", tr.initial_energy},
          {"final_energy", tr.energies.back()},
          {"mass_drift", drift},
          {"max_el_residual", *std::max_element(tr.el_residuals.begin(), tr.el_residuals.end())}};
}

/// Runs the scheme and writes the trace and snapshots, partial on failure.
Trajectory<double> solve_and_write(const Problem& pb, const RunConfig& cfg, const std::string& dir) {
  Trajectory<double> partial;
  try {
    auto tr = run<double>(pb.u0, pb.scheme, {}, &partial);
    if (cfg.output.csv) write_trace_csv(dir + "/trace.csv", tr);
    if (cfg.output.json) write_snapshots(dir + "/snapshots", tr, pb.grid, cfg.output.snapshot_stride);
    return tr;
  } catch (const NumericalError&) {
    if (cfg.output.csv && !partial.u.empty()) write_trace_csv(dir + "/trace.csv", partial);
    throw;
  }
}

int cmd_solve(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const Problem pb = build_problem(cfg);
  const auto tr = solve_and_write(pb, cfg, cfg.output.directory);
  const Report energy = energy_estimate_check(tr, pb.scheme);
  json rep = trajectory_summary(tr);
  rep["energy_estimate"] = to_json(energy);
  emit(out, cfg, "report.json", rep);
  return kSuccess;
}

int cmd_allen_cahn(const CommandOptions& opt, std::ostream& out) {
  RunConfig cfg = load(opt);
  cfg.op = OperatorBlock{"identity_riesz", 0, {}};
  cfg.scheme.mass_mode = MassMode::Free;
  cfg.scheme.mass_given = false;
  const Problem pb = build_problem(cfg);
  const auto tr = allen_cahn_run<double>(pb.u0, pb.scheme);
  if (cfg.output.csv) write_trace_csv(cfg.output.directory + "/trace.csv", tr);
  if (cfg.output.json) write_snapshots(cfg.output.directory + "/snapshots", tr, pb.grid, cfg.output.snapshot_stride);
  const Report energy = energy_estimate_check(tr, pb.scheme);
  json rep = trajectory_summary(tr);
  rep["energy_estimate"] = to_json(energy);
  if (pb.scheme.potential.kind == GammaKind::Obstacle) rep["obstacle_violation"] = obstacle_violation(tr);
  emit(out, cfg, "report.json", rep);
  return code(energy.pass());
}

int cmd_kernel_check(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const auto grid = build_grid(cfg.grid);
  const auto& spec = cfg.kernel.spec;
  Report rep{"kernel_check", {}};

  const auto sing = check_singularity(spec, grid, cfg.kernel.samples, cfg.seed);
  rep.add("singularity", sing.margin, sing.threshold, sing.pass,
          std::to_string(sing.pairs_checked) + " pairs; min K |x-y|^(d+sq)");

  const bool local = cfg.kernel.integrability == "local";
  const auto integ = check_integrability(spec, grid, cfg.kernel.mode, local ? cfg.kernel.local_margin : 0.0);
  rep.add(local ? "integrability_local" : "integrability_full", integ.study.relative_change, integ.study.tolerance,
          integ.pass, "extrapolated estimate " + std::to_string(integ.estimate));

  const auto km = assemble(spec, grid, cfg.kernel.mode);
  const double scale = km.pair_weights.cwiseAbs().maxCoeff();
  const double defect = scale > 0 ? (km.pair_weights - km.pair_weights.transpose()).cwiseAbs().maxCoeff() / scale : 0;
  rep.add("symmetry_defect", defect, 1e-14, defect <= 1e-14);

  json j = to_json(rep);
  j["family"] = to_string(spec.family);
  j["mode"] = to_string(cfg.kernel.mode);
  j["integrability_estimates"] = series(integ.study.estimates);
  if (spec.family == KernelFamily::NeumannK3) {
    const auto fit = fit_k3_sandwich(km, grid);
    j["sandwich"] = {{"C", fit.C}, {"min_ratio", fit.min_ratio}, {"max_ratio", fit.max_ratio}, {"pairs", fit.pairs}};
  }
  emit(out, cfg, "kernel_check.json", j);
  return code(rep.pass());
}

int cmd_potential_check(const CommandOptions& opt, std::ostream& out) {
  RunConfig cfg = load(opt);
  if (!opt.potential.empty()) cfg.potential.kind = opt.potential;
  if (cfg.potential.kind == "zero") throw ConfigError("potential-check: potential must be quartic, logarithmic or obstacle");
  if (cfg.potential.kind != "quartic" && cfg.potential.kind != "logarithmic" && cfg.potential.kind != "obstacle")
    throw ConfigError("potential-check: unknown potential '" + cfg.potential.kind + "'");
  const auto f = build_potential(cfg.potential);
  validate(f);
  const std::vector<double> lambdas = opt.lambdas.empty() ? std::vector<double>{1e-1, 1e-2, 1e-3} : opt.lambdas;
  for (double lam : lambdas)
    if (!(lam > 0)) throw ConfigError("--lambda-sweep: values must be > 0");
  Report rep{"potential_check", {}};
  for (double lam : lambdas)
    for (auto c : prox_invariants(f, lam)) {
      c.name += " lambda=" + std::to_string(lam);
      rep.checks.push_back(c);
    }
  const auto samples = potential_samples<double>();
  const auto coerc = verify_coercivity(f, lambdas, samples);
  rep.add("coercivity", *std::max_element(coerc.alpha.begin(), coerc.alpha.end()), coerc.alpha_cap, coerc.pass,
          "a3 = " + std::to_string(coerc.a3) + ", beta = " + std::to_string(coerc.beta));
  const auto lim = gamma_liminf_check(f, samples, lambdas);
  rep.add("gamma_liminf", lim.worst_gap, 0, lim.pass, lim.notes);
  json j = to_json(rep);
  j["potential"] = cfg.potential.kind;
  j["lambdas"] = lambdas;
  emit(out, cfg, "potential_check.json", j);
  return code(rep.pass());
}

int cmd_sweep_tau(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const Problem pb = build_problem(cfg);
  std::vector<int> n_steps;
  if (opt.values.empty()) {
    for (int k = 0; k < 3; ++k) n_steps.push_back(pb.scheme.n_steps << k);
  } else {
    for (double tau : opt.values) {
      const double n = pb.scheme.T / tau;
      if (!(tau > 0) || std::abs(n - std::round(n)) > 1e-9 * n)
        throw ConfigError("--values: each tau must divide scheme.T (got " + std::to_string(tau) + ")");
      n_steps.push_back(int(std::lround(n)));
    }
  }
  const auto sw = tau_sweep<double>(pb.u0, pb.scheme, n_steps, opt.jobs);
  json j = to_json(sw.report);
  j["n_steps"] = sw.n_steps;
  j["differences"] = series(sw.differences);
  emit(out, cfg, "sweep_tau.json", j);
  return code(sw.report.pass());
}

int cmd_sweep_lambda(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const Problem pb = build_problem(cfg);
  const std::vector<double> lambdas = opt.values.empty() ? std::vector<double>{1e-1, 1e-2, 1e-3} : opt.values;
  for (double lam : lambdas)
    if (!(lam > 0 && lam < 1)) throw ConfigError("--values: each lambda must lie in (0,1)");
  const auto sw = lambda_sweep<double>(pb.u0, pb.scheme, lambdas, opt.jobs);
  Report rep = sw.report;
  for (std::size_t k = 0; k < sw.runs.size(); ++k) {
    char name[48];
    std::snprintf(name, sizeof name, "lambda_%.3e", sw.lambdas[k]);
    if (cfg.output.csv) write_trace_csv(member_dir(cfg, name) + "/trace.csv", sw.runs[k]);
  }
  json j = to_json(rep);
  j["lambdas"] = sw.lambdas;
  j["violations"] = series(sw.violations);
  j["bounds"] = series(sw.bounds);
  j["zeta_l1_sums"] = series(sw.zeta_sums);
  emit(out, cfg, "sweep_lambda.json", j);
  return code(rep.pass());
}

int cmd_sweep_s(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const std::vector<double> s_list = opt.values.empty() ? std::vector<double>{0.5, 0.7, 0.9} : opt.values;
  std::vector<Problem> problems;
  for (double s : s_list) {
    RunConfig c = cfg;
    c.kernel.spec.s = s;
    problems.push_back(build_problem(c));
  }
  const auto runs = detail::parallel_map(s_list.size(), opt.jobs, [&](std::size_t k) {
    return run<double>(problems[k].u0, problems[k].scheme);
  });
  Report rep{"sweep_s", {}};
  json members = json::array();
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const Report e = energy_estimate_check(runs[k], problems[k].scheme);
    for (auto c : e.checks) {
      c.name += " s=" + std::to_string(s_list[k]);
      rep.checks.push_back(c);
    }
    json m = trajectory_summary(runs[k]);
    m["s"] = s_list[k];
    members.push_back(m);
    char name[32];
    std::snprintf(name, sizeof name, "s_%.4f", s_list[k]);
    if (cfg.output.csv) write_trace_csv(member_dir(cfg, name) + "/trace.csv", runs[k]);
  }
  json j = to_json(rep);
  j["members"] = members;
  emit(out, cfg, "sweep_s.json", j);
  return code(rep.pass());
}

int cmd_compare_local(const CommandOptions& opt, std::ostream& out) {
  const RunConfig cfg = load(opt);
  const Problem pb = build_problem(cfg);
  const std::vector<double> s_list = opt.values.empty() ? std::vector<double>{0.5, 0.7, 0.9, 0.95} : opt.values;
  for (double s : s_list)
    if (!(s > 0 && s < 1)) throw ConfigError("--values: each s must lie in (0,1)");
  const auto res = local_limit_study<double>(pb.u0, s_list, pb.scheme, pb.grid, opt.jobs);
  json j = to_json(res.report);
  j["s"] = res.s_list;
  j["distances"] = series(res.distances);
  j["local_constants"] = series(res.fitted_constants);
  emit(out, cfg, "compare_local.json", j);
  return code(res.report.pass());
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"solve",        "kernel-check", "potential-check", "sweep-tau",
                                                 "sweep-lambda", "sweep-s",      "compare-local",   "allen-cahn"};
  return names;
}

int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out) {
  if (name == "solve") return cmd_solve(opt, out);
  if (name == "kernel-check") return cmd_kernel_check(opt, out);
  if (name == "potential-check") return cmd_potential_check(opt, out);
  if (name == "sweep-tau") return cmd_sweep_tau(opt, out);
  if (name == "sweep-lambda") return cmd_sweep_lambda(opt, out);
  if (name == "sweep-s") return cmd_sweep_s(opt, out);
  if (name == "compare-local") return cmd_compare_local(opt, out);
  if (name == "allen-cahn") return cmd_allen_cahn(opt, out);
  throw ConfigError("unknown subcommand '" + name + "'");
}

int dispatch(const std::string& name, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    return run_command(name, opt, out);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const PreconditionError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DomainError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kNumericalError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace nlch::io
