#pragma once

#include "nlch/scheme.hpp"

#include <Eigen/Eigenvalues>

#include <atomic>
#include <exception>
#include <thread>

namespace nlch {

namespace detail {

/// Evaluates f(0..count-1) on at most `jobs` threads (0: hardware concurrency);
/// results keep their index order. The first exception is rethrown.
template <class F>
auto parallel_map(std::size_t count, unsigned jobs, F&& f) {
  using R = decltype(f(std::size_t(0)));
  std::vector<std::optional<R>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < count; k = next++) {
      try {
        slots[k].emplace(f(k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < std::min<std::size_t>(jobs, count); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  out.reserve(count);
  for (auto& r : slots) out.push_back(std::move(*r));
  return out;
}

}  // namespace detail

/// Named check results; every failing entry carries its measured violation.
struct Report {
  std::string name;
  std::vector<CheckResult> checks;

  void add(std::string check, double value, double threshold, bool pass, std::string notes = {}) {
    checks.push_back({std::move(check), value, threshold, pass, std::move(notes)});
  }
  bool pass() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
  }
};

template <class Scalar>
Scalar total_energy(const FieldArg<Scalar>& u, const SchemeConfig<Scalar>& cfg) {
  return total_energy<Scalar>(cfg, u);
}

/// Left-hand side of the discrete energy inequality at every prefix:
/// (tau/2) sum_{n<=m} |(u_n - u_{n-1})/tau|^2_* + E^lam(u_m).
template <class Scalar>
std::vector<Scalar> energy_inequality_lhs(const Trajectory<Scalar>& tr) {
  std::vector<Scalar> lhs(tr.u.size());
  Scalar dissipated = 0;
  lhs[0] = tr.energies[0];
  for (std::size_t n = 1; n < tr.u.size(); ++n) {
    dissipated += tr.tau / 2 * sqr(tr.dual_step_norms[n]);
    lhs[n] = dissipated + tr.energies[n];
  }
  return lhs;
}

template <class Scalar>
Report energy_estimate_check(const Trajectory<Scalar>& tr, const SchemeConfig<Scalar>& cfg) {
  Report rep{"energy_estimate", {}};
  const Scalar allowed = Scalar(tr.steps()) * cfg.inner.tol * 10;
  const auto lhs = energy_inequality_lhs(tr);
  Scalar worst = -infinity<Scalar>();
  std::size_t at = 0;
  for (std::size_t n = 1; n < lhs.size(); ++n)
    if (lhs[n] - tr.initial_energy > worst) {
      worst = lhs[n] - tr.initial_energy;
      at = n;
    }
  if (lhs.size() == 1) worst = 0;
  rep.add("prefix_inequality", double(worst), double(allowed), worst <= allowed,
          "max over prefixes of lhs - E(u0), attained at n = " + std::to_string(at));

  Scalar rise = 0;
  for (std::size_t n = 1; n < tr.energies.size(); ++n) rise = std::max(rise, tr.energies[n] - tr.energies[n - 1]);
  rep.add("per_step_descent", double(rise), double(cfg.inner.tol), rise <= cfg.inner.tol,
          "largest increase of the regularized energy between steps");

  // |w_n|_L equals the dual norm of the discrete velocity.
  Scalar gap = 0;
  if (cfg.mass_mode == MassMode::Free)
    for (std::size_t n = 1; n < tr.u.size(); ++n)
      gap = std::max(gap, std::abs(cfg.L().norm(tr.w[n]) - tr.dual_step_norms[n]) / (1 + tr.dual_step_norms[n]));
  rep.add("chemical_potential_norm", double(gap), 1e-9, gap <= Scalar(1e-9));
  return rep;
}

/// sup over steps and midpoints of |u_bar - u_hat|_* / sqrt(tau).
template <class Scalar>
Scalar interpolant_gap(const Trajectory<Scalar>& tr, const SchemeConfig<Scalar>& cfg) {
  Scalar worst = 0;
  const auto& w = cfg.kernel.cell_weights;
  for (std::size_t n = 1; n < tr.u.size(); ++n) {
    const Scalar t = (Scalar(n) - Scalar(0.5)) * tr.tau;
    const auto [bar, hat] = interpolants(tr, t);
    Vector<Scalar> d = bar - hat;
    if (cfg.L().mass_split()) d.array() -= w.dot(d) / w.sum();
    worst = std::max(worst, cfg.L().dual_norm(Vector<Scalar>(w.cwiseProduct(d))));
  }
  return worst / std::sqrt(tr.tau);
}

/// Poincare constant C = 1 / lambda_min of the discrete form
/// B(u,u) = iint |u(x)-u(y)|^2 K (plus killing terms) against the weighted L^2
/// norm; over mean-free fields for regional kernels. Infinite when the
/// form has a nontrivial null space on that subspace.
template <class Scalar>
Scalar poincare_constant(const KernelMatrix<Scalar>& km, KernelMode mode) {
  const Vector<Scalar>& w = km.cell_weights;
  const Eigen::Index n = w.size();
  if ((w.array() <= 0).any()) throw NumericalError("poincare_constant: singular mass matrix");
  const Matrix<Scalar> H = hessian_I(km, PhiSpec<Scalar>::power(2), Vector<Scalar>::Zero(n));
  const Vector<Scalar> isw = w.cwiseSqrt().cwiseInverse();
  Matrix<Scalar> S = isw.asDiagonal() * H * isw.asDiagonal();
  if (mode != KernelMode::Dirichlet) {
    // Mean-free fields: the complement of sqrt(w) in the scaled variables.
    const Matrix<Scalar> sw = w.cwiseSqrt();
    Eigen::HouseholderQR<Matrix<Scalar>> qr(sw);
    const Matrix<Scalar> Q = qr.householderQ();
    const Matrix<Scalar> Z = Q.rightCols(n - 1);
    S = (Z.transpose() * S * Z).eval();
  }
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es((S + S.transpose()) / 2, Eigen::EigenvaluesOnly);
  const Scalar lo = es.eigenvalues().minCoeff();
  const Scalar hi = es.eigenvalues().cwiseAbs().maxCoeff();
  if (!(lo > Scalar(1e-11) * hi)) return infinity<Scalar>();
  return 1 / lo;
}

/// Classical cell-centred Dirichlet Laplacian, scaled by `coefficient`,
/// stored as a kernel matrix so the scheme treats it like any nonlocal term.
template <class Scalar>
KernelMatrix<Scalar> stencil_kernel(const Grid<Scalar>& grid, Scalar coefficient) {
  const Matrix<Scalar> A = coefficient * OperatorL<Scalar>::laplacian_dirichlet(grid).matrix();
  KernelMatrix<Scalar> km;
  km.mode = KernelMode::Dirichlet;
  km.cell_weights = grid.weights;
  km.pair_weights = -A / 2;
  km.pair_weights.diagonal().setZero();
  km.killing = (A * Vector<Scalar>::Ones(grid.size())).cwiseQuotient(grid.weights);
  km.spec = KernelSpec<Scalar>::power_global(Scalar(0.5), 2);
  return km;
}

/// Smallest eigenvalue of the (1-s)-normalized fractional Dirichlet form over
/// that of the stencil Laplacian, for the first `modes` eigenpairs.
template <class Scalar>
std::vector<Scalar> local_constant_ratios(const Grid<Scalar>& grid, Scalar s, int modes) {
  auto spec = KernelSpec<Scalar>::power_global(s, 2);
  spec.normalization = 1 - s;
  const auto km = assemble(spec, grid, KernelMode::Dirichlet);
  const Vector<Scalar> isw = grid.weights.cwiseSqrt().cwiseInverse();
  auto spectrum = [&](const Matrix<Scalar>& H) {
    const Matrix<Scalar> S = isw.asDiagonal() * H * isw.asDiagonal();
    return Eigen::SelfAdjointEigenSolver<Matrix<Scalar>>((S + S.transpose()) / 2, Eigen::EigenvaluesOnly).eigenvalues();
  };
  const Vector<Scalar> frac = spectrum(hessian_I(km, PhiSpec<Scalar>::power(2), Vector<Scalar>::Zero(grid.size())));
  const Vector<Scalar> loc = spectrum(OperatorL<Scalar>::laplacian_dirichlet(grid).matrix());
  std::vector<Scalar> r;
  for (int k = 0; k < std::min<int>(modes, int(frac.size())); ++k) r.push_back(frac[k] / loc[k]);
  return r;
}

template <class Scalar>
struct LocalLimitResult {
  std::vector<Scalar> s_list;
  std::vector<Scalar> distances;
  std::vector<Scalar> fitted_constants;  ///< local scale matched to each s
  Report report;
};

/// Runs the scheme with (1-s)-normalized PowerGlobal kernels and, for each s,
/// the classical stencil Laplacian scaled by the lowest-mode eigenvalue ratio
/// on the same grid; d(s) is the largest discrete L^2 distance between the
/// two trajectories. `cfg_template` supplies everything but the kernel.
template <class Scalar>
LocalLimitResult<Scalar> local_limit_study(const FieldArg<Scalar>& u0, const std::vector<Scalar>& s_list,
                                           const SchemeConfig<Scalar>& cfg_template, const Grid<Scalar>& grid,
                                           unsigned jobs = 0) {
  if (cfg_template.phi.form != PhiForm::Power || cfg_template.phi.q != 2)
    throw ConfigError("local limit: phi must be power with q = 2");
  if (cfg_template.mass_mode != MassMode::Free) throw ConfigError("local limit: requires the dirichlet setting");
  LocalLimitResult<Scalar> res;
  res.s_list = s_list;
  const auto& w = grid.weights;

  struct Member {
    Scalar distance, constant, classical_rise;
  };
  const auto members = detail::parallel_map(s_list.size(), jobs, [&](std::size_t k) {
      const Scalar s = s_list[k];
      Member m;
      m.constant = local_constant_ratios(grid, s, 1).front();
      SchemeConfig<Scalar> local = cfg_template;
      local.kernel = stencil_kernel(grid, m.constant);
      const auto reference = run<Scalar>(u0, local);
      m.classical_rise = 0;
      for (std::size_t n = 1; n < reference.energies.size(); ++n)
        m.classical_rise = std::max(m.classical_rise, reference.energies[n] - reference.energies[n - 1]);

      SchemeConfig<Scalar> cfg = cfg_template;
      auto spec = KernelSpec<Scalar>::power_global(s, 2);
      spec.normalization = 1 - s;
      cfg.kernel = assemble(spec, grid, KernelMode::Dirichlet);
      const auto tr = run<Scalar>(u0, cfg);
      m.distance = 0;
      for (std::size_t n = 0; n < tr.u.size(); ++n)
        m.distance = std::max(m.distance, std::sqrt(w.dot((tr.u[n] - reference.u[n]).cwiseAbs2())));
      return m;
    });
  Scalar rise = 0;
  for (const Member& m : members) {
    res.distances.push_back(m.distance);
    res.fitted_constants.push_back(m.constant);
    rise = std::max(rise, m.classical_rise);
  }

  res.report.name = "local_limit";
  bool decreasing = true;
  double worst = -infinity<double>();
  for (std::size_t k = 1; k < res.distances.size(); ++k) {
    decreasing = decreasing && res.distances[k] < res.distances[k - 1];
    worst = std::max(worst, double(res.distances[k] - res.distances[k - 1]));
  }
  res.report.add("distance_decreasing", res.distances.size() > 1 ? worst : 0.0, 0, decreasing,
                 "largest change of d(s) between consecutive orders");
  res.report.add("classical_descent", double(rise), double(cfg_template.inner.tol), rise <= cfg_template.inner.tol);
  return res;
}

/// Exterior values making the nonlocal normal derivative vanish:
/// v(x) = int_Omega u(y) |x-y|^(-d-2s) dy / int_Omega |x-y|^(-d-2s) dy.
template <class Scalar>
Vector<Scalar> neumann_extension(const FieldArg<Scalar>& u, Scalar s, const Grid<Scalar>& grid,
                                 const std::vector<Point<Scalar>>& exterior) {
  Vector<Scalar> out(static_cast<Eigen::Index>(exterior.size()));
  const Scalar e = Scalar(grid.dim) + 2 * s;
  for (std::size_t k = 0; k < exterior.size(); ++k) {
    if (grid.contains(exterior[k])) throw ConfigError("neumann_extension: point inside the domain");
    Scalar num = 0, den = 0;
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
      const Scalar kw = std::pow((exterior[k] - grid.nodes[j]).norm(), -e) * grid.weights[j];
      num += kw * u[j];
      den += kw;
    }
    out[Eigen::Index(k)] = num / den;
  }
  return out;
}

template <class Scalar>
Vector<Scalar> neumann_extension(const FieldArg<Scalar>& u, Scalar s, const Grid<Scalar>& grid) {
  return neumann_extension<Scalar>(u, s, grid, grid.ext_nodes);
}

/// Relative discrete N_s residual at each exterior point:
/// |sum_j (v(x) - u_j) |x - y_j|^(-d-2s) w_j| / sum_j |v(x) - u_j| |x-y_j|^(-d-2s) w_j.
template <class Scalar>
Vector<Scalar> neumann_residual(const FieldArg<Scalar>& u, const FieldArg<Scalar>& ext, Scalar s,
                                const Grid<Scalar>& grid, const std::vector<Point<Scalar>>& exterior) {
  Vector<Scalar> r(ext.size());
  const Scalar e = Scalar(grid.dim) + 2 * s;
  for (Eigen::Index k = 0; k < ext.size(); ++k) {
    Scalar sum = 0, mag = 0;
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
      const Scalar term = (ext[k] - u[j]) * std::pow((exterior[k] - grid.nodes[j]).norm(), -e) * grid.weights[j];
      sum += term;
      mag += std::abs(term);
    }
    r[k] = mag > 0 ? std::abs(sum) / mag : Scalar(0);
  }
  return r;
}

template <class Scalar>
Trajectory<Scalar> allen_cahn_run(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg) {
  if (!cfg.opL || cfg.opL->kind() != LKind::IdentityRiesz)
    throw ConfigError("allen-cahn: operator.kind must be identity_riesz");
  return run<Scalar>(u0, cfg);
}

/// tau sum_n |zeta_n|_{L^1}.
template <class Scalar>
Scalar zeta_l1_sum(const Trajectory<Scalar>& tr, const Vector<Scalar>& w) {
  Scalar acc = 0;
  for (std::size_t n = 1; n < tr.zeta.size(); ++n) acc += tr.tau * w.dot(tr.zeta[n].cwiseAbs());
  return acc;
}

/// Uniform-in-lambda L^1 bound of the selections: runs the conserved scheme
/// for each lambda and requires the sums to differ by less than `max_ratio`.
template <class Scalar>
Report zeta_l1_bound_check(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg,
                           const std::vector<Scalar>& lambdas, Scalar max_ratio = 2,
                           std::vector<Scalar>* sums = nullptr) {
  Report rep{"zeta_l1_bound", {}};
  if (cfg.mass_mode != MassMode::Conserved) throw ConfigError("zeta bound: requires scheme.mass_mode=conserved");
  const Interval<Scalar> sub = subdiff_interval(cfg.potential, cfg.mass);
  if (domain_distance(cfg.potential, cfg.mass) != 0 || !(sub.lo > -infinity<Scalar>() && sub.hi < infinity<Scalar>())) {
    rep.add("precondition", double(cfg.mass), 0, true, "skipped: mass not in the interior of the domain");
    return rep;
  }
  std::vector<Scalar> values;
  for (Scalar lam : lambdas) {
    SchemeConfig<Scalar> c = cfg;
    c.lambda = lam;
    values.push_back(zeta_l1_sum(run<Scalar>(u0, c), cfg.kernel.cell_weights));
  }
  const Scalar hi = *std::max_element(values.begin(), values.end());
  const Scalar lo = *std::min_element(values.begin(), values.end());
  const Scalar ratio = lo > 0 ? hi / lo : (hi > 0 ? infinity<Scalar>() : Scalar(1));
  rep.add("sweep_ratio", double(ratio), double(max_ratio), ratio < max_ratio, "max / min of tau sum |zeta_n|_1");
  if (sums) *sums = values;
  return rep;
}

/// Largest distance of the iterates from [-1, 1] along a trajectory.
template <class Scalar>
Scalar obstacle_violation(const Trajectory<Scalar>& tr) {
  Scalar v = 0;
  for (const auto& u : tr.u) v = std::max(v, (u.cwiseAbs().array() - 1).max(0).maxCoeff());
  return v;
}

template <class Scalar>
struct LambdaSweep {
  std::vector<Scalar> lambdas;
  std::vector<Scalar> violations;
  std::vector<Scalar> bounds;
  std::vector<Scalar> zeta_sums;
  std::vector<Trajectory<Scalar>> runs;
  Report report;
};

/// Obstacle feasibility along a lambda sweep: the violation stays below
/// sqrt(2 lambda E(u0)) (E with the unshifted obstacle potential) and does not grow as lambda decreases (strictly
/// decreasing wherever it is positive).
template <class Scalar>
LambdaSweep<Scalar> lambda_sweep(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg,
                                 std::vector<Scalar> lambdas, unsigned jobs = 0) {
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  LambdaSweep<Scalar> out;
  out.lambdas = lambdas;
  out.runs = detail::parallel_map(lambdas.size(), jobs, [&](std::size_t k) {
    SchemeConfig<Scalar> c = cfg;
    c.lambda = lambdas[k];
    return run<Scalar>(u0, c);
  });
  out.report.name = "lambda_sweep";
  const bool obstacle = cfg.potential.kind == GammaKind::Obstacle;
  bool shrinking = true;
  for (std::size_t k = 0; k < lambdas.size(); ++k) {
    const auto& tr = out.runs[k];
    out.violations.push_back(obstacle_violation(tr));
    // Energy of the unshifted double obstacle I + (1 - z^2)/2.
    const Scalar e0 = tr.initial_energy + (obstacle ? cfg.kernel.cell_weights.sum() / 2 : Scalar(0));
    out.bounds.push_back(std::sqrt(2 * lambdas[k] * std::max(e0, Scalar(0))));
    out.zeta_sums.push_back(zeta_l1_sum(tr, cfg.kernel.cell_weights));
    if (obstacle)
      out.report.add("feasibility lambda=" + std::to_string(double(lambdas[k])), double(out.violations[k]),
                     double(out.bounds[k]), out.violations[k] <= out.bounds[k]);
    if (k > 0 && out.violations[k - 1] > 0)
      shrinking = shrinking && out.violations[k] < out.violations[k - 1];
    if (k > 0 && out.violations[k - 1] == 0) shrinking = shrinking && out.violations[k] == 0;
  }
  if (obstacle) {
    const double last = lambdas.empty() ? 0.0 : double(out.violations.back());
    out.report.add("violation_shrinks", last, 0, shrinking, "violation at the smallest lambda");
  }
  return out;
}

template <class Scalar>
struct TauSweep {
  std::vector<int> n_steps;
  std::vector<Scalar> differences;  ///< |u^tau(T) - u^{tau/2}(T)|_{L^2}
  Report report;
};

/// Cauchy property under tau halving: successive final-state differences decrease.
template <class Scalar>
TauSweep<Scalar> tau_sweep(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg, std::vector<int> n_steps,
                           unsigned jobs = 0) {
  std::sort(n_steps.begin(), n_steps.end());
  TauSweep<Scalar> out;
  out.n_steps = n_steps;
  const auto finals = detail::parallel_map(n_steps.size(), jobs, [&](std::size_t k) {
    SchemeConfig<Scalar> c = cfg;
    c.n_steps = n_steps[k];
    return run<Scalar>(u0, c).u.back();
  });
  const auto& w = cfg.kernel.cell_weights;
  for (std::size_t k = 1; k < finals.size(); ++k)
    out.differences.push_back(std::sqrt(w.dot((finals[k] - finals[k - 1]).cwiseAbs2())));
  bool decreasing = true;
  for (std::size_t k = 1; k < out.differences.size(); ++k)
    decreasing = decreasing && out.differences[k] < out.differences[k - 1];
  out.report.name = "tau_sweep";
  out.report.add("cauchy_decrease", out.differences.empty() ? 0.0 : double(out.differences.back()), 0, decreasing);
  return out;
}

}  // namespace nlch
