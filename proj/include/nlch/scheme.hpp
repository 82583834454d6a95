#pragma once

#include "nlch/common.hpp"
#include "nlch/kernels.hpp"
#include "nlch/operators.hpp"
#include "nlch/potentials.hpp"

#include <Eigen/QR>

#include <optional>
#include <random>

namespace nlch {

enum class MassMode { Free, Conserved };

template <class Scalar>
struct InnerSettings {
  Scalar tol = Scalar(1e-10);  ///< Euler-Lagrange residual, discrete L^2 norm
  int max_iter = 500;
  bool newton = true;          ///< second-order steps, forward-backward as fallback
  Scalar energy_rtol = Scalar(1e-12);
};

template <class Scalar>
struct SchemeConfig {
  Scalar T = 1;
  int n_steps = 10;
  Scalar lambda = Scalar(0.01);
  PhiSpec<Scalar> phi = PhiSpec<Scalar>::power(2);
  KernelMatrix<Scalar> kernel;
  std::optional<OperatorL<Scalar>> opL;
  Potential<Scalar> potential = Potential<Scalar>::quartic();
  MassMode mass_mode = MassMode::Free;
  Scalar mass = 0;  ///< conserved mode only
  InnerSettings<Scalar> inner;

  Scalar tau() const { return T / Scalar(n_steps); }
  const OperatorL<Scalar>& L() const { return *opL; }
};

template <class Scalar>
void validate(const SchemeConfig<Scalar>& cfg) {
  if (!(cfg.T > 0)) throw ConfigError("scheme.T must be > 0");
  if (cfg.n_steps < 1) throw ConfigError("scheme.n_steps must be >= 1");
  if (!(cfg.lambda > 0 && cfg.lambda < 1)) throw ConfigError("scheme.lambda must lie in (0,1)");
  if (!cfg.opL) throw ConfigError("operator: missing");
  if (cfg.kernel.size() != cfg.opL->size()) throw ConfigError("kernel/operator: sizes differ");
  if (cfg.inner.max_iter < 1 || !(cfg.inner.tol > 0)) throw ConfigError("scheme.inner: invalid settings");
  validate(cfg.phi);
  validate(cfg.potential);
  if (cfg.mass_mode == MassMode::Conserved) {
    if (!cfg.opL->mass_split())
      throw ConfigError("scheme.mass_mode=conserved requires a mass-split operator.kind");
    if (cfg.kernel.mode == KernelMode::Dirichlet)
      throw ConfigError("scheme.mass_mode=conserved is incompatible with kernel.mode=dirichlet");
    const Scalar dist = domain_distance(cfg.potential, cfg.mass);
    const bool interior = dist == 0 && subdiff_interval(cfg.potential, cfg.mass).lo > -infinity<Scalar>() &&
                          subdiff_interval(cfg.potential, cfg.mass).hi < infinity<Scalar>();
    if (!interior) throw ConfigError("scheme.mass must lie in the interior of the domain of dGamma");
  } else if (cfg.opL->mass_split()) {
    throw ConfigError("scheme.mass_mode=free requires an invertible operator.kind (not mass-split)");
  }
}

/// Step failure: carries the best iterate and its residual.
template <class Scalar>
class StepFailure : public NumericalError {
 public:
  StepFailure(const std::string& what, Vector<Scalar> best, double residual, int iterations)
      : NumericalError(what, residual, iterations), best_(std::move(best)) {}
  const Vector<Scalar>& best() const { return best_; }

 private:
  Vector<Scalar> best_;
};

/// Regularized energy E^lam(u) = F(u) + sum_i w_i (Gamma_lam(u_i) + Pi(u_i)).
template <class Scalar>
Scalar regularized_energy(const SchemeConfig<Scalar>& cfg, const FieldArg<Scalar>& u) {
  Scalar e = energy_F(cfg.kernel, cfg.phi, u);
  const auto& w = cfg.kernel.cell_weights;
  for (Eigen::Index i = 0; i < u.size(); ++i)
    e += w[i] * (moreau(cfg.potential, cfg.lambda, u[i]) + eval_Pi(cfg.potential, u[i]));
  return e;
}

/// Unregularized energy E(u) = F(u) + sum_i w_i F(u_i); +inf if any F(u_i) is.
template <class Scalar>
Scalar total_energy(const SchemeConfig<Scalar>& cfg, const FieldArg<Scalar>& u) {
  Scalar e = energy_F(cfg.kernel, cfg.phi, u);
  const auto& w = cfg.kernel.cell_weights;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const Scalar f = eval_F(cfg.potential, u[i]);
    if (std::isinf(double(f))) return infinity<Scalar>();
    e += w[i] * f;
  }
  return e;
}

/// Per-configuration data shared by all steps: the metric M = D P^T L^+ P D
/// of the dual-norm term (P the mean-zero projection in conserved mode) and
/// an orthonormal basis Z of the admissible increments.
template <class Scalar>
struct StepContext {
  Matrix<Scalar> M;
  Matrix<Scalar> Z;
  Vector<Scalar> w;
  Scalar tau = 0;

  explicit StepContext(const SchemeConfig<Scalar>& cfg) : w(cfg.kernel.cell_weights), tau(cfg.tau()) {
    const Eigen::Index n = w.size();
    Matrix<Scalar> DP = w.asDiagonal();
    if (cfg.mass_mode == MassMode::Conserved) {
      // D (I - 1 w^T / |Omega|): columns sum to zero.
      DP -= (w * w.transpose()) / w.sum();
    }
    Matrix<Scalar> X(n, n);
    for (Eigen::Index k = 0; k < n; ++k) X.col(k) = cfg.L().solve(DP.col(k));
    M = DP.transpose() * X;
    M = ((M + M.transpose()) / 2).eval();
    if (cfg.mass_mode == MassMode::Conserved) {
      const Matrix<Scalar> W = w;
      Eigen::HouseholderQR<Matrix<Scalar>> qr(W);
      const Matrix<Scalar> Q = qr.householderQ();
      Z = Q.rightCols(n - 1);
    } else {
      Z = Matrix<Scalar>::Identity(n, n);
    }
  }
};

namespace detail {

template <class Scalar>
struct StepProblem {
  const SchemeConfig<Scalar>& cfg;
  const StepContext<Scalar>& ctx;
  const Vector<Scalar>& g;

  Scalar dual_part(const Vector<Scalar>& u) const {
    const Vector<Scalar> d = u - g;
    return d.dot(ctx.M * d) / (2 * ctx.tau);
  }

  /// Smooth part: dual term + F + sum w Pi.
  Scalar smooth(const Vector<Scalar>& u) const {
    Scalar e = dual_part(u) + energy_F(cfg.kernel, cfg.phi, u);
    for (Eigen::Index i = 0; i < u.size(); ++i) e += ctx.w[i] * eval_Pi(cfg.potential, u[i]);
    return e;
  }

  Scalar envelope(const Vector<Scalar>& u) const {
    Scalar e = 0;
    for (Eigen::Index i = 0; i < u.size(); ++i) e += ctx.w[i] * moreau(cfg.potential, cfg.lambda, u[i]);
    return e;
  }

  Scalar energy(const Vector<Scalar>& u) const { return smooth(u) + envelope(u); }

  Vector<Scalar> smooth_gradient(const Vector<Scalar>& u) const {
    Vector<Scalar> grad = ctx.M * (u - g) / ctx.tau + grad_I(cfg.kernel, cfg.phi, u);
    for (Eigen::Index i = 0; i < u.size(); ++i) grad[i] += ctx.w[i] * eval_pi(cfg.potential, u[i]);
    return grad;
  }

  Vector<Scalar> gradient(const Vector<Scalar>& u) const {
    Vector<Scalar> grad = smooth_gradient(u);
    for (Eigen::Index i = 0; i < u.size(); ++i) grad[i] += ctx.w[i] * yosida(cfg.potential, cfg.lambda, u[i]);
    return grad;
  }

  Matrix<Scalar> hessian(const Vector<Scalar>& u) const {
    Matrix<Scalar> H = ctx.M / ctx.tau + hessian_I(cfg.kernel, cfg.phi, u);
    for (Eigen::Index i = 0; i < u.size(); ++i)
      H(i, i) += ctx.w[i] * (eval_pi_derivative(cfg.potential, u[i]) + yosida_derivative(cfg.potential, cfg.lambda, u[i]));
    return H;
  }

  /// Strong-form residual grad / w, projected to mean zero in conserved mode,
  /// measured in the discrete L^2 norm.
  Scalar residual(const Vector<Scalar>& grad) const {
    Vector<Scalar> r = grad.cwiseQuotient(ctx.w);
    if (cfg.mass_mode == MassMode::Conserved) r.array() -= ctx.w.dot(r) / ctx.w.sum();
    return std::sqrt(ctx.w.dot(r.cwiseAbs2()));
  }

  /// argmin_x |x - v|^2 / (2t) + sum_i w_i Gamma_lam(x_i), with w^T x = mass
  /// in conserved mode (scalar multiplier found by bisection).
  Vector<Scalar> prox(const Vector<Scalar>& v, Scalar t) const {
    const Scalar lam = cfg.lambda;
    auto component = [&](Scalar vi, Scalar wi) {
      const Scalar s = t * wi;
      return vi + s / (lam + s) * (resolvent(cfg.potential, lam + s, vi) - vi);
    };
    Vector<Scalar> x(v.size());
    if (cfg.mass_mode == MassMode::Free) {
      for (Eigen::Index i = 0; i < v.size(); ++i) x[i] = component(v[i], ctx.w[i]);
      return x;
    }
    const Scalar target = ctx.w.dot(g);
    auto mass_at = [&](Scalar mu) {
      for (Eigen::Index i = 0; i < v.size(); ++i) x[i] = component(v[i] - t * mu * ctx.w[i], ctx.w[i]);
      return ctx.w.dot(x) - target;
    };
    Scalar lo = -1, hi = 1;
    while (mass_at(lo) < 0) lo *= 2;
    while (mass_at(hi) > 0) hi *= 2;
    for (int k = 0; k < 200 && hi - lo > std::numeric_limits<Scalar>::epsilon() * std::max(Scalar(1), std::abs(lo)); ++k) {
      const Scalar mid = (lo + hi) / 2;
      (mass_at(mid) > 0 ? lo : hi) = mid;
    }
    mass_at((lo + hi) / 2);
    return x;
  }
};

}  // namespace detail

/// One minimizing-movement step from g = u_prev: minimizes
/// (1/2tau) |u - g|^2_{L^-1} + E^lam(u) over u (over the fixed-mass slice in
/// conserved mode), starting from `start` (default g).
template <class Scalar>
Vector<Scalar> step_minimize(const Vector<Scalar>& g, const SchemeConfig<Scalar>& cfg, const StepContext<Scalar>& ctx,
                             const Vector<Scalar>* start = nullptr, int* iterations = nullptr,
                             Scalar* final_residual = nullptr) {
  detail::StepProblem<Scalar> pb{cfg, ctx, g};
  Vector<Scalar> u = start ? *start : g;
  if (cfg.mass_mode == MassMode::Conserved && start) {
    // Keep the start on the mass slice.
    u.array() += (ctx.w.dot(g) - ctx.w.dot(u)) / ctx.w.sum();
  }
  Scalar E = pb.energy(u);
  Scalar t = Scalar(1) / std::max(Scalar(1e-300), (ctx.M / ctx.tau).diagonal().cwiseQuotient(ctx.w).maxCoeff());
  Scalar best_res = infinity<Scalar>();
  Vector<Scalar> best = u;
  Scalar last_change = infinity<Scalar>();
  const auto& in = cfg.inner;
  for (int it = 0; it <= in.max_iter; ++it) {
    const Vector<Scalar> grad = pb.gradient(u);
    const Scalar res = pb.residual(grad);
    if (res < best_res) {
      best_res = res;
      best = u;
    }
    if (res <= in.tol && (last_change <= in.energy_rtol || res <= Scalar(1e-3) * in.tol)) {
      if (iterations) *iterations = it;
      if (final_residual) *final_residual = res;
      return u;
    }
    if (it == in.max_iter) break;

    bool accepted = false;
    if (in.newton) {
      const Vector<Scalar> gy = ctx.Z.transpose() * grad;
      const Matrix<Scalar> Hy = ctx.Z.transpose() * pb.hessian(u) * ctx.Z;
      const Scalar scale = std::max(Hy.diagonal().cwiseAbs().maxCoeff(), std::numeric_limits<Scalar>::min());
      Scalar mu = 0;
      Vector<Scalar> dy;
      for (int attempt = 0; attempt < 60; ++attempt) {
        Matrix<Scalar> Hm = Hy;
        Hm.diagonal().array() += mu;
        Eigen::LLT<Matrix<Scalar>> llt(Hm);
        if (llt.info() == Eigen::Success) {
          dy = -llt.solve(gy);
          if (dy.allFinite() && gy.dot(dy) < 0) break;
        }
        dy.resize(0);
        mu = mu == 0 ? Scalar(1e-10) * scale : 4 * mu;
      }
      if (dy.size() > 0) {
        const Vector<Scalar> d = ctx.Z * dy;
        const Scalar slope = gy.dot(dy);
        Scalar alpha = 1;
        for (int ls = 0; ls < 50; ++ls) {
          const Vector<Scalar> trial = u + alpha * d;
          const Scalar Et = pb.energy(trial);
          // Below energy roundoff, descent is judged by the residual instead.
          const bool flat = Et <= E + 64 * std::numeric_limits<Scalar>::epsilon() * (1 + std::abs(E)) &&
                            pb.residual(pb.gradient(trial)) < res;
          if (Et <= E + Scalar(1e-4) * alpha * slope || flat) {
            last_change = std::abs(E - Et) / std::max(Scalar(1), std::abs(Et));
            u = trial;
            E = Et;
            accepted = true;
            break;
          }
          alpha /= 2;
        }
      }
    }
    if (!accepted) {
      // Forward-backward step with backtracking on the step size.
      const Scalar S = pb.smooth(u);
      const Vector<Scalar> gs = pb.smooth_gradient(u);
      for (int ls = 0; ls < 80; ++ls) {
        const Vector<Scalar> trial = pb.prox(u - t * gs, t);
        const Vector<Scalar> diff = trial - u;
        const Scalar St = pb.smooth(trial);
        if (St <= S + gs.dot(diff) + diff.squaredNorm() / (2 * t) + Scalar(1e-14) * std::abs(S)) {
          const Scalar Et = St + pb.envelope(trial);
          last_change = std::abs(E - Et) / std::max(Scalar(1), std::abs(Et));
          u = trial;
          E = Et;
          accepted = true;
          t *= Scalar(1.5);
          break;
        }
        t /= 2;
      }
    }
    if (!accepted) break;
  }
  throw StepFailure<Scalar>("step_minimize: inner optimizer stagnated", best, double(best_res), in.max_iter);
}

template <class Scalar>
Vector<Scalar> step_minimize(const Vector<Scalar>& g, const SchemeConfig<Scalar>& cfg) {
  const StepContext<Scalar> ctx(cfg);
  return step_minimize(g, cfg, ctx);
}

/// w = -L^-1 (D (u_next - u_prev) / tau); zero-mean in conserved mode.
template <class Scalar>
Vector<Scalar> recover_w(const FieldArg<Scalar>& u_next, const FieldArg<Scalar>& u_prev, const SchemeConfig<Scalar>& cfg) {
  const auto& w = cfg.kernel.cell_weights;
  Vector<Scalar> d = u_next - u_prev;
  // The increment is mean-free up to roundoff in the mass.
  if (cfg.L().mass_split()) d.array() -= w.dot(d) / w.sum();
  return -cfg.L().solve(Vector<Scalar>(w.cwiseProduct(d) / cfg.tau()));
}

/// zeta = gamma_lam(u) componentwise.
template <class Scalar>
Vector<Scalar> recover_zeta(const FieldArg<Scalar>& u, const SchemeConfig<Scalar>& cfg) {
  return u.unaryExpr([&](Scalar r) { return yosida(cfg.potential, cfg.lambda, r); });
}

/// w = omega + mean(zeta + pi(u)).
template <class Scalar>
Vector<Scalar> adjust_mass(const FieldArg<Scalar>& omega, const FieldArg<Scalar>& u, const SchemeConfig<Scalar>& cfg) {
  const auto& w = cfg.kernel.cell_weights;
  const Vector<Scalar> zeta = recover_zeta<Scalar>(u, cfg);
  const Vector<Scalar> pis = u.unaryExpr([&](Scalar r) { return eval_pi(cfg.potential, r); });
  return omega.array() + w.dot(zeta + pis) / w.sum();
}

/// Residual of the second equation, tested against all fields:
/// D^-1 grad_I(u) + zeta + pi(u) - w, in the discrete L^2 norm.
template <class Scalar>
Scalar chemical_potential_residual(const FieldArg<Scalar>& u, const FieldArg<Scalar>& w_field,
                                   const SchemeConfig<Scalar>& cfg) {
  const auto& w = cfg.kernel.cell_weights;
  Vector<Scalar> r = grad_I(cfg.kernel, cfg.phi, u).cwiseQuotient(w) + recover_zeta<Scalar>(u, cfg) - w_field;
  for (Eigen::Index i = 0; i < u.size(); ++i) r[i] += eval_pi(cfg.potential, u[i]);
  return std::sqrt(w.dot(r.cwiseAbs2()));
}

template <class Scalar>
struct Trajectory {
  std::vector<Scalar> times;
  std::vector<Vector<Scalar>> u;
  std::vector<Vector<Scalar>> w;
  std::vector<Vector<Scalar>> zeta;
  std::vector<Scalar> energies;  ///< E^lam(u_n)
  std::vector<Scalar> masses;
  std::vector<Scalar> el_residuals;
  std::vector<Scalar> dual_step_norms;  ///< |(u_n - u_{n-1}) / tau|_{L^-1}, 0 at n = 0
  std::vector<int> iterations;
  Scalar initial_energy = 0;  ///< unregularized E(u_0)
  Scalar tau = 0;
  bool complete = false;
  std::string failure;

  std::size_t steps() const { return u.empty() ? 0 : u.size() - 1; }
};

/// Hook to perturb each step's initial iterate (uniqueness probes).
template <class Scalar>
using StartPerturbation = std::function<Vector<Scalar>(const Vector<Scalar>& g, int n)>;

/// Runs N steps from u0. A failing step stops the run with a partial
/// trajectory (`complete == false`) and rethrows.
template <class Scalar>
Trajectory<Scalar> run(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg,
                       const StartPerturbation<Scalar>& perturb = {}, Trajectory<Scalar>* partial = nullptr) {
  validate(cfg);
  const auto& w = cfg.kernel.cell_weights;
  if (u0.size() != w.size()) throw ConfigError("initial field size does not match the grid");
  if (cfg.mass_mode == MassMode::Conserved && std::abs(w.dot(u0) / w.sum() - cfg.mass) > Scalar(1e-12) * (1 + std::abs(cfg.mass)))
    throw ConfigError("scheme.mass differs from the mass of the initial datum");
  Trajectory<Scalar> tr;
  tr.tau = cfg.tau();
  tr.initial_energy = total_energy<Scalar>(cfg, u0);
  if (std::isinf(double(tr.initial_energy))) throw ConfigError("initial datum has infinite energy");
  const StepContext<Scalar> ctx(cfg);

  auto record = [&](const Vector<Scalar>& u, Scalar t, const Vector<Scalar>& wn, Scalar dual, int its) {
    tr.times.push_back(t);
    tr.u.push_back(u);
    tr.w.push_back(wn);
    tr.zeta.push_back(recover_zeta<Scalar>(u, cfg));
    tr.energies.push_back(regularized_energy<Scalar>(cfg, u));
    tr.masses.push_back(w.dot(u) / w.sum());
    tr.el_residuals.push_back(tr.u.size() == 1 ? Scalar(0) : chemical_potential_residual<Scalar>(u, wn, cfg));
    tr.dual_step_norms.push_back(dual);
    tr.iterations.push_back(its);
  };

  Vector<Scalar> u = u0;
  record(u, 0, Vector<Scalar>::Zero(u.size()), 0, 0);
  for (int n = 1; n <= cfg.n_steps; ++n) {
    Vector<Scalar> next;
    int its = 0;
    try {
      if (perturb) {
        const Vector<Scalar> start = perturb(u, n);
        next = step_minimize<Scalar>(u, cfg, ctx, &start, &its);
      } else {
        next = step_minimize<Scalar>(u, cfg, ctx, nullptr, &its);
      }
    } catch (const NumericalError& e) {
      tr.failure = e.what();
      if (partial) *partial = tr;
      throw;
    }
    Vector<Scalar> wn = recover_w<Scalar>(next, u, cfg);
    const Scalar dual = cfg.L().norm(wn);
    if (cfg.mass_mode == MassMode::Conserved) wn = adjust_mass<Scalar>(wn, next, cfg);
    u = next;
    record(u, Scalar(n) * cfg.tau(), wn, dual, its);
  }
  tr.complete = true;
  return tr;
}

/// Piecewise-constant (u_n on (t_{n-1}, t_n]) and piecewise-linear interpolants.
template <class Scalar>
std::pair<Vector<Scalar>, Vector<Scalar>> interpolants(const Trajectory<Scalar>& tr, Scalar t) {
  if (tr.u.empty()) throw ConfigError("interpolants: empty trajectory");
  const Scalar T = tr.times.back();
  if (!(t >= 0 && t <= T * (1 + Scalar(1e-14)))) throw std::out_of_range("interpolants: t outside [0, T]");
  if (t <= 0) return {tr.u.front(), tr.u.front()};
  const Scalar x = t / tr.tau;
  std::size_t n = std::size_t(std::ceil(x - Scalar(1e-12) * std::max(Scalar(1), x)));
  n = std::clamp<std::size_t>(n, 1, tr.steps());
  const Scalar theta = std::clamp(x - Scalar(n - 1), Scalar(0), Scalar(1));
  return {tr.u[n], (1 - theta) * tr.u[n - 1] + theta * tr.u[n]};
}

/// Reruns with the inner optimizer started from randomly perturbed iterates
/// (zero-mean perturbations in conserved mode) and returns the largest
/// discrete L^2 distance between any two trajectories at any step.
template <class Scalar>
Scalar uniqueness_probe(const FieldArg<Scalar>& u0, const SchemeConfig<Scalar>& cfg, int perturbations,
                        std::uint64_t seed = 1, Scalar amplitude = Scalar(1e-2)) {
  std::vector<Trajectory<Scalar>> runs;
  runs.push_back(run<Scalar>(u0, cfg));
  const auto& w = cfg.kernel.cell_weights;
  for (int k = 0; k < perturbations; ++k) {
    std::mt19937_64 rng(seed + std::uint64_t(k) * 7919);
    std::uniform_real_distribution<double> unif(-1, 1);
    StartPerturbation<Scalar> perturb = [&](const Vector<Scalar>& g, int) {
      Vector<Scalar> d(g.size());
      for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = Scalar(unif(rng));
      if (cfg.mass_mode == MassMode::Conserved) d.array() -= w.dot(d) / w.sum();
      return Vector<Scalar>(g + amplitude * d);
    };
    runs.push_back(run<Scalar>(u0, cfg, perturb));
  }
  Scalar worst = 0;
  for (std::size_t a = 0; a < runs.size(); ++a)
    for (std::size_t b = a + 1; b < runs.size(); ++b)
      for (std::size_t n = 0; n < runs[a].u.size(); ++n) {
        const Vector<Scalar> d = runs[a].u[n] - runs[b].u[n];
        worst = std::max(worst, std::sqrt(w.dot(d.cwiseAbs2())));
      }
  return worst;
}

}  // namespace nlch
