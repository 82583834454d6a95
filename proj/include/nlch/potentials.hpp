#pragma once

#include "nlch/common.hpp"

#include <algorithm>
#include <functional>
#include <string>
#include <vector>

namespace nlch {

enum class GammaKind { Quartic, Logarithmic, Obstacle, Custom };

inline const char* to_string(GammaKind k) {
  switch (k) {
    case GammaKind::Quartic: return "quartic";
    case GammaKind::Logarithmic: return "logarithmic";
    case GammaKind::Obstacle: return "obstacle";
    case GammaKind::Custom: return "custom";
  }
  return "unknown";
}

/// F = Gamma + Pi with Gamma convex, Gamma(0) = 0, and Pi' = pi Lipschitz,
/// pi(0) = 0. Built-in Pi is the concave quadratic -c r^2 / 2.
template <class Scalar>
struct Potential {
  GammaKind kind = GammaKind::Quartic;
  Scalar theta = 1;
  Scalar theta_c = Scalar(1.5);
  Scalar pi_coeff = 1;

  std::function<Scalar(Scalar)> custom_value;           ///< Gamma(r), +inf allowed
  std::function<Scalar(Scalar, Scalar)> custom_prox;    ///< (r, lambda) -> J_lambda(r)
  std::function<Scalar(Scalar)> custom_pi;              ///< optional pi; default -pi_coeff r
  std::function<Scalar(Scalar)> custom_Pi;              ///< optional Pi; required with custom_pi
  Scalar custom_pi_lipschitz = 0;

  // F(r) >= -a1 |r|^p - a2
  Scalar a1 = 0;
  Scalar a2 = Scalar(0.25);
  Scalar p = 1;

  static Potential quartic() { return Potential{}; }

  static Potential obstacle() {
    Potential f;
    f.kind = GammaKind::Obstacle;
    f.a2 = Scalar(0.5);
    return f;
  }

  /// Entropy part theta/2 ((1+z)log(1+z) + (1-z)log(1-z)); Pi = -theta_c z^2 / 2.
  static Potential logarithmic(Scalar theta, Scalar theta_c) {
    Potential f;
    f.kind = GammaKind::Logarithmic;
    f.theta = theta;
    f.theta_c = theta_c;
    f.pi_coeff = theta_c;
    f.a2 = theta_c / 2;
    return f;
  }

  static Potential custom(std::function<Scalar(Scalar)> value, std::function<Scalar(Scalar, Scalar)> prox,
                          Scalar pi_coeff = 0) {
    Potential f;
    f.kind = GammaKind::Custom;
    f.custom_value = std::move(value);
    f.custom_prox = std::move(prox);
    f.pi_coeff = pi_coeff;
    f.a2 = 0;
    return f;
  }

  /// Linear gamma(r) = c r: Gamma = c r^2 / 2, no concave part.
  static Potential linear(Scalar c = 1) {
    return custom([c](Scalar r) { return c * r * r / 2; }, [c](Scalar r, Scalar lam) { return r / (1 + lam * c); },
                  Scalar(0));
  }

  /// F = 0.
  static Potential zero() {
    return custom([](Scalar) { return Scalar(0); }, [](Scalar r, Scalar) { return r; }, Scalar(0));
  }

  Scalar pi_lipschitz() const { return custom_pi ? custom_pi_lipschitz : std::abs(pi_coeff); }
};

/// Gamma together with its Moreau-Yosida parameter lambda in (0, 1).
template <class Scalar>
struct RegularizedPotential {
  Potential<Scalar> base;
  Scalar lambda = Scalar(0.01);

  RegularizedPotential() = default;
  RegularizedPotential(Potential<Scalar> pot, Scalar lam) : base(std::move(pot)), lambda(lam) {
    if (!(lam > 0 && lam < 1)) throw ConfigError("potential.lambda must lie in (0,1)");
  }
};

template <class Scalar>
Scalar eval_gamma(const Potential<Scalar>& f, Scalar r) {
  switch (f.kind) {
    case GammaKind::Quartic: return r * r * r * r / 4;
    case GammaKind::Obstacle: return std::abs(r) <= 1 ? Scalar(0) : infinity<Scalar>();
    case GammaKind::Logarithmic: {
      const Scalar a = std::abs(r);
      if (a > 1) return infinity<Scalar>();
      if (a == 1) return f.theta * std::log(Scalar(2));
      return f.theta / 2 * ((1 + r) * std::log1p(r) + (1 - r) * std::log1p(-r));
    }
    case GammaKind::Custom: return f.custom_value(r);
  }
  return 0;
}

/// pi(r) = Pi'(r).
template <class Scalar>
Scalar eval_pi(const Potential<Scalar>& f, Scalar r) {
  return f.custom_pi ? f.custom_pi(r) : -f.pi_coeff * r;
}

/// Pi(r) = int_0^r pi.
template <class Scalar>
Scalar eval_Pi(const Potential<Scalar>& f, Scalar r) {
  return f.custom_Pi ? f.custom_Pi(r) : -f.pi_coeff * r * r / 2;
}

template <class Scalar>
Scalar eval_pi_derivative(const Potential<Scalar>& f, Scalar r) {
  if (!f.custom_pi) return -f.pi_coeff;
  const Scalar h = Scalar(1e-6) * (1 + std::abs(r));
  return (f.custom_pi(r + h) - f.custom_pi(r - h)) / (2 * h);
}

template <class Scalar>
Scalar eval_F(const Potential<Scalar>& f, Scalar r) {
  const Scalar g = eval_gamma(f, r);
  return std::isinf(double(g)) ? g : g + eval_Pi(f, r);
}

namespace detail {

/// Root of the increasing function g on [lo, hi] (g(lo) <= 0 <= g(hi)) by
/// Newton steps kept inside a shrinking bracket, bisecting when Newton leaves it.
template <class Scalar, class G, class DG>
Scalar safeguarded_newton(G&& g, DG&& dg, Scalar lo, Scalar hi, Scalar z, Scalar tol = Scalar(1e-12),
                          int max_iter = 200) {
  for (int it = 0; it < max_iter; ++it) {
    const Scalar gz = g(z);
    if (gz == 0) return z;
    if (gz < 0)
      lo = z;
    else
      hi = z;
    const Scalar d = dg(z);
    Scalar next = z - gz / d;
    if (!(d > 0) || !(next > lo && next < hi)) next = lo + (hi - lo) / 2;
    const Scalar step = std::abs(next - z);
    z = next;
    if (step <= tol * std::max(Scalar(1), std::abs(z)) || hi - lo <= tol * std::max(Scalar(1), std::abs(z))) {
      // One more Newton step from the converged point when it stays bracketed.
      const Scalar d2 = dg(z);
      const Scalar polish = z - g(z) / d2;
      if (d2 > 0 && polish >= lo && polish <= hi) z = polish;
      return z;
    }
  }
  throw NumericalError("resolvent: root finder did not converge", double(hi - lo), max_iter);
}

}  // namespace detail

/// J_lam(r) = (I + lam dGamma)^-1 (r) for any lam > 0.
template <class Scalar>
Scalar resolvent(const Potential<Scalar>& f, Scalar lam, Scalar r) {
  if (!(lam > 0)) throw ConfigError("resolvent: lambda must be > 0");
  switch (f.kind) {
    case GammaKind::Obstacle: return std::clamp(r, Scalar(-1), Scalar(1));
    case GammaKind::Quartic: {
      if (r == 0) return 0;
      // z + lam z^3 = r; the root shares the sign of r and |z| <= |r|.
      const Scalar a = std::abs(r);
      auto g = [&](Scalar z) { return z + lam * z * z * z - a; };
      auto dg = [&](Scalar z) { return 1 + 3 * lam * z * z; };
      const Scalar start = std::min(a, std::cbrt(a / lam));
      return std::copysign(detail::safeguarded_newton<Scalar>(g, dg, Scalar(0), a, start), r);
    }
    case GammaKind::Logarithmic: {
      if (r == 0) return 0;
      // With z = tanh(y): tanh(y) + lam theta y = |r|, well conditioned up to z = 1.
      const Scalar a = std::abs(r), c = lam * f.theta;
      auto g = [&](Scalar y) { return std::tanh(y) + c * y - a; };
      auto dg = [&](Scalar y) {
        const Scalar t = std::cosh(y);
        return 1 / (t * t) + c;
      };
      const Scalar y = detail::safeguarded_newton<Scalar>(g, dg, Scalar(0), a / c, std::min(a, a / c));
      return std::copysign(std::tanh(y), r);
    }
    case GammaKind::Custom: return f.custom_prox(r, lam);
  }
  return r;
}

/// dJ_lam/dr, used by second-order inner solvers.
template <class Scalar>
Scalar resolvent_derivative(const Potential<Scalar>& f, Scalar lam, Scalar r) {
  switch (f.kind) {
    case GammaKind::Obstacle: return std::abs(r) < 1 ? Scalar(1) : Scalar(0);
    case GammaKind::Quartic: {
      const Scalar z = resolvent(f, lam, r);
      return 1 / (1 + 3 * lam * z * z);
    }
    case GammaKind::Logarithmic: {
      const Scalar z = resolvent(f, lam, r);
      const Scalar gap = (1 - z) * (1 + z);
      if (!(gap > 0)) return 0;
      return gap / (gap + lam * f.theta);
    }
    case GammaKind::Custom: {
      const Scalar h = Scalar(1e-6) * (1 + std::abs(r));
      return (f.custom_prox(r + h, lam) - f.custom_prox(r - h, lam)) / (2 * h);
    }
  }
  return 1;
}

template <class Scalar>
Scalar resolvent(const RegularizedPotential<Scalar>& reg, Scalar r) {
  return resolvent(reg.base, reg.lambda, r);
}

/// gamma_lam(r) = (r - J_lam(r)) / lam.
template <class Scalar>
Scalar yosida(const Potential<Scalar>& f, Scalar lam, Scalar r) {
  return (r - resolvent(f, lam, r)) / lam;
}

template <class Scalar>
Scalar yosida(const RegularizedPotential<Scalar>& reg, Scalar r) {
  return yosida(reg.base, reg.lambda, r);
}

template <class Scalar>
Scalar yosida_derivative(const Potential<Scalar>& f, Scalar lam, Scalar r) {
  return (1 - resolvent_derivative(f, lam, r)) / lam;
}

/// Gamma_lam(r) = Gamma(J) + (lam/2) gamma_lam(r)^2.
template <class Scalar>
Scalar moreau(const Potential<Scalar>& f, Scalar lam, Scalar r) {
  const Scalar z = resolvent(f, lam, r);
  const Scalar y = (r - z) / lam;
  return eval_gamma(f, z) + lam / 2 * y * y;
}

template <class Scalar>
Scalar moreau(const RegularizedPotential<Scalar>& reg, Scalar r) {
  return moreau(reg.base, reg.lambda, r);
}

/// Closed interval [lo, hi]; `empty` when r is outside dom(dGamma).
template <class Scalar>
struct Interval {
  Scalar lo = 0;
  Scalar hi = 0;
  bool empty = false;

  bool contains(Scalar v, Scalar tol = 0) const { return !empty && v >= lo - tol && v <= hi + tol; }
};

/// Left (side < 0) or right (side > 0) derivative of Gamma at r, +-inf where
/// Gamma is infinite on that side.
template <class Scalar>
Scalar one_sided_derivative(const Potential<Scalar>& f, Scalar r, int side) {
  const Scalar inf = infinity<Scalar>();
  switch (f.kind) {
    case GammaKind::Quartic: return r * r * r;
    case GammaKind::Obstacle:
      if (r > 1 || (r == 1 && side > 0)) return inf;
      if (r < -1 || (r == -1 && side < 0)) return -inf;
      return 0;
    case GammaKind::Logarithmic:
      if (r >= 1) return inf;
      if (r <= -1) return -inf;
      return f.theta / 2 * (std::log1p(r) - std::log1p(-r));
    case GammaKind::Custom: {
      const Scalar h = Scalar(1e-6) * (1 + std::abs(r));
      const Scalar g0 = f.custom_value(r);
      if (side < 0) {
        const Scalar gl = f.custom_value(r - h);
        return std::isinf(double(gl)) ? -inf : (g0 - gl) / h;
      }
      const Scalar gr = f.custom_value(r + h);
      return std::isinf(double(gr)) ? inf : (gr - g0) / h;
    }
  }
  return 0;
}

template <class Scalar>
Interval<Scalar> subdiff_interval(const Potential<Scalar>& f, Scalar r) {
  Interval<Scalar> out;
  if (std::isinf(double(eval_gamma(f, r)))) {
    out.empty = true;
    return out;
  }
  out.lo = one_sided_derivative(f, r, -1);
  out.hi = one_sided_derivative(f, r, +1);
  // Finite value with no finite supporting slope (logarithmic at +-1).
  if (std::isinf(double(out.lo)) && std::isinf(double(out.hi)) && (out.lo > 0) == (out.hi > 0)) out.empty = true;
  return out;
}

/// Whether v lies in dGamma(z) up to tol, allowing z to be off by a few ulps
/// (resolvents that saturate at a domain endpoint are rounded there).
template <class Scalar>
bool in_subdifferential(const Potential<Scalar>& f, Scalar z, Scalar v, Scalar tol) {
  Scalar zl = z, zr = z;
  for (int k = 0; k < 4; ++k) {
    zl = std::nextafter(zl, -infinity<Scalar>());
    zr = std::nextafter(zr, infinity<Scalar>());
  }
  const Scalar lo = std::min(one_sided_derivative(f, zl, -1), one_sided_derivative(f, z, -1));
  const Scalar hi = std::max(one_sided_derivative(f, zr, +1), one_sided_derivative(f, z, +1));
  return v >= lo - tol * (1 + std::abs(v)) && v <= hi + tol * (1 + std::abs(v));
}

/// Minimal-norm element of dGamma(r) (inf when empty).
template <class Scalar>
Scalar minimal_section(const Potential<Scalar>& f, Scalar r) {
  const auto I = subdiff_interval(f, r);
  if (I.empty) return infinity<Scalar>();
  if (I.lo <= 0 && I.hi >= 0) return 0;
  return I.lo > 0 ? I.lo : I.hi;
}

// ---------------------------------------------------------------------------
// Checks

struct CheckResult {
  std::string name;
  double value = 0;      ///< measured violation (or statistic)
  double threshold = 0;
  bool pass = false;
  std::string notes;
};

/// 401 equispaced points on [-4, 4] plus points approaching the endpoints +-1.
template <class Scalar>
std::vector<Scalar> potential_samples() {
  std::vector<Scalar> r;
  for (int k = 0; k <= 400; ++k) r.push_back(Scalar(-4) + Scalar(8) * Scalar(k) / Scalar(400));
  for (int k = 1; k <= 10; ++k) {
    const Scalar e = std::pow(Scalar(10), -Scalar(k));
    for (Scalar s : {Scalar(-1), Scalar(1)}) {
      r.push_back(s * (1 - e));
      r.push_back(s * (1 + e));
    }
  }
  return r;
}

/// Structural hypotheses on F: Gamma >= 0 and convex on samples, Gamma(0) = 0,
/// pi(0) = 0 and Lipschitz, growth bound. Throws ConfigError naming the first failure.
template <class Scalar>
void validate(const Potential<Scalar>& f) {
  if (f.kind == GammaKind::Logarithmic && !(f.theta > 0)) throw ConfigError("potential.theta must be > 0");
  if (f.kind == GammaKind::Custom && (!f.custom_value || !f.custom_prox))
    throw ConfigError("potential: custom potentials need a value and a prox oracle");
  if (f.custom_pi && !f.custom_Pi) throw ConfigError("potential: custom pi needs its primitive Pi");
  if (!(f.p > 0 && f.p < 2)) throw ConfigError("potential.p must lie in (0,2)");
  if (!(f.a1 >= 0 && f.a2 >= 0)) throw ConfigError("potential.a1, potential.a2 must be >= 0");
  if (std::abs(eval_gamma(f, Scalar(0))) > Scalar(1e-14)) throw ConfigError("potential: Gamma(0) must be 0");
  if (std::abs(eval_pi(f, Scalar(0))) > Scalar(1e-14)) throw ConfigError("potential: pi(0) must be 0");
  const auto r = potential_samples<Scalar>();
  for (std::size_t k = 0; k < r.size(); ++k) {
    const Scalar g = eval_gamma(f, r[k]);
    if (g < -Scalar(1e-14)) throw ConfigError("potential: Gamma must be nonnegative");
    if (!std::isinf(double(g)) && eval_F(f, r[k]) < -f.a1 * std::pow(std::abs(r[k]), f.p) - f.a2 - Scalar(1e-12))
      throw ConfigError("potential: growth bound F >= -a1|r|^p - a2 violated");
  }
  for (std::size_t k = 0; k + 1 < r.size(); ++k) {
    const Scalar a = r[k], b = r[k + 1];
    const Scalar ga = eval_gamma(f, a), gb = eval_gamma(f, b), gm = eval_gamma(f, (a + b) / 2);
    if (std::isfinite(double(ga)) && std::isfinite(double(gb)) &&
        gm > (ga + gb) / 2 + Scalar(1e-12) * (1 + std::abs(ga) + std::abs(gb)))
      throw ConfigError("potential: Gamma fails midpoint convexity");
    if (f.custom_pi && std::abs(f.custom_pi(a) - f.custom_pi(b)) > f.custom_pi_lipschitz * (b - a) + Scalar(1e-12))
      throw ConfigError("potential: pi is not Lipschitz with the declared constant");
  }
}

/// Invariants of the Moreau-Yosida machinery for one lambda on sampled r.
template <class Scalar>
std::vector<CheckResult> prox_invariants(const Potential<Scalar>& f, Scalar lam, Scalar tol = Scalar(1e-9)) {
  const auto r = potential_samples<Scalar>();
  const std::size_t n = r.size();
  std::vector<Scalar> J(n), Y(n), M(n);
  for (std::size_t k = 0; k < n; ++k) {
    J[k] = resolvent(f, lam, r[k]);
    Y[k] = (r[k] - J[k]) / lam;
    M[k] = moreau(f, lam, r[k]);
  }
  auto make = [&](std::string name, Scalar worst, Scalar thr) {
    CheckResult c;
    c.name = std::move(name);
    c.value = double(worst);
    c.threshold = double(thr);
    c.pass = worst <= thr;
    return c;
  };
  std::vector<CheckResult> out;

  // Moreau identity against the inf-convolution objective, plus local minimality of J.
  Scalar ident = 0, minimality = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const Scalar obj = eval_gamma(f, J[k]) + (J[k] - r[k]) * (J[k] - r[k]) / (2 * lam);
    ident = std::max(ident, std::abs(M[k] - obj) / (1 + std::abs(M[k])));
    const Scalar e = Scalar(1e-4) * (1 + std::abs(r[k]));
    for (Scalar z : {J[k] - e, J[k] + e}) {
      const Scalar oz = eval_gamma(f, z) + (z - r[k]) * (z - r[k]) / (2 * lam);
      if (std::isfinite(double(oz))) minimality = std::max(minimality, (obj - oz) / (1 + std::abs(obj)));
    }
  }
  out.push_back(make("moreau_identity", ident, tol));
  out.push_back(make("moreau_minimality", minimality, tol));

  Scalar nonexp = 0, lip = 0, mono = 0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; b += 7) {
      const Scalar dr = std::abs(r[a] - r[b]);
      nonexp = std::max(nonexp, std::abs(J[a] - J[b]) - dr);
      lip = std::max(lip, std::abs(Y[a] - Y[b]) - dr / lam);
      mono = std::max(mono, -(Y[a] - Y[b]) * (r[a] - r[b]));
    }
  out.push_back(make("resolvent_nonexpansive", nonexp, tol));
  out.push_back(make("yosida_lipschitz", lip * lam, tol));
  out.push_back(make("yosida_monotone", mono, tol));

  Scalar member = 0, below = 0, cap = 0, pidgeon = 0;
  const Scalar g0 = std::abs(eval_gamma(f, Scalar(0)));
  for (std::size_t k = 0; k < n; ++k) {
    if (!in_subdifferential(f, J[k], Y[k], tol)) member = std::max(member, Scalar(1));
    const Scalar g = eval_gamma(f, r[k]);
    if (std::isfinite(double(g))) below = std::max(below, (M[k] - g) / (1 + std::abs(g)));
    cap = std::max(cap, M[k] - r[k] * r[k] / (2 * lam) - g0);
    pidgeon = std::max(pidgeon, M[k] + eval_Pi(f, r[k]) - g0 - (f.pi_lipschitz() / 2 + 1 / (2 * lam)) * r[k] * r[k]);
  }
  out.push_back(make("yosida_in_subdifferential", member, Scalar(0.5)));
  out.push_back(make("envelope_below_gamma", below, tol));
  out.push_back(make("quadratic_cap", cap, tol));
  out.push_back(make("combined_cap", pidgeon, tol));

  // Envelope derivative equals the Yosida map: central differences, O(h^2) + 1e-8.
  Scalar deriv = 0;
  const Scalar h = Scalar(1e-5);
  for (std::size_t k = 0; k < n; ++k) {
    const Scalar fd = (moreau(f, lam, r[k] + h) - moreau(f, lam, r[k] - h)) / (2 * h);
    deriv = std::max(deriv, std::abs(fd - Y[k]) - (h / lam + Scalar(1e-8) * (1 + std::abs(Y[k]))));
  }
  out.push_back(make("envelope_derivative", std::max(deriv, Scalar(0)), Scalar(0)));
  return out;
}

template <class Scalar>
struct CoercivityFit {
  std::vector<Scalar> lambdas;
  std::vector<Scalar> alpha;
  Scalar a3 = 0;
  Scalar beta = 0;
  Scalar alpha_cap = 0;
  bool pass = false;
};

/// Fits Gamma_lam + Pi >= -alpha lam^(1/2) r^2 - a3 |r|^p - beta over the samples:
/// beta covers the deficit on |r| <= 1, a3 = 2^p a1 comes from the growth
/// hypothesis, alpha absorbs the rest. PASS iff alpha stays bounded along the
/// sweep: max alpha <= bound_factor * max(alpha at the largest lambda, 1).
template <class Scalar>
CoercivityFit<Scalar> verify_coercivity(const Potential<Scalar>& f, std::vector<Scalar> lambdas,
                                        const std::vector<Scalar>& r_samples, Scalar bound_factor = 10) {
  CoercivityFit<Scalar> fit;
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  fit.lambdas = lambdas;
  fit.a3 = std::pow(Scalar(2), f.p) * f.a1;
  for (Scalar lam : lambdas)
    for (Scalar r : r_samples)
      if (std::abs(r) <= 1) fit.beta = std::max(fit.beta, -(moreau(f, lam, r) + eval_Pi(f, r)));
  for (Scalar lam : lambdas) {
    Scalar alpha = 0;
    for (Scalar r : r_samples) {
      const Scalar deficit = -(moreau(f, lam, r) + eval_Pi(f, r)) - fit.a3 * std::pow(std::abs(r), f.p) - fit.beta;
      if (deficit > 0 && r != 0) alpha = std::max(alpha, deficit / (std::sqrt(lam) * r * r));
    }
    fit.alpha.push_back(alpha);
  }
  fit.alpha_cap = bound_factor * std::max(fit.alpha.front(), Scalar(1));
  fit.pass = std::all_of(fit.alpha.begin(), fit.alpha.end(),
                         [&](Scalar a) { return std::isfinite(double(a)) && a <= fit.alpha_cap; });
  return fit;
}

/// Distance from r to the (interval) domain of Gamma.
template <class Scalar>
Scalar domain_distance(const Potential<Scalar>& f, Scalar r) {
  switch (f.kind) {
    case GammaKind::Quartic: return 0;
    case GammaKind::Obstacle:
    case GammaKind::Logarithmic: return std::max(Scalar(0), std::abs(r) - 1);
    case GammaKind::Custom: {
      if (std::isfinite(double(f.custom_value(r)))) return 0;
      // Gamma(0) is finite and the domain is an interval: bisect along [0, r].
      Scalar in = 0, out = r;
      for (int k = 0; k < 200 && std::abs(out - in) > std::numeric_limits<Scalar>::epsilon() * std::abs(r); ++k) {
        const Scalar mid = (in + out) / 2;
        (std::isfinite(double(f.custom_value(mid))) ? in : out) = mid;
      }
      return std::abs(r - in);
    }
  }
  return 0;
}

/// Pointwise convergence of Gamma_lam to Gamma along a decreasing lambda sweep.
/// Finite Gamma(r): the gap is nonincreasing and at the last lambda within
/// (lam/2) |dGamma^0(r)|^2 (vacuous if dGamma(r) is empty). Infinite Gamma(r):
/// Gamma_lam(r) increases and stays above dist(r, dom Gamma)^2 / (2 lam); `cap_reached`
/// records whether it exceeded `cap` within the sweep.
template <class Scalar>
struct LiminfResult {
  bool pass = false;
  bool cap_reached = false;
  Scalar worst_gap = 0;
  std::string notes;
};

template <class Scalar>
LiminfResult<Scalar> gamma_liminf_check(const Potential<Scalar>& f, const std::vector<Scalar>& r_samples,
                                        std::vector<Scalar> lambdas, Scalar cap = Scalar(1e3)) {
  std::sort(lambdas.begin(), lambdas.end(), std::greater<>());
  LiminfResult<Scalar> res;
  res.pass = true;
  res.cap_reached = true;
  for (Scalar r : r_samples) {
    const Scalar g = eval_gamma(f, r);
    std::vector<Scalar> env;
    for (Scalar lam : lambdas) env.push_back(moreau(f, lam, r));
    if (std::isfinite(double(g))) {
      for (std::size_t k = 1; k < env.size(); ++k)
        if (g - env[k] > g - env[k - 1] + Scalar(1e-12) * (1 + std::abs(g))) {
          res.pass = false;
          res.notes = "gap not monotone at r=" + std::to_string(double(r));
        }
      const Scalar sec = minimal_section(f, r);
      const Scalar gap = g - env.back();
      res.worst_gap = std::max(res.worst_gap, gap);
      if (std::isfinite(double(sec)) && gap > lambdas.back() / 2 * sec * sec + Scalar(1e-12) * (1 + std::abs(g))) {
        res.pass = false;
        res.notes = "gap above bound at r=" + std::to_string(double(r));
      }
    } else {
      for (std::size_t k = 1; k < env.size(); ++k)
        if (!(env[k] > env[k - 1])) {
          res.pass = false;
          res.notes = "envelope not increasing at r=" + std::to_string(double(r));
        }
      const Scalar dist = domain_distance(f, r);
      for (std::size_t k = 0; k < env.size(); ++k)
        if (env[k] < dist * dist / (2 * lambdas[k]) * (1 - Scalar(1e-9))) {
          res.pass = false;
          res.notes = "envelope below dist^2/(2 lambda) at r=" + std::to_string(double(r));
        }
      if (!(env.back() > cap)) res.cap_reached = false;
    }
  }
  return res;
}

}  // namespace nlch
