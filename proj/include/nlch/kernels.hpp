#pragma once

#include "nlch/common.hpp"
#include "nlch/grid.hpp"
#include "nlch/quadrature.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <functional>
#include <random>
#include <thread>

namespace nlch {

enum class KernelFamily {
  PowerGlobal,        // |x-y|^(-d-sq) on Q(Omega)
  PowerRegional,      // (K1) restriction to Omega^2
  SumPower,           // |x-y|^(-d-s1 q) + |x-y|^(-d-s2 q)
  VariableOrder,      // |x-y|^(-d-s(x,y) q), s in [s0, s1]
  PiecewiseRegion,    // s_in inside A^2, s_out elsewhere
  PeriodicLattice,    // (K2) sum over Z^d translates
  NeumannK3,          // (K3) fractional Neumann kernel, q = 2
  SpectralNeumannK4,  // (K4) spectral Neumann fractional Laplacian, q = 2
};

enum class KernelMode { Dirichlet, Regional, Periodic };

inline const char* to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::PowerGlobal: return "power_global";
    case KernelFamily::PowerRegional: return "power_regional";
    case KernelFamily::SumPower: return "sum_power";
    case KernelFamily::VariableOrder: return "variable_order";
    case KernelFamily::PiecewiseRegion: return "piecewise_region";
    case KernelFamily::PeriodicLattice: return "periodic_lattice";
    case KernelFamily::NeumannK3: return "neumann_k3";
    case KernelFamily::SpectralNeumannK4: return "spectral_neumann_k4";
  }
  return "unknown";
}

inline const char* to_string(KernelMode m) {
  switch (m) {
    case KernelMode::Dirichlet: return "dirichlet";
    case KernelMode::Regional: return "regional";
    case KernelMode::Periodic: return "periodic";
  }
  return "unknown";
}

/// Symbolic kernel. Which order fields are meaningful depends on the family:
/// `s` is the order (s1 for SumPower, s0 for VariableOrder, s_in for
/// PiecewiseRegion) and `s_alt` the second one (s2, s1, s_out).
template <class Scalar>
struct KernelSpec {
  KernelFamily family = KernelFamily::PowerRegional;
  Scalar s = Scalar(0.5);
  Scalar s_alt = Scalar(0.5);
  Scalar q = 2;
  Scalar normalization = 1;
  Scalar rho = infinity<Scalar>();  ///< interaction radius; infinity means diam(Omega)
  bool truncate = false;            ///< K = 0 for |x-y| >= rho
  Scalar Lambda = 1;
  bool symmetric = true;
  Box<Scalar> region;        ///< A for PiecewiseRegion
  int lattice_cutoff = 64;   ///< M for PeriodicLattice
  int inner_resolution = 8;  ///< Gauss points per panel for the K3 nested integrals
  int eigen_count = 0;       ///< K4 modes (0: all non-constant modes)

  static KernelSpec power_global(Scalar s, Scalar q) {
    KernelSpec k;
    k.family = KernelFamily::PowerGlobal;
    k.s = s;
    k.q = q;
    return k;
  }
  static KernelSpec power_regional(Scalar s, Scalar q) {
    KernelSpec k = power_global(s, q);
    k.family = KernelFamily::PowerRegional;
    return k;
  }
  static KernelSpec sum_power(Scalar s1, Scalar s2, Scalar q) {
    KernelSpec k = power_global(s1, q);
    k.family = KernelFamily::SumPower;
    k.s_alt = s2;
    return k;
  }
  static KernelSpec variable_order(Scalar s0, Scalar s1, Scalar q) {
    KernelSpec k = sum_power(s0, s1, q);
    k.family = KernelFamily::VariableOrder;
    return k;
  }
  static KernelSpec piecewise_region(const Box<Scalar>& region, Scalar s_in, Scalar s_out, Scalar q) {
    KernelSpec k = sum_power(s_in, s_out, q);
    k.family = KernelFamily::PiecewiseRegion;
    k.region = region;
    return k;
  }
  static KernelSpec periodic_lattice(Scalar s, Scalar q, int cutoff = 64) {
    KernelSpec k = power_global(s, q);
    k.family = KernelFamily::PeriodicLattice;
    k.lattice_cutoff = cutoff;
    return k;
  }
  static KernelSpec neumann_k3(Scalar s, int inner_resolution = 8) {
    KernelSpec k = power_global(s, Scalar(2));
    k.family = KernelFamily::NeumannK3;
    k.inner_resolution = inner_resolution;
    return k;
  }
  static KernelSpec spectral_k4(Scalar s, int eigen_count = 0) {
    KernelSpec k = power_global(s, Scalar(2));
    k.family = KernelFamily::SpectralNeumannK4;
    k.eigen_count = eigen_count;
    k.Lambda = 4;
    return k;
  }

  /// Order used to certify the singularity lower bound (the largest one).
  Scalar certify_order() const {
    switch (family) {
      case KernelFamily::SumPower:
      case KernelFamily::VariableOrder:
      case KernelFamily::PiecewiseRegion: return std::max(s, s_alt);
      default: return s;
    }
  }

  bool is_power_law() const {
    return family == KernelFamily::PowerGlobal || family == KernelFamily::PowerRegional;
  }

  /// Mode used when none is requested explicitly.
  KernelMode default_mode() const {
    switch (family) {
      case KernelFamily::PeriodicLattice: return KernelMode::Periodic;
      case KernelFamily::PowerRegional:
      case KernelFamily::NeumannK3:
      case KernelFamily::SpectralNeumannK4: return KernelMode::Regional;
      default: return KernelMode::Dirichlet;
    }
  }
};

template <class Scalar>
void validate(const KernelSpec<Scalar>& k) {
  auto in01 = [](Scalar v) { return v > Scalar(0) && v < Scalar(1); };
  if (!in01(k.s)) throw ConfigError("kernel.s must lie in (0,1)");
  const bool two_orders = k.family == KernelFamily::SumPower || k.family == KernelFamily::VariableOrder ||
                          k.family == KernelFamily::PiecewiseRegion;
  if (two_orders && !in01(k.s_alt)) throw ConfigError("kernel.s_alt must lie in (0,1)");
  if (k.family == KernelFamily::VariableOrder && k.s_alt < k.s)
    throw ConfigError("kernel: variable order needs s0 <= s1");
  if (!(k.q >= 2)) throw ConfigError("kernel.q must be >= 2");
  if (!(k.rho > 0)) throw ConfigError("kernel.rho must be > 0");
  if (!(k.Lambda >= 1)) throw ConfigError("kernel.Lambda must be >= 1");
  if (!(k.normalization > 0)) throw ConfigError("kernel.normalization must be > 0");
  if ((k.family == KernelFamily::NeumannK3 || k.family == KernelFamily::SpectralNeumannK4) && k.q != 2)
    throw ConfigError("kernel: Neumann kernels require q = 2");
  if (k.family == KernelFamily::PeriodicLattice && k.lattice_cutoff < 1)
    throw ConfigError("kernel.lattice_cutoff must be >= 1");
  if (k.family == KernelFamily::NeumannK3 && k.inner_resolution < 2)
    throw ConfigError("kernel.inner_resolution must be >= 2");
  if (k.eigen_count < 0) throw ConfigError("kernel.eigen_count must be >= 0");
}

/// Assembled pairwise weights W_ij ~ K(x_i, x_j) w_i w_j (zero diagonal) and
/// killing weights omega_i ~ int_{R^d \ Omega} (K(x_i, y) + K(y, x_i)) dy.
template <class Scalar>
struct KernelMatrix {
  Matrix<Scalar> pair_weights;
  Vector<Scalar> killing;
  Vector<Scalar> cell_weights;
  KernelMode mode = KernelMode::Regional;
  KernelSpec<Scalar> spec;

  Eigen::Index size() const { return pair_weights.rows(); }
};

namespace detail {

template <class F>
void parallel_rows(Eigen::Index n, F&& body) {
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const Eigen::Index workers = std::min<Eigen::Index>(std::min<Eigen::Index>(hw, 8), std::max<Eigen::Index>(1, n / 16));
  if (workers <= 1) {
    for (Eigen::Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  for (Eigen::Index t = 0; t < workers; ++t)
    pool.emplace_back([&, t] {
      for (Eigen::Index i = t; i < n; i += workers) body(i);
    });
  for (auto& th : pool) th.join();
}

/// int_{R^d \ box} F(|x - y|) dy for x inside the box, where the caller
/// supplies the radial antiderivative g(rho) = int_rho^inf F(r) r^(d-1) dr.
/// 1D is exact; 2D integrates g(ray length) over angles per box side.
template <class Scalar, class G>
Scalar ray_exterior(const Box<Scalar>& box, const Point<Scalar>& x, G&& g, int angular_order = 24) {
  if (box.dim == 1) return g(x[0] - box.lo[0]) + g(box.hi[0] - x[0]);
  Scalar total = 0;
  // For each side: normal distance delta and the tangential offsets to its corners.
  const std::array<std::array<Scalar, 3>, 4> sides = {{
      {box.hi[0] - x[0], x[1] - box.lo[1], box.hi[1] - x[1]},
      {x[0] - box.lo[0], x[1] - box.lo[1], box.hi[1] - x[1]},
      {box.hi[1] - x[1], x[0] - box.lo[0], box.hi[0] - x[0]},
      {x[1] - box.lo[1], x[0] - box.lo[0], box.hi[0] - x[0]},
  }};
  for (const auto& side : sides) {
    const Scalar delta = side[0];
    const Scalar lo = -std::atan2(side[1], delta);
    const Scalar hi = std::atan2(side[2], delta);
    auto f = [&](Scalar phi) { return g(delta / std::cos(phi)); };
    total += gauss_panel<Scalar>(f, lo, Scalar(0), angular_order) +
             gauss_panel<Scalar>(f, Scalar(0), hi, angular_order);
  }
  return total;
}

/// Radial antiderivative for r^(-1-sigma) (times r^(d-1) r^(-d)), optionally
/// truncated at rho_cut and optionally with the min{1, r^q} renormalization.
template <class Scalar>
Scalar power_tail(Scalar rho, Scalar sigma, Scalar rho_cut = infinity<Scalar>()) {
  if (rho >= rho_cut) return 0;
  Scalar v = std::pow(rho, -sigma) / sigma;
  if (std::isfinite(double(rho_cut))) v -= std::pow(rho_cut, -sigma) / sigma;
  return v;
}

/// int_rho^cut min{1, r^q} r^(-1-sigma) dr.
template <class Scalar>
Scalar renormalized_power_tail(Scalar rho, Scalar sigma, Scalar q, Scalar rho_cut = infinity<Scalar>()) {
  if (rho >= rho_cut) return 0;
  auto near = [&](Scalar a, Scalar b) {  // int_a^b r^(q-1-sigma)
    const Scalar e = q - sigma;
    return (std::pow(b, e) - std::pow(a, e)) / e;
  };
  Scalar v = 0;
  if (rho < 1) {
    v += near(rho, std::min(Scalar(1), rho_cut));
    if (rho_cut > 1) v += power_tail<Scalar>(Scalar(1), sigma, rho_cut);
  } else {
    v += power_tail<Scalar>(rho, sigma, rho_cut);
  }
  return v;
}

/// D(z) = int_box |z - eta|^(-d-2s) d eta for z outside the closed box (2D).
template <class Scalar>
Scalar box_potential_2d(const Box<Scalar>& box, const Point<Scalar>& z, Scalar s, int order = 16) {
  std::array<Scalar, 4> ang;
  const Point<Scalar> c = (box.lo + box.hi) / 2;
  const Scalar base = std::atan2(c[1] - z[1], c[0] - z[0]);
  const std::array<Point<Scalar>, 4> corners = {Point<Scalar>(box.lo[0], box.lo[1]), Point<Scalar>(box.hi[0], box.lo[1]),
                                                Point<Scalar>(box.lo[0], box.hi[1]), Point<Scalar>(box.hi[0], box.hi[1])};
  for (int k = 0; k < 4; ++k) {
    Scalar a = std::atan2(corners[k][1] - z[1], corners[k][0] - z[0]) - base;
    while (a > pi_v<Scalar>()) a -= 2 * pi_v<Scalar>();
    while (a < -pi_v<Scalar>()) a += 2 * pi_v<Scalar>();
    ang[k] = a;
  }
  std::sort(ang.begin(), ang.end());
  auto ray = [&](Scalar theta) -> Scalar {
    const Scalar dx = std::cos(theta + base), dy = std::sin(theta + base);
    Scalar t0 = 0, t1 = infinity<Scalar>();
    const Scalar dirs[2] = {dx, dy};
    for (int k = 0; k < 2; ++k) {
      if (std::abs(dirs[k]) < Scalar(1e-300)) {
        if (z[k] < box.lo[k] || z[k] > box.hi[k]) return 0;
        continue;
      }
      Scalar a = (box.lo[k] - z[k]) / dirs[k], b = (box.hi[k] - z[k]) / dirs[k];
      if (a > b) std::swap(a, b);
      t0 = std::max(t0, a);
      t1 = std::min(t1, b);
    }
    if (!(t1 > t0) || t0 <= 0) return 0;
    return (std::pow(t0, -2 * s) - std::pow(t1, -2 * s)) / (2 * s);
  };
  Scalar total = 0;
  for (int k = 0; k < 3; ++k)
    if (ang[k + 1] > ang[k]) total += gauss_panel<Scalar>(ray, ang[k], ang[k + 1], order);
  return total;
}

}  // namespace detail

/// Pointwise kernel evaluation bound to a domain. Holds the per-domain
/// precomputation of the (K3) exterior quadrature in two dimensions.
template <class Scalar>
class KernelEvaluator {
 public:
  KernelEvaluator(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid) : spec_(spec), grid_(&grid) {
    validate(spec_);
    dim_ = grid.dim;
    if (spec_.family == KernelFamily::PeriodicLattice) {
      for (int k = 0; k < dim_; ++k)
        if (grid.box().lo[k] != 0 || grid.box().hi[k] != 1)
          throw ConfigError("kernel: periodic lattice kernel requires the unit box");
    }
    if (spec_.family == KernelFamily::NeumannK3 && !grid.single_box())
      throw ConfigError("kernel: K3 requires a single box domain");
    if (spec_.family == KernelFamily::NeumannK3 && dim_ == 2) {
      if (grid.ext_nodes.empty()) throw ConfigError("kernel: K3 in 2D requires grid.ext_radius > 0");
      potential_.resize(static_cast<Eigen::Index>(grid.ext_nodes.size()));
      for (std::size_t m = 0; m < grid.ext_nodes.size(); ++m)
        potential_[static_cast<Eigen::Index>(m)] = detail::box_potential_2d(grid.box(), grid.ext_nodes[m], spec_.s);
      const auto& b = grid.box();
      const Scalar R = grid.ext_radius;
      const Scalar area = b.volume() + 2 * (b.extent(0) + b.extent(1)) * R + pi_v<Scalar>() * R * R;
      const Scalar r_eq = std::sqrt(area / pi_v<Scalar>());
      k3_tail_ = 2 * pi_v<Scalar>() * std::pow(r_eq, -2 * spec_.s) / (2 * spec_.s) / b.volume();
    }
  }

  const KernelSpec<Scalar>& spec() const { return spec_; }

  Scalar operator()(const Point<Scalar>& x, const Point<Scalar>& y) const {
    const Scalar r = (x - y).norm();
    if (!(r > 0)) throw DomainError("eval_kernel: x == y");
    if (spec_.truncate && r >= spec_.rho) return 0;
    return spec_.normalization * raw(x, y, r);
  }

  /// Order s(x, y) of the variable-order family: s0 + (s1 - s0) t, with t the
  /// relative position of the pair midpoint along the first axis, clamped.
  Scalar variable_order(const Point<Scalar>& x, const Point<Scalar>& y) const {
    const auto& b = grid_->box();
    const Scalar t = std::clamp((Scalar(0.5) * (x[0] + y[0]) - b.lo[0]) / b.extent(0), Scalar(0), Scalar(1));
    return spec_.s + (spec_.s_alt - spec_.s) * t;
  }

 private:
  Scalar power(Scalar r, Scalar order) const { return std::pow(r, -Scalar(dim_) - order * spec_.q); }

  Scalar raw(const Point<Scalar>& x, const Point<Scalar>& y, Scalar r) const {
    switch (spec_.family) {
      case KernelFamily::PowerGlobal:
      case KernelFamily::PowerRegional: return power(r, spec_.s);
      case KernelFamily::SumPower: return power(r, spec_.s) + power(r, spec_.s_alt);
      case KernelFamily::VariableOrder: return power(r, variable_order(x, y));
      case KernelFamily::PiecewiseRegion: {
        Box<Scalar> a = spec_.region;
        a.dim = dim_;
        return (a.contains(x) && a.contains(y)) ? power(r, spec_.s) : power(r, spec_.s_alt);
      }
      case KernelFamily::PeriodicLattice: return lattice(x - y);
      case KernelFamily::NeumannK3: return power(r, spec_.s) + (dim_ == 1 ? k3_exterior_1d(x, y) : k3_exterior_2d(x, y));
      case KernelFamily::SpectralNeumannK4:
        throw ConfigError("eval_kernel: K4 is defined spectrally; use spectral_assemble_k4");
    }
    return 0;
  }

  Scalar lattice(const Point<Scalar>& diff) const {
    const Scalar sigma = spec_.s * spec_.q;
    if (dim_ == 1) {
      const int M = spec_.lattice_cutoff;
      const Scalar r = diff[0];
      Scalar sum = 0;
      for (int nu = -M; nu <= M; ++nu) sum += std::pow(std::abs(r - Scalar(nu)), -1 - sigma);
      // Midpoint-rule estimate of the remaining terms.
      const Scalar edge = Scalar(M) + Scalar(0.5);
      sum += (std::pow(edge - r, -sigma) + std::pow(edge + r, -sigma)) / sigma;
      return sum;
    }
    const int M = std::min(spec_.lattice_cutoff, 12);
    Scalar sum = 0;
    for (int a = -M; a <= M; ++a)
      for (int b = -M; b <= M; ++b) {
        const Scalar dx = diff[0] - Scalar(a), dy = diff[1] - Scalar(b);
        sum += std::pow(dx * dx + dy * dy, Scalar(-0.5) * (2 + sigma));
      }
    const Scalar edge = Scalar(M) + Scalar(0.5);
    const auto outer = Box<Scalar>::rectangle(-edge, edge, -edge, edge);
    sum += detail::ray_exterior(outer, diff, [&](Scalar rho) { return detail::power_tail(rho, sigma); });
    return sum;
  }

  // int_{R \ Omega} dz / (|x-z|^(1+2s) |y-z|^(1+2s) int_Omega |z-eta|^(-1-2s) d eta)
  Scalar k3_exterior_1d(const Point<Scalar>& x, const Point<Scalar>& y) const {
    const auto& b = grid_->box();
    const Scalar s = spec_.s, L = b.extent(0), e = 1 + 2 * s;
    auto side = [&](Scalar dx, Scalar dy) {
      auto f = [&](Scalar t) {
        const Scalar pot = std::pow(t, -2 * s) * -std::expm1(-2 * s * std::log1p(L / t)) / (2 * s);
        return std::pow(dx + t, -e) * std::pow(dy + t, -e) / pot;
      };
      const Scalar upper = Scalar(1e6) * std::max(L, Scalar(1));
      const Scalar first = std::min(dx, dy);
      Scalar v = graded_integral<Scalar>(f, first, upper, spec_.inner_resolution, 24);
      return v + std::pow(upper, -2 * s) / (2 * s * L);
    };
    return side(x[0] - b.lo[0], y[0] - b.lo[0]) + side(b.hi[0] - x[0], b.hi[0] - y[0]);
  }

  Scalar k3_exterior_2d(const Point<Scalar>& x, const Point<Scalar>& y) const {
    const Scalar e = 2 + 2 * spec_.s;
    Scalar sum = 0;
    for (std::size_t m = 0; m < grid_->ext_nodes.size(); ++m) {
      const auto& z = grid_->ext_nodes[m];
      sum += grid_->ext_weights[static_cast<Eigen::Index>(m)] * std::pow((x - z).norm(), -e) *
             std::pow((y - z).norm(), -e) / potential_[static_cast<Eigen::Index>(m)];
    }
    return sum + k3_tail_;
  }

  KernelSpec<Scalar> spec_;
  const Grid<Scalar>* grid_;
  int dim_ = 1;
  Vector<Scalar> potential_;
  Scalar k3_tail_ = 0;
};

/// Pointwise kernel value K(x, y) (normalization included) on the grid's domain.
template <class Scalar>
Scalar eval_kernel(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid, const Point<Scalar>& x,
                   const Point<Scalar>& y) {
  return KernelEvaluator<Scalar>(spec, grid)(x, y);
}

namespace detail {

template <class Scalar>
bool region_inside_domain(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid) {
  for (int k = 0; k < grid.dim; ++k)
    if (spec.region.lo[k] < grid.box().lo[k] || spec.region.hi[k] > grid.box().hi[k]) return false;
  return true;
}

/// True when the exterior interaction of x is a pure power law (possibly a sum
/// of two), returned as the list of orders.
template <class Scalar>
std::vector<Scalar> exterior_power_orders(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid) {
  switch (spec.family) {
    case KernelFamily::PowerGlobal:
    case KernelFamily::PowerRegional: return {spec.s};
    case KernelFamily::SumPower: return {spec.s, spec.s_alt};
    case KernelFamily::PiecewiseRegion:
      if (region_inside_domain(spec, grid)) return {spec.s_alt};
      return {};
    default: return {};
  }
}

/// int_{R^d \ Omega} (K(x,y) + K(y,x)) * weight(|x-y|) dy, with `radial` the
/// antiderivative used for power laws and `weight` applied pointwise otherwise.
template <class Scalar, class Radial, class Weight>
Scalar exterior_integral(const KernelEvaluator<Scalar>& eval, const Grid<Scalar>& grid, const Point<Scalar>& x,
                         Radial&& radial, Weight&& weight) {
  const auto& spec = eval.spec();
  const auto orders = exterior_power_orders(spec, grid);
  const Scalar cut = spec.truncate ? spec.rho : infinity<Scalar>();
  if (!orders.empty()) {
    Scalar total = 0;
    for (Scalar order : orders)
      total += ray_exterior(grid.box(), x, [&](Scalar rho) { return radial(rho, order * spec.q, cut); });
    return 2 * spec.normalization * total;
  }
  if (grid.ext_nodes.empty())
    throw ConfigError("kernel: this family needs exterior quadrature (grid.ext_radius > 0)");
  Scalar total = 0;
  for (std::size_t m = 0; m < grid.ext_nodes.size(); ++m) {
    const auto& y = grid.ext_nodes[m];
    total += grid.ext_weights[static_cast<Eigen::Index>(m)] * (eval(x, y) + eval(y, x)) * weight((x - y).norm());
  }
  return total;
}

}  // namespace detail

template <class Scalar>
KernelMatrix<Scalar> spectral_assemble_k4(Scalar s, int eigen_count, const Grid<Scalar>& grid,
                                          Scalar normalization = 1);

/// Empty if `mode` is admissible for the family, else the reason.
template <class Scalar>
std::string mode_conflict(const KernelSpec<Scalar>& spec, KernelMode mode, bool single_box = true) {
  const auto fam = spec.family;
  const bool regional_only = fam == KernelFamily::PowerRegional || fam == KernelFamily::NeumannK3 ||
                             fam == KernelFamily::SpectralNeumannK4;
  if (fam == KernelFamily::PowerGlobal && mode != KernelMode::Dirichlet)
    return "kernel.mode: power_global requires dirichlet mode";
  if (regional_only && mode != KernelMode::Regional)
    return std::string("kernel.mode: ") + to_string(fam) + " requires regional mode";
  if (fam == KernelFamily::PeriodicLattice && mode != KernelMode::Periodic)
    return "kernel.mode: periodic_lattice requires periodic mode";
  if (fam != KernelFamily::PeriodicLattice && mode == KernelMode::Periodic)
    return "kernel.mode: periodic mode requires the periodic_lattice family";
  if (mode == KernelMode::Dirichlet && !single_box) return "kernel.mode: dirichlet mode requires a single box domain";
  return {};
}

/// Assembles pair weights (diagonal excluded) and, in Dirichlet mode, the
/// killing weights of the zero extension.
template <class Scalar>
KernelMatrix<Scalar> assemble(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid, KernelMode mode) {
  validate(spec);
  if (const auto why = mode_conflict(spec, mode, grid.single_box()); !why.empty()) throw ConfigError(why);
  const auto fam = spec.family;

  if (fam == KernelFamily::SpectralNeumannK4) {
    auto km = spectral_assemble_k4<Scalar>(spec.s, spec.eigen_count, grid, spec.normalization);
    km.spec = spec;
    return km;
  }

  KernelEvaluator<Scalar> eval(spec, grid);
  const Eigen::Index n = grid.size();
  KernelMatrix<Scalar> km;
  km.spec = spec;
  km.mode = mode;
  km.cell_weights = grid.weights;
  km.pair_weights = Matrix<Scalar>::Zero(n, n);
  km.killing = Vector<Scalar>::Zero(n);
  detail::parallel_rows(n, [&](Eigen::Index i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar wij = grid.weights[i] * grid.weights[j];
      const Scalar kij = eval(grid.nodes[i], grid.nodes[j]);
      km.pair_weights(i, j) = kij * wij;
      km.pair_weights(j, i) = spec.symmetric ? kij * wij : eval(grid.nodes[j], grid.nodes[i]) * wij;
    }
    if (mode == KernelMode::Dirichlet)
      km.killing[i] = detail::exterior_integral(
          eval, grid, grid.nodes[i],
          [](Scalar rho, Scalar sigma, Scalar cut) { return detail::power_tail(rho, sigma, cut); },
          [](Scalar) { return Scalar(1); });
  });
  return km;
}

template <class Scalar>
KernelMatrix<Scalar> assemble(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid) {
  return assemble(spec, grid, spec.default_mode());
}

/// Discrete Neumann Laplacian (cell-centred, reflecting closure), scaled by 1/h^2.
template <class Scalar>
Matrix<Scalar> neumann_laplacian(const Grid<Scalar>& grid) {
  if (!grid.single_box()) throw ConfigError("neumann_laplacian: single box domain required");
  const int n = grid.n_per_axis;
  auto line = [n](Scalar h) {
    Matrix<Scalar> L = Matrix<Scalar>::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      if (i > 0) {
        L(i, i) += 1;
        L(i, i - 1) -= 1;
      }
      if (i + 1 < n) {
        L(i, i) += 1;
        L(i, i + 1) -= 1;
      }
    }
    return Matrix<Scalar>(L / (h * h));
  };
  if (grid.dim == 1) return line(grid.h(0));
  const Matrix<Scalar> Lx = line(grid.h(0)), Ly = line(grid.h(1));
  const Eigen::Index N = Eigen::Index(n) * n;
  Matrix<Scalar> L = Matrix<Scalar>::Zero(N, N);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Eigen::Index row = i + Eigen::Index(n) * j;
      for (int k = 0; k < n; ++k) {
        L(row, k + Eigen::Index(n) * j) += Lx(i, k);
        L(row, i + Eigen::Index(n) * k) += Ly(j, k);
      }
    }
  return L;
}

/// (K4) as an operator: A = sum_{k>=1} lambda_k^s (psi_k psi_k^T) in the
/// weighted form sense, returned as pair weights W_ij = -A_ij (i != j). With
/// the one-half convention of the regional form this reproduces A exactly.
template <class Scalar>
KernelMatrix<Scalar> spectral_assemble_k4(Scalar s, int eigen_count, const Grid<Scalar>& grid, Scalar normalization) {
  if (!(s > 0 && s <= 1)) throw ConfigError("kernel.s must lie in (0,1]");
  const Matrix<Scalar> L = neumann_laplacian(grid);
  const Eigen::Index n = L.rows();
  if (eigen_count > n - 1) throw ConfigError("kernel.eigen_count exceeds the number of non-constant modes");
  const int count = eigen_count == 0 ? int(n - 1) : eigen_count;
  Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> eig(L);
  const Scalar w = grid.weights[0];
  Matrix<Scalar> A = Matrix<Scalar>::Zero(n, n);
  for (int k = 1; k <= count; ++k) {
    const Scalar lam = std::max(eig.eigenvalues()[k], Scalar(0));
    const auto v = eig.eigenvectors().col(k);
    A.noalias() += std::pow(lam, s) * v * v.transpose();
  }
  A *= w * normalization;
  KernelMatrix<Scalar> km;
  km.spec = KernelSpec<Scalar>::spectral_k4(s < 1 ? s : Scalar(0.5), eigen_count);
  km.spec.s = s;
  km.spec.normalization = normalization;
  km.mode = KernelMode::Regional;
  km.cell_weights = grid.weights;
  km.pair_weights = -A;
  km.pair_weights.diagonal().setZero();
  // Exact symmetry of the stored weights.
  km.pair_weights = (km.pair_weights + km.pair_weights.transpose()).eval() / Scalar(2);
  km.killing = Vector<Scalar>::Zero(n);
  return km;
}

// ---------------------------------------------------------------------------
// Certification

template <class Scalar>
struct SingularityReport {
  Scalar margin = infinity<Scalar>();
  Scalar threshold = 0;
  Eigen::Index pairs_checked = 0;
  bool pass = false;
};

/// min K(x,y) |x-y|^(d+sq) over sampled node pairs with |x-y| < rho.
template <class Scalar>
SingularityReport<Scalar> check_singularity(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid, int samples,
                                            std::uint64_t seed = 1) {
  validate(spec);
  if (samples < 1) throw ConfigError("check_singularity: samples must be >= 1");
  const Eigen::Index n = grid.size();
  const Scalar rho = std::isfinite(double(spec.rho)) ? spec.rho : grid.diameter();
  const Scalar exponent = Scalar(grid.dim) + spec.certify_order() * spec.q;

  Matrix<Scalar> k4;
  if (spec.family == KernelFamily::SpectralNeumannK4)
    k4 = spectral_assemble_k4<Scalar>(spec.s, spec.eigen_count, grid, spec.normalization).pair_weights;
  std::unique_ptr<KernelEvaluator<Scalar>> eval;
  if (spec.family != KernelFamily::SpectralNeumannK4) eval = std::make_unique<KernelEvaluator<Scalar>>(spec, grid);

  auto value = [&](Eigen::Index i, Eigen::Index j) {
    if (k4.size()) return k4(i, j) / (grid.weights[i] * grid.weights[j]);
    return (*eval)(grid.nodes[i], grid.nodes[j]);
  };

  SingularityReport<Scalar> rep;
  rep.threshold = 1 / spec.Lambda - Scalar(1e-9);
  auto visit = [&](Eigen::Index i, Eigen::Index j) {
    const Scalar r = pairwise_distance(grid, i, j);
    if (!(r < rho)) return;
    rep.margin = std::min(rep.margin, value(i, j) * std::pow(r, exponent));
    ++rep.pairs_checked;
  };
  const Eigen::Index total_pairs = n * (n - 1) / 2;
  if (Eigen::Index(samples) >= total_pairs) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = i + 1; j < n; ++j) visit(i, j);
  } else {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    for (int k = 0; k < samples; ++k) {
      Eigen::Index i = pick(rng), j = pick(rng);
      while (j == i) j = pick(rng);
      visit(i, j);
    }
  }
  rep.pass = rep.pairs_checked > 0 && rep.margin >= rep.threshold;
  return rep;
}

/// Convergence study of a sequence of quadrature estimates on grids refined
/// by factors of two. The raw differences must contract; the error estimate
/// is the gap between the two most extrapolated values of iterated Aitken.
template <class Scalar>
struct RefinementStudy {
  std::vector<int> levels;
  std::vector<Scalar> estimates;
  std::vector<Scalar> extrapolated;  ///< first Aitken column
  Scalar best = infinity<Scalar>();
  Scalar ratio = 0;  ///< last ratio of successive raw differences
  Scalar relative_change = infinity<Scalar>();
  Scalar tolerance = Scalar(1e-3);
  bool pass = false;
};

namespace detail {

/// One Aitken delta-squared sweep; entries whose differences do not contract
/// are returned as +inf.
template <class Scalar>
std::vector<Scalar> aitken_column(const std::vector<Scalar>& v, Scalar max_ratio, Scalar* last_ratio) {
  std::vector<Scalar> out;
  for (std::size_t k = 2; k < v.size(); ++k) {
    const Scalar d1 = v[k - 1] - v[k - 2], d2 = v[k] - v[k - 1];
    if (!std::isfinite(double(v[k])) || !std::isfinite(double(d1)) || !std::isfinite(double(d2))) {
      out.push_back(infinity<Scalar>());
      continue;
    }
    if (d1 == 0 || std::abs(d2) <= 4 * std::numeric_limits<Scalar>::epsilon() * std::abs(v[k])) {
      if (last_ratio) *last_ratio = 0;
      out.push_back(v[k]);
      continue;
    }
    const Scalar r = d2 / d1;
    if (last_ratio) *last_ratio = r;
    out.push_back(std::abs(r) < max_ratio ? v[k] + d2 * r / (1 - r) : infinity<Scalar>());
  }
  return out;
}

template <class Scalar>
bool all_finite(const std::vector<Scalar>& v) {
  return std::all_of(v.begin(), v.end(), [](Scalar x) { return std::isfinite(double(x)); });
}

}  // namespace detail

template <class Scalar>
RefinementStudy<Scalar> study_refinement(std::vector<int> levels, std::vector<Scalar> values, Scalar tolerance) {
  RefinementStudy<Scalar> st;
  st.levels = std::move(levels);
  st.estimates = std::move(values);
  st.tolerance = tolerance;
  if (st.estimates.size() < 4) throw ConfigError("study_refinement: at least four levels are required");
  st.extrapolated = detail::aitken_column<Scalar>(st.estimates, Scalar(0.95), &st.ratio);
  if (!detail::all_finite(st.extrapolated)) return st;
  std::vector<std::vector<Scalar>> columns = {st.extrapolated};
  while (columns.back().size() >= 3) {
    auto next = detail::aitken_column<Scalar>(columns.back(), Scalar(1), nullptr);
    if (!detail::all_finite(next)) break;
    columns.push_back(std::move(next));
  }
  const auto& top = columns.back();
  Scalar previous;
  if (top.size() >= 2)
    previous = top[top.size() - 2];
  else
    previous = columns[columns.size() - 2].back();
  st.best = top.back();
  st.relative_change = std::abs(st.best - previous) / std::max(std::abs(st.best), std::numeric_limits<Scalar>::min());
  st.pass = st.relative_change < tolerance;
  return st;
}

template <class Scalar>
struct IntegrabilityReport {
  RefinementStudy<Scalar> study;
  Scalar estimate = infinity<Scalar>();
  bool local = false;
  bool pass = false;
};

namespace detail {

/// One quadrature estimate of the integrability functional on `grid`:
/// Dirichlet mode integrates min{1,|x-y|^q} K over Q(Omega); regional modes
/// integrate |x-y|^q K over Omega^2, or over Omega' x Omega (both orders) when
/// `local_margin` > 0, Omega' being the box shrunk by that fraction per side.
template <class Scalar>
Scalar integrability_estimate(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid, KernelMode mode,
                              Scalar local_margin) {
  const Eigen::Index n = grid.size();
  const Scalar q = spec.q;
  std::vector<char> inner(static_cast<std::size_t>(n), 1);
  if (local_margin > 0) {
    Box<Scalar> sub = grid.box();
    for (int k = 0; k < grid.dim; ++k) {
      sub.lo[k] += local_margin * grid.box().extent(k);
      sub.hi[k] -= local_margin * grid.box().extent(k);
    }
    for (Eigen::Index i = 0; i < n; ++i) inner[std::size_t(i)] = sub.contains(grid.nodes[i]) ? 1 : 0;
  }
  if (spec.family == KernelFamily::SpectralNeumannK4) {
    const auto km = spectral_assemble_k4<Scalar>(spec.s, spec.eigen_count, grid, spec.normalization);
    Scalar sum = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j && (inner[std::size_t(i)] || inner[std::size_t(j)]))
          sum += std::pow(pairwise_distance(grid, i, j), q) * km.pair_weights(i, j);
    return sum;
  }
  KernelEvaluator<Scalar> eval(spec, grid);
  std::vector<Scalar> rows(static_cast<std::size_t>(n), Scalar(0));
  parallel_rows(n, [&](Eigen::Index i) {
    Scalar acc = 0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      if (!(inner[std::size_t(i)] || inner[std::size_t(j)])) continue;
      const Scalar r = pairwise_distance(grid, i, j);
      const Scalar weight = mode == KernelMode::Dirichlet ? std::min(Scalar(1), std::pow(r, q)) : std::pow(r, q);
      const Scalar kij = eval(grid.nodes[i], grid.nodes[j]);
      const Scalar kji = spec.symmetric ? kij : eval(grid.nodes[j], grid.nodes[i]);
      acc += weight * (kij + kji) * grid.weights[i] * grid.weights[j];
    }
    if (mode == KernelMode::Dirichlet)
      acc += grid.weights[i] *
             exterior_integral(
                 eval, grid, grid.nodes[i],
                 [q](Scalar rho, Scalar sigma, Scalar cut) { return renormalized_power_tail(rho, sigma, q, cut); },
                 [q](Scalar r) { return std::min(Scalar(1), std::pow(r, q)); });
    rows[std::size_t(i)] = acc;
  });
  Scalar sum = 0;
  for (Scalar v : rows) sum += v;
  return sum;
}

}  // namespace detail

/// Quadrature estimates of the integrability functional on four successively
/// refined grids; PASS iff they converge (extrapolated values agree to 1e-3).
template <class Scalar>
IntegrabilityReport<Scalar> check_integrability(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid,
                                                KernelMode mode, Scalar local_margin = 0, int levels = 5,
                                                Scalar tolerance = Scalar(1e-3)) {
  validate(spec);
  IntegrabilityReport<Scalar> rep;
  rep.local = local_margin > 0;
  std::vector<int> ns;
  std::vector<Scalar> vals;
  Grid<Scalar> g = grid;
  for (int l = 0; l < levels; ++l) {
    ns.push_back(g.n_per_axis);
    vals.push_back(detail::integrability_estimate(spec, g, mode, local_margin));
    if (l + 1 < levels) g = refined(g);
  }
  rep.study = study_refinement<Scalar>(ns, vals, tolerance);
  rep.pass = rep.study.pass;
  rep.estimate = rep.study.best;
  return rep;
}

template <class Scalar>
IntegrabilityReport<Scalar> check_integrability(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid) {
  return check_integrability(spec, grid, spec.default_mode());
}

template <class Scalar>
struct LipschitzReport {
  std::vector<std::string> fields;
  std::vector<RefinementStudy<Scalar>> studies;
  bool pass = false;
};

/// Discrete ||u||_{K,q}^q of a function defined on all of R^d: pairs inside
/// Omega plus the Omega x exterior pairs by exterior quadrature. Power-law
/// tails beyond the annulus use sup|u(x) - u(y)| <= 2 sup|u| as a bound.
template <class Scalar>
Scalar q_seminorm_on_q_omega(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid,
                             const std::function<Scalar(const Point<Scalar>&)>& u, Scalar sup_abs) {
  if (grid.ext_nodes.empty()) throw ConfigError("lipschitz check requires grid.ext_radius > 0");
  KernelEvaluator<Scalar> eval(spec, grid);
  const Eigen::Index n = grid.size();
  const Scalar q = spec.q;
  std::vector<Scalar> vals(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) vals[std::size_t(i)] = u(grid.nodes[i]);
  std::vector<Scalar> rows(std::size_t(n), Scalar(0));
  const auto orders = detail::exterior_power_orders(spec, grid);
  detail::parallel_rows(n, [&](Eigen::Index i) {
    Scalar acc = 0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const Scalar kij = eval(grid.nodes[i], grid.nodes[j]);
      acc += 2 * std::pow(std::abs(vals[std::size_t(i)] - vals[std::size_t(j)]), q) * kij * grid.weights[i] *
             grid.weights[j];
    }
    Scalar ext = 0;
    for (std::size_t m = 0; m < grid.ext_nodes.size(); ++m) {
      const auto& y = grid.ext_nodes[m];
      ext += grid.ext_weights[Eigen::Index(m)] * std::pow(std::abs(vals[std::size_t(i)] - u(y)), q) *
             (eval(grid.nodes[i], y) + eval(y, grid.nodes[i]));
    }
    // Tail beyond the annulus, bounded for power laws.
    for (Scalar order : orders) {
      Box<Scalar> outer = grid.box();
      for (int k = 0; k < grid.dim; ++k) {
        outer.lo[k] -= grid.ext_radius;
        outer.hi[k] += grid.ext_radius;
      }
      ext += 2 * spec.normalization * std::pow(2 * sup_abs, q) *
             detail::ray_exterior(outer, grid.nodes[i],
                                  [&](Scalar rho) { return detail::power_tail(rho, order * q); });
    }
    rows[std::size_t(i)] = acc + grid.weights[i] * ext;
  });
  Scalar sum = 0;
  for (Scalar v : rows) sum += v;
  return sum;
}

/// Refinement study of ||u||_{K,q}^q for a field given pointwise on R^d.
template <class Scalar>
RefinementStudy<Scalar> seminorm_refinement(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid,
                                            const std::function<Scalar(const Point<Scalar>&)>& u, Scalar sup_abs,
                                            int levels = 4, Scalar tolerance = Scalar(1e-2)) {
  std::vector<int> ns;
  std::vector<Scalar> vals;
  Grid<Scalar> g = grid;
  for (int l = 0; l < levels; ++l) {
    ns.push_back(g.n_per_axis);
    vals.push_back(q_seminorm_on_q_omega(spec, g, u, sup_abs));
    if (l + 1 < levels) g = refined(g);
  }
  return study_refinement<Scalar>(ns, vals, tolerance);
}

/// Finite ||.||_{K,q} for Lipschitz bounded functions: the coordinate
/// truncations min{x_k, R + 1} (Omega inside B_R) and a zero-extended hat.
template <class Scalar>
LipschitzReport<Scalar> lipschitz_energy_check(const KernelSpec<Scalar>& spec, const Grid<Scalar>& grid,
                                               int levels = 4, Scalar tolerance = Scalar(1e-2)) {
  validate(spec);
  if (spec.default_mode() != KernelMode::Dirichlet && spec.family != KernelFamily::PowerRegional)
    throw ConfigError("lipschitz_energy_check: requires a kernel usable in dirichlet mode");
  LipschitzReport<Scalar> rep;
  const auto& b = grid.box();
  const Scalar R = std::max(Scalar(1), std::max(b.lo.head(grid.dim).cwiseAbs().maxCoeff(),
                                                b.hi.head(grid.dim).cwiseAbs().maxCoeff()) *
                                           std::sqrt(Scalar(grid.dim)));
  for (int k = 0; k < grid.dim; ++k) {
    auto coord = [k, R](const Point<Scalar>& x) { return std::min(x[k], R + 1); };
    rep.fields.push_back("coordinate_" + std::to_string(k));
    rep.studies.push_back(seminorm_refinement<Scalar>(spec, grid, coord, R + 1, levels, tolerance));
  }
  auto hat = [b, d = grid.dim](const Point<Scalar>& x) {
    Scalar v = 1;
    for (int k = 0; k < d; ++k) {
      const Scalar c = (b.lo[k] + b.hi[k]) / 2, half = b.extent(k) / 2;
      v *= std::max(Scalar(0), 1 - std::abs(x[k] - c) / half);
    }
    return v;
  };
  rep.fields.push_back("hat");
  rep.studies.push_back(seminorm_refinement<Scalar>(spec, grid, hat, Scalar(1), levels, tolerance));
  rep.pass = std::all_of(rep.studies.begin(), rep.studies.end(), [](const auto& s) { return s.pass; });
  return rep;
}

// ---------------------------------------------------------------------------
// (K3) two-sided estimate against (1 + log^-(d_xy / |x-y|)) |x-y|^(-d-2s)

template <class Scalar>
struct SandwichFit {
  Scalar min_ratio = infinity<Scalar>();
  Scalar max_ratio = 0;
  Scalar C = infinity<Scalar>();  ///< smallest C >= 1 with C^-1 K <= g <= C K on the samples
  Eigen::Index pairs = 0;
};

template <class Scalar>
Scalar k3_reference(const Grid<Scalar>& grid, const Point<Scalar>& x, const Point<Scalar>& y, Scalar s) {
  const Scalar r = (x - y).norm();
  const Scalar dxy = std::min(grid.boundary_distance(x), grid.boundary_distance(y));
  const Scalar logm = std::max(Scalar(0), -std::log(dxy / r));
  return (1 + logm) * std::pow(r, -Scalar(grid.dim) - 2 * s);
}

template <class Scalar>
void update_sandwich(SandwichFit<Scalar>& fit, Scalar kernel, Scalar reference) {
  const Scalar ratio = kernel / reference;
  fit.min_ratio = std::min(fit.min_ratio, ratio);
  fit.max_ratio = std::max(fit.max_ratio, ratio);
  fit.C = std::max({Scalar(1), fit.max_ratio, 1 / fit.min_ratio});
  ++fit.pairs;
}

/// Fits the sandwich constant over all node pairs of an assembled K3 matrix.
template <class Scalar>
SandwichFit<Scalar> fit_k3_sandwich(const KernelMatrix<Scalar>& km, const Grid<Scalar>& grid) {
  if (km.spec.family != KernelFamily::NeumannK3) throw ConfigError("fit_k3_sandwich: K3 matrix required");
  SandwichFit<Scalar> fit;
  for (Eigen::Index i = 0; i < grid.size(); ++i)
    for (Eigen::Index j = i + 1; j < grid.size(); ++j) {
      const Scalar k = km.pair_weights(i, j) / (grid.weights[i] * grid.weights[j]) / km.spec.normalization;
      update_sandwich(fit, k, k3_reference(grid, grid.nodes[i], grid.nodes[j], km.spec.s));
    }
  return fit;
}

}  // namespace nlch
