#include <doctest.h>

#include "nlch/diagnostics.hpp"

#include <cmath>

using namespace nlch;

namespace {
Grid<double> unit(int n, double ext = 0) { return build_grid<double>(1, Box<double>::interval(0, 1), n, ext); }
}  // namespace

TEST_CASE("parallel map keeps index order and rethrows") {
  const auto v = detail::parallel_map(50, 4, [](std::size_t k) { return int(k * k); });
  for (std::size_t k = 0; k < v.size(); ++k) CHECK(v[k] == int(k * k));
  CHECK_THROWS_AS(detail::parallel_map(5, 2, [](std::size_t k) -> int {
                    if (k == 3) throw NumericalError("boom");
                    return 0;
                  }),
                  NumericalError);
}

TEST_CASE("Poincare constant scales inversely with the kernel") {
  const auto g = unit(16);
  auto km = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  const double c1 = poincare_constant(km, KernelMode::Regional);
  km.pair_weights *= 3;
  CHECK(poincare_constant(km, KernelMode::Regional) == doctest::Approx(c1 / 3));
}

TEST_CASE("Poincare constant of the two-point graph") {
  // Mean-free fields on two equal cells are multiples of (1, -1): u^T H u = 8 W against |u|^2 = 2 w.
  const auto g = unit(2);
  auto km = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  const double W = km.pair_weights(0, 1), w = g.weights[0];
  Vector<double> u(2);
  u << 1, -1;
  const double form = u.dot(hessian_I(km, PhiSpec<double>::power(2), Vector<double>::Zero(2)) * u);
  CHECK(form == doctest::Approx(8 * W));
  CHECK(poincare_constant(km, KernelMode::Regional) == doctest::Approx(2 * w / form));
}

TEST_CASE("Neumann extension of a constant is that constant") {
  const auto g = unit(16, 2.0);
  const Vector<double> u = Vector<double>::Constant(16, 0.3);
  const Vector<double> ext = neumann_extension<double>(u, 0.5, g);
  CHECK((ext.array() - 0.3).abs().maxCoeff() <= 1e-14);
}

TEST_CASE("Neumann extension zeroes the nonlocal normal derivative") {
  const auto g = unit(16, 2.0);
  Vector<double> u(16);
  for (Eigen::Index i = 0; i < 16; ++i) u[i] = std::sin(3 * g.nodes[i][0]);
  const Vector<double> ext = neumann_extension<double>(u, 0.4, g);
  CHECK(neumann_residual<double>(u, ext, 0.4, g, g.ext_nodes).maxCoeff() <= 1e-12);
}

TEST_CASE("energy report passes on a dissipative run") {
  const auto g = unit(16);
  SchemeConfig<double> c;
  c.T = 0.05;
  c.n_steps = 5;
  c.kernel = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  c.opL = OperatorL<double>::regional_fractional(c.kernel);
  c.mass_mode = MassMode::Conserved;
  c.inner.tol = 1e-11;
  Vector<double> u0(16);
  for (Eigen::Index i = 0; i < 16; ++i) u0[i] = 0.5 * std::cos(2 * pi_v<double>() * g.nodes[i][0]);
  c.mass = g.mean(u0);
  const auto tr = run<double>(u0, c);
  const auto rep = energy_estimate_check(tr, c);
  CHECK(rep.pass());
  CHECK(!rep.checks.empty());
}
