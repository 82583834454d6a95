#include <doctest.h>

#include "nlch/scheme.hpp"

#include <cmath>

using namespace nlch;

namespace {
Grid<double> unit(int n, double ext = 0) { return build_grid<double>(1, Box<double>::interval(0, 1), n, ext); }

SchemeConfig<double> regional_config(const Grid<double>& g, double T, int N) {
  SchemeConfig<double> c;
  c.T = T;
  c.n_steps = N;
  c.lambda = 1e-2;
  c.kernel = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  c.opL = OperatorL<double>::regional_fractional(c.kernel);
  c.mass_mode = MassMode::Conserved;
  c.inner.tol = 1e-11;
  return c;
}

Vector<double> cosine(const Grid<double>& g, double mean, double amp) {
  Vector<double> u(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) u[i] = mean + amp * std::cos(2 * pi_v<double>() * g.nodes[i][0]);
  return u;
}
}  // namespace

TEST_CASE("zero potential with identity Riesz is the heat step of the kernel") {
  // Two-point grid: the step reduces to a 2x2 linear system solvable by hand.
  const auto g = unit(2);
  SchemeConfig<double> c;
  c.T = 0.1;
  c.n_steps = 1;
  c.kernel = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  c.opL = OperatorL<double>::identity_riesz(g);
  c.potential = Potential<double>::zero();
  c.mass_mode = MassMode::Free;
  c.inner.tol = 1e-13;
  Vector<double> u0(2);
  u0 << 1.0, -0.5;
  const auto tr = run<double>(u0, c);
  REQUIRE(tr.complete);
  const double a = c.kernel.pair_weights(0, 1) + c.kernel.pair_weights(1, 0), w = g.weights[0];
  // (w + tau a) u0' - tau a u1' = w g0, symmetric: the difference decays by w / (w + 2 tau a).
  const double diff = (u0[0] - u0[1]) * w / (w + 2 * c.T * a);
  CHECK(tr.u[1][0] - tr.u[1][1] == doctest::Approx(diff).epsilon(1e-10));
  CHECK(tr.u[1][0] + tr.u[1][1] == doctest::Approx(u0.sum()).epsilon(1e-10));
}

TEST_CASE("conserved run keeps the mass and decreases the energy") {
  const auto g = unit(24);
  auto c = regional_config(g, 0.1, 10);
  const Vector<double> u0 = cosine(g, 0.2, 0.5);
  c.mass = g.mean(u0);
  const auto tr = run<double>(u0, c);
  REQUIRE(tr.complete);
  CHECK(tr.steps() == 10);
  CHECK(tr.tau == doctest::Approx(0.01));
  for (std::size_t n = 0; n < tr.u.size(); ++n) CHECK(g.mean(tr.u[n]) == doctest::Approx(0.2).epsilon(1e-12));
  for (std::size_t n = 2; n < tr.energies.size(); ++n) CHECK(tr.energies[n] <= tr.energies[n - 1] + 1e-10);
}

TEST_CASE("step minimizer satisfies the Euler-Lagrange system") {
  const auto g = unit(16);
  auto c = regional_config(g, 0.05, 5);
  const Vector<double> u0 = cosine(g, 0.0, 0.6);
  c.mass = 0;
  const auto tr = run<double>(u0, c);
  REQUIRE(tr.complete);
  for (std::size_t n = 1; n < tr.u.size(); ++n) CHECK(tr.el_residuals[n] <= 1e-8);
}

TEST_CASE("obstacle run stays inside [-1, 1] up to the regularization") {
  const auto g = unit(16);
  auto c = regional_config(g, 0.05, 5);
  c.potential = Potential<double>::obstacle();
  c.lambda = 1e-4;
  const Vector<double> u0 = cosine(g, 0.0, 0.95);
  c.mass = 0;
  const auto tr = run<double>(u0, c);
  REQUIRE(tr.complete);
  for (const auto& u : tr.u) CHECK(u.cwiseAbs().maxCoeff() <= 1.05);
}

TEST_CASE("invalid scheme settings are rejected") {
  const auto g = unit(8);
  auto c = regional_config(g, 0.1, 0);
  CHECK_THROWS(validate(c));
  c = regional_config(g, -1, 4);
  CHECK_THROWS(validate(c));
}
