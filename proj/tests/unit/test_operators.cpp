#include <doctest.h>

#include "nlch/operators.hpp"

#include <random>

using namespace nlch;

namespace {
Grid<double> unit(int n, double ext = 0) { return build_grid<double>(1, Box<double>::interval(0, 1), n, ext); }
Vector<double> random_field(Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}
}  // namespace

TEST_CASE("quadratic energy matches the direct double sum") {
  const auto g = unit(10, 4.0);
  const auto km = assemble(KernelSpec<double>::power_global(0.4, 2), g, KernelMode::Dirichlet);
  const Vector<double> u = random_field(10, 1);
  double e = 0;
  for (Eigen::Index i = 0; i < 10; ++i) {
    for (Eigen::Index j = 0; j < 10; ++j) e += 0.5 * km.pair_weights(i, j) * (u[i] - u[j]) * (u[i] - u[j]);
    e += 0.5 * km.killing[i] * km.cell_weights[i] * u[i] * u[i];
  }
  CHECK(energy_F(km, PhiSpec<double>::power(2), u) == doctest::Approx(e).epsilon(1e-12));
}

TEST_CASE("Hessian agrees with a central difference of the gradient") {
  const auto g = unit(8);
  const auto km = assemble(KernelSpec<double>::power_regional(0.5, 4), g);
  const auto phi = PhiSpec<double>::power(4);
  const Vector<double> u = random_field(8, 2), v = random_field(8, 3);
  const double h = 1e-5;
  const Vector<double> fd = (grad_I(km, phi, Vector<double>(u + h * v)) - grad_I(km, phi, Vector<double>(u - h * v))) / (2 * h);
  const Vector<double> hv = hessian_I(km, phi, u) * v;
  CHECK((fd - hv).cwiseAbs().maxCoeff() <= 1e-6 * hv.cwiseAbs().maxCoeff());
}

TEST_CASE("q-energy is q-homogeneous and translation invariant for regional kernels") {
  const auto g = unit(8);
  const auto km = assemble(KernelSpec<double>::power_regional(0.5, 3), g);
  const auto phi = PhiSpec<double>::power(3);
  const Vector<double> u = random_field(8, 4);
  const double e = energy_F(km, phi, u);
  CHECK(energy_F(km, phi, Vector<double>(2 * u)) == doctest::Approx(8 * e));
  CHECK(energy_F(km, phi, Vector<double>(u.array() + 0.7)) == doctest::Approx(e));
}

TEST_CASE("solve_L inverts apply_L on mean-free data") {
  const auto g = unit(16);
  const auto km = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  for (const auto& L : {OperatorL<double>::regional_fractional(km), OperatorL<double>::laplacian_neumann(g)}) {
    CHECK(L.mass_split());
    Vector<double> u = random_field(16, 5);
    u.array() -= g.mean(u);
    const Vector<double> back = solve_L(L, apply_L(L, u));
    CHECK((back - u).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(apply_L(L, Vector<double>::Ones(16)).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("identity Riesz dual norm is the weighted L2 norm of the density") {
  const auto g = unit(16);
  const auto L = OperatorL<double>::identity_riesz(g);
  const Vector<double> u = random_field(16, 6);
  const Vector<double> f = g.weights.cwiseProduct(u);
  CHECK(dual_norm(L, f) == doctest::Approx(std::sqrt(g.weights.dot(u.cwiseAbs2()))));
}

TEST_CASE("dirichlet laplacian matches the continuous eigenvalue") {
  const int n = 64;
  const auto g = unit(n);
  const auto L = OperatorL<double>::laplacian_dirichlet(g);
  Vector<double> u(n);
  for (int i = 0; i < n; ++i) u[i] = std::sin(pi_v<double>() * g.nodes[i][0]);
  const double ray = u.dot(apply_L(L, u)) / g.weights.dot(u.cwiseAbs2());
  CHECK(ray == doctest::Approx(pi_v<double>() * pi_v<double>()).epsilon(1e-3));
}

TEST_CASE("mismatched kernel mode is rejected") {
  const auto g = unit(8, 4.0);
  const auto kd = assemble(KernelSpec<double>::power_global(0.5, 2), g, KernelMode::Dirichlet);
  const auto kr = assemble(KernelSpec<double>::power_regional(0.5, 2), g);
  CHECK_THROWS_AS(OperatorL<double>::regional_fractional(kd), ConfigError);
  CHECK_THROWS_AS(OperatorL<double>::fractional_dirichlet(kr), ConfigError);
}
