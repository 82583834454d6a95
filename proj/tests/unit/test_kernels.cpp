#include <doctest.h>

#include "nlch/kernels.hpp"

#include <cmath>

using namespace nlch;

namespace {
Grid<double> unit(int n, double ext = 0) { return build_grid<double>(1, Box<double>::interval(0, 1), n, ext); }
Point<double> pt(double x) {
  Point<double> p = Point<double>::Zero();
  p[0] = x;
  return p;
}
}  // namespace

TEST_CASE("power kernels scale like |x-y|^(-d-sq)") {
  const auto g = unit(16);
  for (double s : {0.3, 0.6})
    for (double q : {2.0, 4.0}) {
      const auto spec = KernelSpec<double>::power_regional(s, q);
      const double k1 = eval_kernel(spec, g, pt(0.4), pt(0.45));
      const double k2 = eval_kernel(spec, g, pt(0.4), pt(0.5));
      CHECK(k1 / k2 == doctest::Approx(std::pow(2.0, 1 + s * q)).epsilon(1e-10));
    }
}

TEST_CASE("pair weights are symmetric and nonnegative") {
  const auto g = unit(12, 4.0);
  for (const auto& spec : {KernelSpec<double>::power_global(0.4, 2), KernelSpec<double>::power_regional(0.4, 2),
                           KernelSpec<double>::sum_power(0.4, 0.2, 2), KernelSpec<double>::spectral_k4(0.4)}) {
    const auto km = assemble(spec, g);
    CHECK((km.pair_weights - km.pair_weights.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * km.pair_weights.cwiseAbs().maxCoeff());
    CHECK(km.pair_weights.minCoeff() >= 0);
    CHECK(km.pair_weights.diagonal().cwiseAbs().maxCoeff() == 0);
  }
}

TEST_CASE("dirichlet mode adds killing weights, regional mode does not") {
  const auto g = unit(12, 4.0);
  const auto kd = assemble(KernelSpec<double>::power_global(0.5, 2), g, KernelMode::Dirichlet);
  const auto kr = assemble(KernelSpec<double>::power_regional(0.5, 2), g, KernelMode::Regional);
  CHECK(kd.killing.minCoeff() > 0);
  CHECK(kr.killing.cwiseAbs().maxCoeff() == 0);
  // Killing is largest next to the boundary.
  CHECK(kd.killing[0] > kd.killing[6]);
}

TEST_CASE("validation rejects out-of-range parameters") {
  CHECK_THROWS_AS(validate(KernelSpec<double>::power_global(1.2, 2)), ConfigError);
  CHECK_THROWS_AS(validate(KernelSpec<double>::power_global(0.5, 1)), ConfigError);
  CHECK_THROWS_AS(validate(KernelSpec<double>::variable_order(0.6, 0.3, 2)), ConfigError);
  CHECK_NOTHROW(validate(KernelSpec<double>::neumann_k3(0.5)));
}

TEST_CASE("periodic lattice is incompatible with dirichlet mode") {
  CHECK(!mode_conflict(KernelSpec<double>::periodic_lattice(0.5, 2), KernelMode::Dirichlet).empty());
  CHECK(mode_conflict(KernelSpec<double>::power_regional(0.5, 2), KernelMode::Regional).empty());
}

TEST_CASE("singularity certificate holds for the power kernel") {
  const auto g = unit(32);
  const auto rep = check_singularity(KernelSpec<double>::power_regional(0.5, 2), g, 500);
  CHECK(rep.pass);
  CHECK(rep.pairs_checked > 0);
}

TEST_CASE("K3 reduces to the bare power kernel plus a positive exterior term") {
  const auto g = unit(16);
  const double s = 0.5;
  const double k3 = eval_kernel(KernelSpec<double>::neumann_k3(s), g, pt(0.3), pt(0.6));
  CHECK(k3 > std::pow(0.3, -1 - 2 * s) * KernelSpec<double>::neumann_k3(s).normalization);
}
