#include <doctest.h>

#include "nlch/potentials.hpp"

#include <cmath>

using namespace nlch;

TEST_CASE("quartic resolvent solves z + lam z^3 = r") {
  const auto f = Potential<double>::quartic();
  for (double lam : {1e-1, 1e-3})
    for (double r : {-3.0, -0.4, 0.0, 0.7, 2.5}) {
      const double z = resolvent(f, lam, r);
      CHECK(z + lam * z * z * z == doctest::Approx(r).epsilon(1e-12));
      CHECK(yosida(f, lam, r) == doctest::Approx((r - z) / lam).epsilon(1e-10));
    }
}

TEST_CASE("obstacle resolvent is the projection onto [-1, 1]") {
  const auto f = Potential<double>::obstacle();
  for (double r : {-3.0, -1.0, -0.2, 0.9, 1.7}) {
    CHECK(resolvent(f, 0.1, r) == doctest::Approx(std::clamp(r, -1.0, 1.0)));
    const double d = std::max(0.0, std::abs(r) - 1);
    CHECK(moreau(f, 0.1, r) == doctest::Approx(d * d / 0.2));
  }
}

TEST_CASE("logarithmic resolvent is the fixed point z = tanh((r - z) / (lam theta))") {
  const double theta = 0.7;
  const auto f = Potential<double>::logarithmic(theta, 1.2);
  for (double lam : {1e-1, 5e-2})
    for (double r : {-1.5, -0.99, 0.0, 0.5, 1.3}) {
      const double z = resolvent(f, lam, r);
      CHECK(std::abs(z) < 1);
      CHECK(z == doctest::Approx(std::tanh((r - z) / (lam * theta))).epsilon(1e-12));
    }
}

TEST_CASE("linear potential has closed-form prox") {
  const auto f = Potential<double>::linear(2.0);
  CHECK(resolvent(f, 0.5, 3.0) == doctest::Approx(1.5));
  CHECK(moreau(f, 0.5, 3.0) == doctest::Approx(2.0 * 1.5 * 1.5 / 2 + 1.5 * 1.5 / 1.0));
}

TEST_CASE("envelope is below Gamma and increases as lambda shrinks") {
  const auto f = Potential<double>::quartic();
  for (double r : {-2.0, 0.3, 1.5}) {
    const double g = r * r * r * r / 4;
    CHECK(moreau(f, 1e-1, r) <= g);
    CHECK(moreau(f, 1e-1, r) <= moreau(f, 1e-2, r));
  }
}

TEST_CASE("library invariants pass for the built-in potentials") {
  for (const auto& f : {Potential<double>::quartic(), Potential<double>::obstacle(), Potential<double>::logarithmic(1, 1.5)})
    for (const auto& c : prox_invariants(f, 1e-2)) CHECK_MESSAGE(c.pass, c.name);
}

TEST_CASE("subdifferential of the obstacle at the boundary is a half line") {
  const auto f = Potential<double>::obstacle();
  CHECK(in_subdifferential(f, 1.0, 5.0, 1e-12));
  CHECK(!in_subdifferential(f, 1.0, -5.0, 1e-12));
  CHECK(in_subdifferential(f, 0.0, 0.0, 1e-12));
}
