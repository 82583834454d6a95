#include <doctest.h>

#include "nlch/grid.hpp"

using namespace nlch;

TEST_CASE("interval grid: midpoints and weights") {
  const auto g = build_grid<double>(1, Box<double>::interval(-1, 1), 8);
  REQUIRE(g.size() == 8);
  CHECK(g.weights.sum() == doctest::Approx(2.0));
  CHECK(g.h() == doctest::Approx(0.25));
  for (Eigen::Index i = 0; i < g.size(); ++i) CHECK(g.nodes[i][0] == doctest::Approx(-1 + 0.25 * (double(i) + 0.5)));
  CHECK(g.single_box());
  CHECK(g.diameter() == doctest::Approx(2.0));
}

TEST_CASE("rectangle grid: volume and mean") {
  const auto g = build_grid<double>(2, Box<double>::rectangle(0, 2, 0, 1), 6);
  CHECK(g.size() == 36);
  CHECK(g.volume() == doctest::Approx(2.0));
  Vector<double> u(g.size());
  for (Eigen::Index i = 0; i < g.size(); ++i) u[i] = g.nodes[i][0];
  CHECK(g.mean(u) == doctest::Approx(1.0));
}

TEST_CASE("exterior nodes lie outside and carry positive weight") {
  const auto g = build_grid<double>(1, Box<double>::interval(0, 1), 8, 2.0);
  REQUIRE(!g.ext_nodes.empty());
  for (std::size_t k = 0; k < g.ext_nodes.size(); ++k) {
    CHECK(!g.contains(g.ext_nodes[k]));
    CHECK(g.ext_weights[Eigen::Index(k)] > 0);
  }
}

TEST_CASE("union grid keeps each component") {
  const auto g = build_union_grid<double>(1, {Box<double>::interval(0, 1), Box<double>::interval(2, 3)}, 4);
  CHECK(g.size() == 8);
  CHECK(!g.single_box());
  CHECK(g.weights.sum() == doctest::Approx(2.0));
  CHECK(g.component_of.front() == 0);
  CHECK(g.component_of.back() == 1);
}

TEST_CASE("refinement and pairwise distance") {
  const auto g = build_grid<double>(1, Box<double>::interval(0, 1), 5);
  const auto r = refined(g, 2);
  CHECK(r.size() == 10);
  CHECK(r.weights.sum() == doctest::Approx(1.0));
  CHECK(pairwise_distance(g, 0, 4) == doctest::Approx(0.8));
}
